#include "leaffine/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "leaffine/error.hpp"

namespace leaffine {
namespace {

using Rgb = std::array<double, 3>;

enum class Lesion { none, disc, ring, blotch, halo, speckle, mosaic };

struct Motif {
  const char* name;
  Rgb leaf;
  double aspect;
  Lesion kind;
  Rgb lesion;
  Rgb accent;
  int count_lo, count_hi;
  double radius_lo, radius_hi;  // fraction of the image side
  Rgb vein;
  double vein_strength;
};

// clang-format off
constexpr std::array<Motif, kSyntheticMotifs> kMotifs{{
  {"Pepper_bell_Bacterial_spot", {0.22, 0.50, 0.18}, 0.55, Lesion::disc,    {0.30, 0.18, 0.08}, {0.70, 0.65, 0.20}, 10, 18, 0.018, 0.030, {0.35, 0.60, 0.30}, 0.30},
  {"Pepper_bell_healthy",        {0.12, 0.42, 0.12}, 0.50, Lesion::none,    {0.00, 0.00, 0.00}, {0.00, 0.00, 0.00},  0,  0, 0.000, 0.000, {0.30, 0.55, 0.25}, 0.35},
  {"Potato_Early_blight",        {0.30, 0.52, 0.20}, 0.70, Lesion::ring,    {0.35, 0.22, 0.10}, {0.55, 0.42, 0.20},  3,  6, 0.050, 0.080, {0.40, 0.60, 0.28}, 0.30},
  {"Potato_Late_blight",         {0.28, 0.48, 0.18}, 0.70, Lesion::blotch,  {0.15, 0.14, 0.08}, {0.55, 0.60, 0.35},  2,  3, 0.090, 0.140, {0.38, 0.56, 0.26}, 0.25},
  {"Potato_healthy",             {0.36, 0.62, 0.24}, 0.72, Lesion::none,    {0.00, 0.00, 0.00}, {0.00, 0.00, 0.00},  0,  0, 0.000, 0.000, {0.50, 0.72, 0.40}, 0.45},
  {"Tomato_Bacterial_spot",      {0.25, 0.55, 0.22}, 0.62, Lesion::speckle, {0.08, 0.06, 0.04}, {0.00, 0.00, 0.00}, 25, 40, 0.008, 0.014, {0.38, 0.62, 0.30}, 0.30},
  {"Tomato_Early_blight",        {0.26, 0.50, 0.20}, 0.62, Lesion::halo,    {0.32, 0.20, 0.08}, {0.82, 0.78, 0.22},  4,  7, 0.040, 0.065, {0.38, 0.60, 0.28}, 0.30},
  {"Tomato_Late_blight",         {0.30, 0.50, 0.24}, 0.62, Lesion::blotch,  {0.42, 0.38, 0.30}, {0.75, 0.75, 0.55},  3,  5, 0.060, 0.100, {0.40, 0.60, 0.32}, 0.30},
  {"Tomato_Leaf_Mold",           {0.28, 0.52, 0.20}, 0.62, Lesion::disc,    {0.78, 0.74, 0.25}, {0.00, 0.00, 0.00},  5,  9, 0.040, 0.070, {0.40, 0.62, 0.30}, 0.30},
  {"Tomato_Septoria_leaf_spot",  {0.26, 0.52, 0.20}, 0.62, Lesion::ring,    {0.62, 0.60, 0.54}, {0.25, 0.15, 0.08}, 10, 18, 0.020, 0.035, {0.40, 0.62, 0.30}, 0.30},
  {"Tomato_Spider_mites_Two_spotted_spider_mite",
                                 {0.34, 0.55, 0.22}, 0.62, Lesion::speckle, {0.82, 0.80, 0.45}, {0.00, 0.00, 0.00}, 60, 100, 0.005, 0.009, {0.45, 0.64, 0.32}, 0.25},
  {"Tomato_Target_Spot",         {0.27, 0.50, 0.20}, 0.62, Lesion::ring,    {0.40, 0.28, 0.15}, {0.60, 0.50, 0.30},  2,  4, 0.070, 0.110, {0.40, 0.60, 0.30}, 0.30},
  {"Tomato_Tomato_YellowLeaf_Curl_Virus",
                                 {0.55, 0.62, 0.20}, 0.40, Lesion::mosaic,  {0.00, 0.00, 0.00}, {0.75, 0.75, 0.25},  0,  0, 0.000, 0.000, {0.60, 0.66, 0.30}, 0.25},
  {"Tomato_Tomato_mosaic_virus", {0.22, 0.50, 0.18}, 0.62, Lesion::mosaic,  {0.00, 0.00, 0.00}, {0.45, 0.70, 0.30},  0,  0, 0.000, 0.000, {0.35, 0.60, 0.28}, 0.30},
  {"Tomato_healthy",             {0.20, 0.50, 0.20}, 0.62, Lesion::none,    {0.00, 0.00, 0.00}, {0.00, 0.00, 0.00},  0,  0, 0.000, 0.000, {0.45, 0.70, 0.35}, 0.55},
  {"Corn_Common_rust",           {0.30, 0.55, 0.20}, 0.25, Lesion::speckle, {0.70, 0.35, 0.10}, {0.00, 0.00, 0.00}, 20, 35, 0.010, 0.016, {0.42, 0.62, 0.30}, 0.30},
}};

// Backdrop tones, one per motif; neighbours in the table differ strongly.
constexpr std::array<Rgb, kSyntheticMotifs> kGrounds{{
  {0.45, 0.35, 0.25}, {0.80, 0.78, 0.72}, {0.35, 0.40, 0.55}, {0.62, 0.50, 0.30},
  {0.30, 0.30, 0.30}, {0.72, 0.60, 0.58}, {0.50, 0.58, 0.62}, {0.88, 0.84, 0.60},
  {0.55, 0.42, 0.40}, {0.40, 0.45, 0.38}, {0.70, 0.70, 0.78}, {0.60, 0.36, 0.22},
  {0.25, 0.28, 0.40}, {0.78, 0.66, 0.45}, {0.48, 0.48, 0.48}, {0.66, 0.56, 0.70},
}};
// clang-format on

struct Spot {
  double x, y, r, p1, p2;
};

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

}  // namespace

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (per_class < 4) throw ConfigError("synthetic dataset needs at least 4 images per class");
  if (image_size < 8) throw ConfigError("synthetic image size must be at least 8");
  if (first_motif + classes > kSyntheticMotifs) {
    throw ConfigError("synthetic motifs " + std::to_string(first_motif) + ".." + std::to_string(first_motif + classes - 1) +
                      " exceed the table of " + std::to_string(kSyntheticMotifs));
  }
}

const std::vector<std::string>& synthetic_motif_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& m : kMotifs) out.emplace_back(m.name);
    return out;
  }();
  return names;
}

Image render_synthetic_leaf(std::size_t motif, std::size_t index, std::size_t image_size, std::uint64_t seed) {
  const Motif& m = kMotifs.at(motif);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(motif), static_cast<std::uint32_t>(index), 0x4c454146u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double s = static_cast<double>(image_size);
  constexpr double kPi = std::numbers::pi;

  // Background: the motif's ground tone, jittered per image.
  Rgb bg = kGrounds[motif % kGrounds.size()];
  for (auto& c : bg) c += uni(-0.04, 0.04);
  const double grad_angle = uni(0.0, 2.0 * kPi), grad_amp = uni(0.0, 0.12);

  const double cx = s / 2.0 + uni(-0.06, 0.06) * s, cy = s / 2.0 + uni(-0.06, 0.06) * s;
  const double a = s * uni(0.36, 0.44);
  const double b = a * m.aspect * uni(0.9, 1.1);
  const double phi = uni(0.0, kPi);
  const double cp = std::cos(phi), sp = std::sin(phi);
  Rgb leaf = m.leaf;
  const double bright = uni(0.9, 1.1);
  for (auto& c : leaf) c = (c + 0.03 * gauss(rng)) * bright;
  const double wobble_k = std::floor(uni(5.0, 9.0)), wobble_p = uni(0.0, 2.0 * kPi);

  std::vector<Spot> spots;
  if (m.count_hi > 0) {
    const int n = std::uniform_int_distribution<int>(m.count_lo, m.count_hi)(rng);
    for (int i = 0; i < n; ++i) {
      const double rr = std::sqrt(unit(rng)) * 0.8, t = uni(0.0, 2.0 * kPi);
      const double lu = rr * std::cos(t) * a, lv = rr * std::sin(t) * b;
      spots.push_back({cx + lu * cp - lv * sp, cy + lu * sp + lv * cp, uni(m.radius_lo, m.radius_hi) * s,
                       uni(0.0, 2.0 * kPi), uni(0.0, 2.0 * kPi)});
    }
  }
  const double f1 = uni(2.5, 4.5) * 2.0 * kPi / s, f2 = uni(2.5, 4.5) * 2.0 * kPi / s;
  const double mp1 = uni(0.0, 2.0 * kPi), mp2 = uni(0.0, 2.0 * kPi);

  const std::size_t plane = image_size * image_size;
  Image img(Shape{3, image_size, image_size});
  for (std::size_t yi = 0; yi < image_size; ++yi) {
    for (std::size_t xi = 0; xi < image_size; ++xi) {
      const double x = static_cast<double>(xi) + 0.5, y = static_cast<double>(yi) + 0.5;
      const double dx = x - cx, dy = y - cy;
      const double lu = (dx * cp + dy * sp) / a, lv = (-dx * sp + dy * cp) / b;
      const double rho = std::sqrt(lu * lu + lv * lv);
      const double edge = 1.0 + 0.04 * std::sin(wobble_k * std::atan2(lv, lu) + wobble_p);
      Rgb col;
      if (rho > edge) {
        const double g = grad_amp * ((x / s - 0.5) * std::cos(grad_angle) + (y / s - 0.5) * std::sin(grad_angle));
        col = {bg[0] + g, bg[1] + g, bg[2] + g};
      } else {
        col = leaf;
        const double midrib = std::abs(lv) * b;
        const double lateral = std::abs(std::remainder(lu * 5.0 - std::abs(lv) * 3.0, 1.0)) * a / 5.0;
        if (midrib < 0.5 + s * 0.01) {
          col = mix(col, m.vein, m.vein_strength);
        } else if (lateral < 0.4 + s * 0.006) {
          col = mix(col, m.vein, m.vein_strength * 0.6);
        }
        const double shade = 1.0 - 0.15 * rho * rho;
        for (auto& c : col) c *= shade;
        if (m.kind == Lesion::mosaic) {
          const double v = std::sin(f1 * x + mp1) * std::sin(f2 * y + mp2);
          if (v > 0.1) col = mix(col, m.accent, std::min(1.0, (v - 0.1) * 3.0) * 0.7);
        }
        for (const Spot& spot : spots) {
          const double ddx = x - spot.x, ddy = y - spot.y;
          const double d = std::sqrt(ddx * ddx + ddy * ddy);
          if (d > spot.r * 1.5 + 2.0) continue;
          const double r = spot.r;
          switch (m.kind) {
            case Lesion::disc:
            case Lesion::speckle:
              if (d < r + 0.5) col = mix(col, m.lesion, std::clamp(r + 0.5 - d, 0.0, 1.0));
              break;
            case Lesion::ring:
              if (d < r + 0.5) {
                const int band = static_cast<int>(d / (r / 3.0));
                col = mix(col, band % 2 == 0 ? m.lesion : m.accent, std::clamp(r + 0.5 - d, 0.0, 1.0));
              }
              break;
            case Lesion::blotch: {
              const double th = std::atan2(ddy, ddx);
              const double re = r * (1.0 + 0.3 * std::sin(3.0 * th + spot.p1) + 0.15 * std::sin(5.0 * th + spot.p2));
              if (d < re + 0.5) {
                col = mix(col, m.lesion, std::clamp(re + 0.5 - d, 0.0, 1.0));
              } else if (d < re + 2.0) {
                col = mix(col, m.accent, 0.5);
              }
              break;
            }
            case Lesion::halo:
              if (d < 0.5 * r) {
                col = m.lesion;
              } else if (d < r) {
                col = mix(col, m.accent, 0.8 * (1.0 - (d - 0.5 * r) / (0.5 * r)));
              }
              break;
            case Lesion::none:
            case Lesion::mosaic:
              break;
          }
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        img[c * plane + yi * image_size + xi] = static_cast<float>(std::clamp(col[c] + 0.025 * gauss(rng), 0.0, 1.0));
      }
    }
  }
  return img;
}

DatasetManifest gen_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  const auto& names = synthetic_motif_names();
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const std::size_t motif = spec.first_motif + k;
    const auto dir = out_dir / names[motif];
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "_%04zu.ppm", i);
      save_ppm(render_synthetic_leaf(motif, i, spec.image_size, spec.seed), dir / (names[motif] + file));
    }
  }
  return scan_dataset(out_dir);
}

}  // namespace leaffine
