#include "leaffine/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace leaffine {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         to_string(s));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& c, T* col) {
  const std::size_t plane = c.out_plane();
  for (std::size_t ch = 0; ch < c.cin; ++ch) {
    const T* xc = x + ch * c.h * c.w;
    for (std::size_t ki = 0; ki < c.kh; ++ki) {
      for (std::size_t kj = 0; kj < c.kw; ++kj) {
        T* row = col + ((ch * c.kh + ki) * c.kw + kj) * plane;
        for (std::size_t oh = 0; oh < c.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * c.stride + ki) - static_cast<std::ptrdiff_t>(c.pad);
          T* dst = row + oh * c.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(c.h)) {
            std::fill(dst, dst + c.wo, T(0));
            continue;
          }
          const T* src = xc + ih * c.w;
          for (std::size_t ow = 0; ow < c.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * c.stride + kj) - static_cast<std::ptrdiff_t>(c.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(c.w)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& c, T* x) {
  const std::size_t plane = c.out_plane();
  for (std::size_t ch = 0; ch < c.cin; ++ch) {
    T* xc = x + ch * c.h * c.w;
    for (std::size_t ki = 0; ki < c.kh; ++ki) {
      for (std::size_t kj = 0; kj < c.kw; ++kj) {
        const T* row = col + ((ch * c.kh + ki) * c.kw + kj) * plane;
        for (std::size_t oh = 0; oh < c.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * c.stride + ki) - static_cast<std::ptrdiff_t>(c.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(c.h)) continue;
          const T* src = row + oh * c.wo;
          T* dst = xc + ih * c.w;
          for (std::size_t ow = 0; ow < c.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * c.stride + kj) - static_cast<std::ptrdiff_t>(c.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(c.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad,
                          const char* what) {
  if (stride == 0) throw DimensionError(std::string(what) + ": stride must be positive");
  if (in + 2 * pad < window) {
    throw DimensionError(std::string(what) + ": window " + std::to_string(window) +
                         " exceeds padded extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - window) / stride + 1;
}

}  // namespace

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, std::optional<Var> bias, Conv2dOptions opt) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(weight);
  require_rank(xs, 4, "conv2d input");
  require_rank(ws, 4, "conv2d weight");
  if (xs[1] != ws[1]) {
    throw DimensionError("conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                         std::to_string(ws[1]));
  }
  if (bias && g.value(*bias).size() != ws[0]) {
    throw DimensionError("conv2d: bias has " + std::to_string(g.value(*bias).size()) +
                         " elements for " + std::to_string(ws[0]) + " output channels");
  }
  ConvGeometry c{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], opt.stride, opt.pad, 0, 0};
  c.ho = pooled_extent(c.h, c.kh, c.stride, c.pad, "conv2d");
  c.wo = pooled_extent(c.w, c.kw, c.stride, c.pad, "conv2d");

  const std::size_t k = c.patch();
  const std::size_t plane = c.out_plane();
  Tensor<T> out(Shape{c.n, c.cout, c.ho, c.wo});
  const T* xd = g.value(x).data().data();
  ConstMatrixMap<T> wm(g.value(weight).data().data(), c.cout, k);
  std::vector<T> col(c.pointwise() ? 0 : k * plane);
  for (std::size_t n = 0; n < c.n; ++n) {
    const T* xn = xd + n * c.cin * c.h * c.w;
    const T* cp = xn;
    if (!c.pointwise()) {
      im2col(xn, c, col.data());
      cp = col.data();
    }
    MatrixMap<T> on(out.data().data() + n * c.cout * plane, c.cout, plane);
    on.noalias() = wm * ConstMatrixMap<T>(cp, k, plane);
    if (bias) {
      const auto& bv = g.value(*bias);
      for (std::size_t o = 0; o < c.cout; ++o) on.row(o).array() += bv[o];
    }
  }

  auto backward = [x, weight, bias, c](Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    T* gw = gr.grad_sink(weight);
    T* gb = bias ? gr.grad_sink(*bias) : nullptr;
    const std::size_t k = c.patch();
    const std::size_t plane = c.out_plane();
    const T* xd = gr.value(x).data().data();
    ConstMatrixMap<T> wm(gr.value(weight).data().data(), c.cout, k);
    std::vector<T> col(c.pointwise() || !gw ? 0 : k * plane);
    std::vector<T> dcol(c.pointwise() || !gx ? 0 : k * plane);
    for (std::size_t n = 0; n < c.n; ++n) {
      ConstMatrixMap<T> dyn(dy.data() + n * c.cout * plane, c.cout, plane);
      const T* xn = xd + n * c.cin * c.h * c.w;
      if (gw) {
        const T* cp = xn;
        if (!c.pointwise()) {
          im2col(xn, c, col.data());
          cp = col.data();
        }
        MatrixMap<T>(gw, c.cout, k).noalias() += dyn * ConstMatrixMap<T>(cp, k, plane).transpose();
      }
      if (gb) {
        for (std::size_t o = 0; o < c.cout; ++o) gb[o] += dyn.row(o).sum();
      }
      if (gx) {
        T* gxn = gx + n * c.cin * c.h * c.w;
        if (c.pointwise()) {
          MatrixMap<T>(gxn, k, plane).noalias() += wm.transpose() * dyn;
        } else {
          MatrixMap<T>(dcol.data(), k, plane).noalias() = wm.transpose() * dyn;
          col2im_add(dcol.data(), c, gxn);
        }
      }
    }
  };
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return g.record(OpKind::conv2d, std::move(out), std::move(inputs), std::move(backward));
}

namespace {

template <typename T>
void check_norm_operands(const Shape& xs, std::size_t gamma, std::size_t beta, std::size_t mean,
                         std::size_t var) {
  require_rank(xs, 4, "batch_norm2d input");
  const std::size_t ch = xs[1];
  if (gamma != ch || beta != ch || mean != ch || var != ch) {
    throw DimensionError("batch_norm2d: channel count mismatch (input " + std::to_string(ch) +
                         ", gamma " + std::to_string(gamma) + ", beta " + std::to_string(beta) +
                         ", running mean " + std::to_string(mean) + ", running var " +
                         std::to_string(var) + ")");
  }
}

template <typename T>
Var norm_with_fixed_stats(Graph<T>& g, Var x, Var gamma, Var beta, const RunningStats<T>& stats, double eps) {
  const Shape xs = g.shape(x);
  const std::size_t n = xs[0], ch = xs[1], plane = xs[2] * xs[3];
  const auto& xv = g.value(x);
  const auto& gv = g.value(gamma);
  const auto& bv = g.value(beta);
  std::vector<T> scale(ch), mean(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    scale[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + eps));
    mean[c] = stats.mean[c];
  }
  Tensor<T> out(xs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (i * ch + c) * plane;
      const T a = gv[c] * scale[c];
      for (std::size_t p = 0; p < plane; ++p) out[off + p] = a * (xv[off + p] - mean[c]) + bv[c];
    }
  }
  auto backward = [x, gamma, beta, scale = std::move(scale), mean = std::move(mean), n, ch, plane](
                      Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    T* gg = gr.grad_sink(gamma);
    T* gb = gr.grad_sink(beta);
    const auto& xv = gr.value(x);
    const auto& gv = gr.value(gamma);
    for (std::size_t c = 0; c < ch; ++c) {
      double sdy = 0.0, sdyx = 0.0;
      const T a = gv[c] * scale[c];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * ch + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          sdy += dy[off + p];
          sdyx += static_cast<double>(dy[off + p]) * (xv[off + p] - mean[c]) * scale[c];
          if (gx) gx[off + p] += a * dy[off + p];
        }
      }
      if (gg) gg[c] += static_cast<T>(sdyx);
      if (gb) gb[c] += static_cast<T>(sdy);
    }
  };
  return g.record(OpKind::batch_norm2d, std::move(out), {x, gamma, beta}, std::move(backward));
}

}  // namespace

template <typename T>
Var batch_norm2d(Graph<T>& g, Var x, Var gamma, Var beta, RunningStats<T>& stats, const BatchNormOptions& opt) {
  const Shape xs = g.shape(x);
  check_norm_operands<T>(xs, g.value(gamma).size(), g.value(beta).size(), stats.mean.size(), stats.var.size());
  if (!(opt.eps > 0.0)) throw ConfigError("batch_norm2d: eps must be positive");
  if (opt.mode == NormMode::inference) return norm_with_fixed_stats(g, x, gamma, beta, stats, opt.eps);

  const std::size_t n = xs[0], ch = xs[1], plane = xs[2] * xs[3];
  const std::size_t count = n * plane;
  const auto& xv = g.value(x);
  const auto& gv = g.value(gamma);
  const auto& bv = g.value(beta);

  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  std::vector<T> inv_std(ch);
  Tensor<T> out(xs);
  for (std::size_t c = 0; c < ch; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = xv.data().data() + (i * ch + c) * plane;
      for (std::size_t q = 0; q < plane; ++q) s += p[q];
    }
    const double mean = s / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = xv.data().data() + (i * ch + c) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const double d = p[q] - mean;
        ss += d * d;
      }
    }
    const double var = ss / static_cast<double>(count);
    const double inv = 1.0 / std::sqrt(var + opt.eps);
    inv_std[c] = static_cast<T>(inv);
    const T m = static_cast<T>(mean);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * ch + c) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const T h = (xv[off + q] - m) * inv_std[c];
        (*xhat)[off + q] = h;
        out[off + q] = gv[c] * h + bv[c];
      }
    }
    const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
    stats.mean[c] = static_cast<T>((1.0 - opt.momentum) * stats.mean[c] + opt.momentum * mean);
    stats.var[c] = static_cast<T>((1.0 - opt.momentum) * stats.var[c] + opt.momentum * unbiased);
  }

  auto backward = [x, gamma, beta, xhat, inv_std = std::move(inv_std), n, ch, plane](
                      Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    T* gg = gr.grad_sink(gamma);
    T* gb = gr.grad_sink(beta);
    const auto& gv = gr.value(gamma);
    const double count = static_cast<double>(n * plane);
    for (std::size_t c = 0; c < ch; ++c) {
      double sdy = 0.0, sdyx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * ch + c) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          sdy += dy[off + q];
          sdyx += static_cast<double>(dy[off + q]) * (*xhat)[off + q];
        }
      }
      if (gg) gg[c] += static_cast<T>(sdyx);
      if (gb) gb[c] += static_cast<T>(sdy);
      if (gx) {
        const T a = static_cast<T>(gv[c] * inv_std[c] / count);
        const T mdy = static_cast<T>(sdy);
        const T mdyx = static_cast<T>(sdyx);
        const T cnt = static_cast<T>(count);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t off = (i * ch + c) * plane;
          for (std::size_t q = 0; q < plane; ++q) {
            gx[off + q] += a * (cnt * dy[off + q] - mdy - (*xhat)[off + q] * mdyx);
          }
        }
      }
    }
  };
  return g.record(OpKind::batch_norm2d, std::move(out), {x, gamma, beta}, std::move(backward));
}

template <typename T>
Var batch_norm2d_inference(Graph<T>& g, Var x, Var gamma, Var beta, const RunningStats<T>& stats, double eps) {
  check_norm_operands<T>(g.shape(x), g.value(gamma).size(), g.value(beta).size(), stats.mean.size(),
                         stats.var.size());
  if (!(eps > 0.0)) throw ConfigError("batch_norm2d: eps must be positive");
  return norm_with_fixed_stats(g, x, gamma, beta, stats, eps);
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto backward = [x](Graph<T>& gr, const Tensor<T>& y, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > T(0)) gx[i] += dy[i];
    }
  };
  return g.record(OpKind::relu, std::move(out), {x}, std::move(backward));
}

template <typename T>
Var max_pool2d(Graph<T>& g, Var x, PoolOptions opt) {
  const Shape xs = g.shape(x);
  require_rank(xs, 4, "max_pool2d input");
  if (opt.window == 0) throw DimensionError("max_pool2d: window must be positive");
  const std::size_t ho = pooled_extent(xs[2], opt.window, opt.stride, opt.pad, "max_pool2d");
  const std::size_t wo = pooled_extent(xs[3], opt.window, opt.stride, opt.pad, "max_pool2d");
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t h = xs[2], w = xs[3];
  const auto& xv = g.value(x);
  Tensor<T> out(Shape{xs[0], xs[1], ho, wo});
  std::vector<std::uint32_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_at = 0;
        bool found = false;
        for (std::size_t ki = 0; ki < opt.window; ++ki) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * opt.stride + ki) - static_cast<std::ptrdiff_t>(opt.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < opt.window; ++kj) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * opt.stride + kj) - static_cast<std::ptrdiff_t>(opt.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t at = (p * h + ih) * w + iw;
            if (!found || xv[at] > best) {
              best = xv[at];
              best_at = at;
              found = true;
            }
          }
        }
        const std::size_t o = (p * ho + oh) * wo + ow;
        out[o] = best;
        argmax[o] = static_cast<std::uint32_t>(best_at);
      }
    }
  }
  auto backward = [x, argmax = std::move(argmax)](Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += dy[o];
  };
  return g.record(OpKind::max_pool2d, std::move(out), {x}, std::move(backward));
}

template <typename T>
Var global_avg_pool(Graph<T>& g, Var x) {
  const Shape xs = g.shape(x);
  require_rank(xs, 4, "global_avg_pool input");
  const std::size_t rows = xs[0] * xs[1];
  const std::size_t plane = xs[2] * xs[3];
  const auto& xv = g.value(x);
  Tensor<T> out(Shape{xs[0], xs[1]});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += xv[r * plane + p];
    out[r] = static_cast<T>(s / static_cast<double>(plane));
  }
  auto backward = [x, rows, plane](Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t r = 0; r < rows; ++r) {
      const T d = dy[r] * inv;
      for (std::size_t p = 0; p < plane; ++p) gx[r * plane + p] += d;
    }
  };
  return g.record(OpKind::global_avg_pool, std::move(out), {x}, std::move(backward));
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(weight);
  require_rank(xs, 2, "linear input");
  require_rank(ws, 2, "linear weight");
  if (xs[1] != ws[1]) {
    throw DimensionError("linear: input has " + std::to_string(xs[1]) + " features, weight expects " +
                         std::to_string(ws[1]));
  }
  if (g.value(bias).size() != ws[0]) throw DimensionError("linear: bias size must equal output width");
  const std::size_t n = xs[0], f = xs[1], k = ws[0];
  const auto& xv = g.value(x);
  const auto& wv = g.value(weight);
  const auto& bv = g.value(bias);
  // Plain loops keep each row's arithmetic independent of the batch size.
  Tensor<T> out(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < k; ++o) {
      T s = 0;
      for (std::size_t j = 0; j < f; ++j) s += xv[i * f + j] * wv[o * f + j];
      out[i * k + o] = s + bv[o];
    }
  }
  auto backward = [x, weight, bias, n, f, k](Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    T* gw = gr.grad_sink(weight);
    T* gb = gr.grad_sink(bias);
    const auto& xv = gr.value(x);
    const auto& wv = gr.value(weight);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < k; ++o) {
        const T d = dy[i * k + o];
        if (gb) gb[o] += d;
        for (std::size_t j = 0; j < f; ++j) {
          if (gx) gx[i * f + j] += d * wv[o * f + j];
          if (gw) gw[o * f + j] += d * xv[i * f + j];
        }
      }
    }
  };
  return g.record(OpKind::linear, std::move(out), {x, weight, bias}, std::move(backward));
}

template <typename T>
Var residual_add(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("residual_add: shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()) +
                         " differ");
  }
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  auto backward = [a, b](Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    for (Var v : {a, b}) {
      if (T* gv = gr.grad_sink(v)) {
        for (std::size_t i = 0; i < dy.size(); ++i) gv[i] += dy[i];
      }
    }
  };
  return g.record(OpKind::add, std::move(out), {a, b}, std::move(backward));
}

template <typename T>
std::vector<double> log_softmax_rows(std::span<const T> logits, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * cols;
    double mx = z[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(static_cast<double>(z[c]) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<double>(z[c]) - lse;
  }
  return out;
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels) {
  const Shape& s = g.shape(logits);
  require_rank(s, 2, "softmax_cross_entropy logits");
  const std::size_t n = s[0], k = s[1];
  if (k < 2) throw DimensionError("softmax_cross_entropy needs at least 2 classes");
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw IndexError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto& z = g.value(logits);
  for (T v : z.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("softmax_cross_entropy: non-finite logit");
  }
  std::vector<double> logp = log_softmax_rows<T>(z.data(), n, k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total -= logp[i * k + static_cast<std::size_t>(labels[i])];
  const double loss = total / static_cast<double>(n);

  std::vector<int> lab(labels.begin(), labels.end());
  auto backward = [logits, logp = std::move(logp), lab = std::move(lab), n, k](
                      Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gz = gr.grad_sink(logits);
    const double scale = static_cast<double>(dy[0]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        const double target = static_cast<int>(c) == lab[i] ? 1.0 : 0.0;
        gz[i * k + c] += static_cast<T>((std::exp(logp[i * k + c]) - target) * scale);
      }
    }
  };
  return g.record(OpKind::softmax_cross_entropy, Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                  std::move(backward));
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  double s = 0.0;
  for (T v : g.value(x).data()) s += v;
  auto backward = [x](Graph<T>& gr, const Tensor<T>&, std::span<const T> dy) {
    T* gx = gr.grad_sink(x);
    const std::size_t n = gr.value(x).size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += dy[0];
  };
  return g.record(OpKind::sum, Tensor<T>::scalar(static_cast<T>(s)), {x}, std::move(backward));
}

#define LEAFFINE_INSTANTIATE_OPS(T)                                                                       \
  template Var conv2d<T>(Graph<T>&, Var, Var, std::optional<Var>, Conv2dOptions);                         \
  template Var batch_norm2d<T>(Graph<T>&, Var, Var, Var, RunningStats<T>&, const BatchNormOptions&);      \
  template Var batch_norm2d_inference<T>(Graph<T>&, Var, Var, Var, const RunningStats<T>&, double);      \
  template Var relu<T>(Graph<T>&, Var);                                                                   \
  template Var max_pool2d<T>(Graph<T>&, Var, PoolOptions);                                                \
  template Var global_avg_pool<T>(Graph<T>&, Var);                                                        \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                                       \
  template Var residual_add<T>(Graph<T>&, Var, Var);                                                      \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, std::span<const int>);                            \
  template Var sum<T>(Graph<T>&, Var);                                                                    \
  template std::vector<double> log_softmax_rows<T>(std::span<const T>, std::size_t, std::size_t);

LEAFFINE_INSTANTIATE_OPS(float)
LEAFFINE_INSTANTIATE_OPS(double)

}  // namespace leaffine
