#include "leaffine/checkpoint.hpp"

#include <cstring>
#include <map>
#include <set>

#include "leaffine/io.hpp"

namespace leaffine {
namespace {

constexpr char kMagic[4] = {'L', 'F', 'C', 'K'};
constexpr const char* kFirstMoment = "optimizer.first_moment/";
constexpr const char* kSecondMoment = "optimizer.second_moment/";

template <typename T>
constexpr std::uint8_t dtype_code() {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  return sizeof(T) == 4 ? 0 : 1;
}

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  template <typename T>
  void elements(std::span<const T> data) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    out_.reserve(out_.size() + data.size() * sizeof(T));
    for (T v : data) {
      Bits b;
      std::memcpy(&b, &v, sizeof b);
      uint(b);
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename T>
  void elements(std::span<T> out) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(out.size() * sizeof(T), "tensor data");
    for (auto& v : out) {
      const Bits b = uint<Bits>("tensor data");
      std::memcpy(&v, &b, sizeof v);
    }
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

template <typename T>
void write_tensor(Writer& w, const std::string& name, const Tensor<T>& t) {
  if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name.substr(0, 32), 0);
  w.uint(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.uint(dtype_code<T>());
  w.uint(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.uint(static_cast<std::uint32_t>(d));
  w.elements<T>(t.data());
}

std::string block_name(BlockKind b) { return b == BlockKind::basic ? "basic" : "bottleneck"; }
std::string stem_name(StemKind s) { return s == StemKind::compact ? "compact" : "canonical"; }

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"block", block_name(c.block)},
                        {"stage_depths", c.stage_depths},
                        {"stage_widths", c.stage_widths},
                        {"stem_width", c.stem_width},
                        {"stem", stem_name(c.stem)},
                        {"input_channels", c.input_channels},
                        {"num_classes", c.num_classes},
                        {"image_size", c.image_size}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    const std::string block = j.at("block").get<std::string>();
    if (block != "basic" && block != "bottleneck") throw ConfigError("unknown block kind '" + block + "'");
    c.block = block == "basic" ? BlockKind::basic : BlockKind::bottleneck;
    const std::string stem = j.at("stem").get<std::string>();
    if (stem != "compact" && stem != "canonical") throw ConfigError("unknown stem kind '" + stem + "'");
    c.stem = stem == "compact" ? StemKind::compact : StemKind::canonical;
    c.stage_depths = j.at("stage_depths").get<std::vector<std::size_t>>();
    c.stage_widths = j.at("stage_widths").get<std::vector<std::size_t>>();
    c.stem_width = j.at("stem_width").get<std::size_t>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ResNet<T>& model, const OptimizerState<T>* optimizer,
                                               const nlohmann::json& extra) {
  const auto& params = model.parameters();
  nlohmann::json meta;
  meta["format"] = "leaffine-checkpoint";
  meta["config"] = config_to_json(model.config());
  meta["class_names"] = model.class_names();
  std::vector<std::size_t> assignment;
  for (const auto& p : params) assignment.push_back(p.group);
  meta["groups"] = {{"count", model.group_count()}, {"assignment", assignment}};
  meta["frozen_groups"] = std::vector<std::size_t>(model.frozen_groups().begin(), model.frozen_groups().end());
  meta["train_bn"] = model.train_bn();
  if (optimizer) {
    const auto& h = optimizer->hyper;
    meta["optimizer"] = {{"rule", to_string(h.rule)}, {"beta1", h.beta1},
                         {"beta2", h.beta2},          {"eps", h.eps},
                         {"weight_decay", h.weight_decay}, {"momentum", h.momentum},
                         {"step", optimizer->step},   {"updates", optimizer->updates}};
  } else {
    meta["optimizer"] = nullptr;
  }
  meta["extra"] = extra.is_null() ? nlohmann::json::object() : extra;
  const std::string text = meta.dump();

  std::vector<std::pair<std::string, const Tensor<T>*>> table;
  for (const auto& p : params) table.emplace_back(p.name, &p.value);
  for (const auto& n : model.norm_layers()) {
    table.emplace_back(n.name + ".running_mean", &n.stats.mean);
    table.emplace_back(n.name + ".running_var", &n.stats.var);
  }
  if (optimizer) {
    for (std::size_t i = 0; i < optimizer->first_moment.size() && i < params.size(); ++i) {
      if (!optimizer->first_moment[i].empty()) table.emplace_back(kFirstMoment + params[i].name, &optimizer->first_moment[i]);
      if (!optimizer->second_moment[i].empty()) table.emplace_back(kSecondMoment + params[i].name, &optimizer->second_moment[i]);
    }
  }

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint(kCheckpointVersion);
  w.uint(static_cast<std::uint64_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.uint(static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, tensor] : table) write_tensor(w, name, *tensor);
  return w.take();
}

template <typename T>
Checkpoint<T> parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  r.text(4, "magic");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto meta_len = r.uint<std::uint64_t>("metadata length");
  const std::size_t meta_at = r.offset();
  if (meta_len > r.remaining()) throw FormatError("metadata length exceeds file size", 8);
  const std::string text = r.text(static_cast<std::size_t>(meta_len), "metadata");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), meta_at);
  }

  auto fail_meta = [&](const std::string& what) -> FormatError { return FormatError("metadata: " + what, meta_at); };
  std::optional<ResNet<T>> model;
  std::optional<OptimizerState<T>> optimizer;
  try {
    model.emplace(config_from_json(meta.at("config")), 0);
    model->set_class_names(meta.at("class_names").get<std::vector<std::string>>());
    model->set_group_map(meta.at("groups").at("count").get<std::size_t>(),
                         meta.at("groups").at("assignment").get<std::vector<std::size_t>>());
    const auto frozen = meta.at("frozen_groups").get<std::set<std::size_t>>();
    model->set_frozen(frozen, meta.at("train_bn").get<bool>());
    const auto& o = meta.at("optimizer");
    if (!o.is_null()) {
      OptimizerState<T> st;
      st.hyper.rule = parse_update_rule(o.at("rule").get<std::string>());
      st.hyper.beta1 = o.at("beta1").get<double>();
      st.hyper.beta2 = o.at("beta2").get<double>();
      st.hyper.eps = o.at("eps").get<double>();
      st.hyper.weight_decay = o.at("weight_decay").get<double>();
      st.hyper.momentum = o.at("momentum").get<double>();
      st.step = o.at("step").get<std::uint64_t>();
      st.updates = o.at("updates").get<std::vector<std::uint64_t>>();
      if (!st.updates.empty() && st.updates.size() != model->parameters().size()) {
        throw fail_meta("optimizer update counters do not match the parameter registry");
      }
      st.first_moment.resize(st.updates.size());
      st.second_moment.resize(st.updates.size());
      optimizer = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail_meta(e.what());
  } catch (const ConfigError& e) {
    throw fail_meta(e.what());
  }

  auto& params = model->parameters();
  std::map<std::string, Tensor<T>*> slots;
  std::map<std::string, std::size_t> moment_index;
  for (std::size_t i = 0; i < params.size(); ++i) {
    slots[params[i].name] = &params[i].value;
    if (optimizer && !optimizer->updates.empty()) {
      moment_index[kFirstMoment + params[i].name] = i;
      moment_index[kSecondMoment + params[i].name] = i;
    }
  }
  for (auto& n : model->norm_layers()) {
    slots[n.name + ".running_mean"] = &n.stats.mean;
    slots[n.name + ".running_var"] = &n.stats.var;
  }

  const auto count = r.uint<std::uint32_t>("tensor count");
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t entry_at = r.offset();
    const auto name_len = r.uint<std::uint16_t>("tensor name length");
    const std::string name = r.text(name_len, "tensor name");
    const std::size_t dtype_at = r.offset();
    const auto dtype = r.uint<std::uint8_t>("dtype");
    if (dtype != dtype_code<T>()) throw FormatError("tensor '" + name + "' has unexpected dtype " + std::to_string(dtype), dtype_at);
    const auto rank = r.uint<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.uint<std::uint32_t>("dims");
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'", entry_at);

    Tensor<T>* slot = nullptr;
    Tensor<T> moment;
    std::optional<std::size_t> moment_of;
    if (auto it = slots.find(name); it != slots.end()) {
      slot = it->second;
    } else if (auto mt = moment_index.find(name); mt != moment_index.end()) {
      moment_of = mt->second;
    } else {
      throw FormatError("unknown tensor '" + name + "'", entry_at);
    }
    const Shape& expected = slot ? slot->shape() : params[*moment_of].value.shape();
    if (shape != expected) {
      throw FormatError("tensor '" + name + "' has shape " + to_string(shape) + ", expected " + to_string(expected), entry_at);
    }
    if (slot) {
      r.elements<T>(slot->data());
    } else {
      moment = Tensor<T>(shape);
      r.elements<T>(moment.data());
      auto& dst = name.rfind(kFirstMoment, 0) == 0 ? optimizer->first_moment : optimizer->second_moment;
      dst[*moment_of] = std::move(moment);
    }
  }
  for (const auto& [name, slot] : slots) {
    if (!seen.count(name)) throw FormatError("missing tensor '" + name + "'", r.offset());
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after tensor table", r.offset());

  nlohmann::json extra = meta.contains("extra") ? meta["extra"] : nlohmann::json::object();
  return Checkpoint<T>{std::move(*model), std::move(optimizer), std::move(extra)};
}

template <typename T>
void save_checkpoint(const ResNet<T>& model, const OptimizerState<T>* optimizer, const std::filesystem::path& path,
                     const nlohmann::json& extra) {
  const auto bytes = serialize_checkpoint(model, optimizer, extra);
  write_file_atomic(path, bytes);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_checkpoint<T>(bytes);
}

#define LEAFFINE_INSTANTIATE_CHECKPOINT(T)                                                                         \
  template std::vector<std::uint8_t> serialize_checkpoint<T>(const ResNet<T>&, const OptimizerState<T>*,           \
                                                             const nlohmann::json&);                               \
  template Checkpoint<T> parse_checkpoint<T>(std::span<const std::uint8_t>);                                       \
  template void save_checkpoint<T>(const ResNet<T>&, const OptimizerState<T>*, const std::filesystem::path&,       \
                                   const nlohmann::json&);                                                         \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

LEAFFINE_INSTANTIATE_CHECKPOINT(float)
LEAFFINE_INSTANTIATE_CHECKPOINT(double)

}  // namespace leaffine
