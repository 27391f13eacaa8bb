// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace mile {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'I', 'L', 'E', 'C', 'K', 'P', 'T'};

std::string kind_str(CheckpointKind k) { return k == CheckpointKind::kFull ? "full" : "adapter"; }

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("checkpoint header: bad number for " + key + ": '" + s + "'");
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename U>
  void pod(U v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string context) : is_(is), context_(std::move(context)) {}
  template <typename U>
  U pod() {
    U v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw InputError(context_ + ": truncated file");
  }
  std::string str(std::size_t limit) {
    const auto n = pod<std::uint32_t>();
    if (n > limit) throw InputError(context_ + ": corrupt string length " + std::to_string(n));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::istream& is_;
  std::string context_;
};

template <typename T>
void write_tensor(Writer& w, const std::string& name, const Shape& shape, std::span<const T> values) {
  w.str(name);
  w.pod(static_cast<std::uint8_t>(dtype_of<T>()));
  w.pod(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.pod(static_cast<std::uint64_t>(d));
  w.bytes(values.data(), values.size() * sizeof(T));
}

template <typename T>
std::vector<NamedTensor<T>> saved_tensors(const MileModel<T>& model, CheckpointKind kind) {
  if (kind == CheckpointKind::kFull) return model.parameters();
  std::vector<NamedTensor<T>> out;
  for (auto c : kComponents) {
    for (auto& p : model.peft_parameters(c)) out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
void copy_into(const TensorRecord& rec, std::span<T> dst, const Shape& shape, const std::string& path) {
  if (rec.shape != shape) {
    throw DimensionError(path + ": tensor '" + rec.name + "' has shape " + shape_str(rec.shape) +
                         ", model expects " + shape_str(shape));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
}

}  // namespace

const TensorRecord* CheckpointFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const MileModel<T>& model,
                     const std::string& plan, CheckpointKind kind, const OptimizerState<T>* optimizer,
                     const std::map<std::string, std::string>& extra) {
  if (model.shape_only()) throw ContractError("cannot checkpoint a shape-only model");
  std::ostringstream header;
  for (const auto& [k, v] : model.config().to_fields()) header << "model." << k << '=' << v << '\n';
  header << "plan=" << plan << '\n' << "kind=" << kind_str(kind) << '\n';
  std::map<std::string, std::string> all_extra = extra;
  if (optimizer != nullptr) {
    const auto& o = optimizer->options;
    all_extra["optim.step"] = std::to_string(optimizer->step);
    all_extra["optim.base_lr"] = format_double(o.base_lr);
    all_extra["optim.weight_decay"] = format_double(o.weight_decay);
    all_extra["optim.min_lr"] = format_double(o.min_lr);
    all_extra["optim.beta1"] = format_double(o.beta1);
    all_extra["optim.beta2"] = format_double(o.beta2);
    all_extra["optim.eps"] = format_double(o.eps);
    all_extra["optim.total_steps"] = std::to_string(o.total_steps);
  }
  for (const auto& [k, v] : all_extra) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint header entry '" + k + "' contains a reserved character");
    }
    header << "x." << k << '=' << v << '\n';
  }

  const auto tensors = saved_tensors(model, kind);
  std::uint64_t count = tensors.size();
  if (optimizer != nullptr) count += optimizer->first_moment.size() + optimizer->second_moment.size();

  auto tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + tmp.string() + "' for writing");
    Writer w(os);
    w.bytes(kMagic, sizeof kMagic);
    w.pod(kCheckpointVersion);
    w.str(header.str());
    w.pod(count);
    for (const auto& p : tensors) write_tensor<T>(w, p.name, p.tensor.shape(), p.tensor.data());
    if (optimizer != nullptr) {
      for (const auto& [name, m] : optimizer->first_moment) {
        write_tensor<T>(w, kOptimFirstPrefix + name, {m.size()}, m);
      }
      for (const auto& [name, v] : optimizer->second_moment) {
        write_tensor<T>(w, kOptimSecondPrefix + name, {v.size()}, v);
      }
    }
    os.flush();
    if (!os) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint '" + path.string() + "'");
  Reader r(is, "checkpoint '" + path.string() + "'");
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw InputError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  CheckpointFile file;
  file.header.version = r.pod<std::uint32_t>();
  if (file.header.version != kCheckpointVersion) {
    throw InputError("checkpoint '" + path.string() + "' has unsupported format version " +
                     std::to_string(file.header.version));
  }
  std::istringstream header(r.str(1 << 20));
  std::map<std::string, std::string> model_fields;
  std::string line;
  while (std::getline(header, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("checkpoint header: malformed line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.starts_with("model.")) {
      model_fields[key.substr(6)] = value;
    } else if (key == "plan") {
      file.header.plan = value;
    } else if (key == "kind") {
      if (value != "full" && value != "adapter") throw InputError("checkpoint header: bad kind '" + value + "'");
      file.header.kind = value == "full" ? CheckpointKind::kFull : CheckpointKind::kAdapter;
    } else if (key.starts_with("x.")) {
      file.header.extra[key.substr(2)] = value;
    } else {
      throw InputError("checkpoint header: unknown key '" + key + "'");
    }
  }
  file.header.config = ModelConfig::from_fields(model_fields);

  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = r.str(4096);
    const auto dtype = r.pod<std::uint8_t>();
    if (dtype > 1) throw InputError("checkpoint tensor '" + rec.name + "': unknown dtype tag");
    rec.dtype = static_cast<DType>(dtype);
    const auto ndim = r.pod<std::uint32_t>();
    if (ndim == 0 || ndim > 8) throw InputError("checkpoint tensor '" + rec.name + "': bad rank");
    for (std::uint32_t k = 0; k < ndim; ++k) rec.shape.push_back(r.pod<std::uint64_t>());
    const auto n = shape_numel(rec.shape);
    rec.values.resize(n);
    if (rec.dtype == DType::kFloat32) {
      std::vector<float> buf(n);
      r.bytes(buf.data(), n * sizeof(float));
      std::copy(buf.begin(), buf.end(), rec.values.begin());
    } else {
      r.bytes(rec.values.data(), n * sizeof(double));
    }
    file.tensors.push_back(std::move(rec));
  }
  return file;
}

template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path, MileModel<T>& model,
                                 OptimizerState<T>* optimizer) {
  const auto file = read_checkpoint(path);
  const auto& h = file.header;
  const auto mismatched = model.config().diff(h.config);
  if (!mismatched.empty()) {
    const auto ckpt = h.config.to_fields(), mine = model.config().to_fields();
    std::string msg = "checkpoint '" + path.string() + "' config mismatch:";
    for (const auto& field : mismatched) {
      std::string a, b;
      for (const auto& [k, v] : ckpt) if (k == field) a = v;
      for (const auto& [k, v] : mine) if (k == field) b = v;
      msg += " " + field + " (checkpoint " + a + ", model " + b + ")";
    }
    throw ConfigError(msg);
  }

  const auto targets = saved_tensors(model, h.kind);
  std::set<std::string> expected;
  for (const auto& p : targets) {
    expected.insert(p.name);
    const auto* rec = file.find(p.name);
    if (rec == nullptr) {
      throw InputError("checkpoint '" + path.string() + "' lacks tensor '" + p.name + "'");
    }
    auto dst = p.tensor;
    copy_into<T>(*rec, dst.data(), dst.shape(), path.string());
  }
  for (const auto& rec : file.tensors) {
    if (rec.name.starts_with("optim/")) continue;
    if (!expected.count(rec.name)) {
      throw InputError("checkpoint '" + path.string() + "' has tensor '" + rec.name +
                       "' with no slot in the model (is the same tuning plan applied?)");
    }
  }

  if (optimizer != nullptr) {
    *optimizer = OptimizerState<T>{};
    optimizer->step = -1;
    const auto& x = h.extra;
    if (x.count("optim.step")) {
      auto num = [&](const char* key) { return parse_double(x.at(key), key); };
      optimizer->step = static_cast<std::int64_t>(num("optim.step"));
      auto& o = optimizer->options;
      o.base_lr = num("optim.base_lr");
      o.weight_decay = num("optim.weight_decay");
      o.min_lr = num("optim.min_lr");
      o.beta1 = num("optim.beta1");
      o.beta2 = num("optim.beta2");
      o.eps = num("optim.eps");
      o.total_steps = static_cast<std::int64_t>(num("optim.total_steps"));
      for (const auto& rec : file.tensors) {
        const bool first = rec.name.starts_with(kOptimFirstPrefix);
        const bool second = rec.name.starts_with(kOptimSecondPrefix);
        if (!first && !second) continue;
        const auto name = rec.name.substr(std::strlen(first ? kOptimFirstPrefix : kOptimSecondPrefix));
        auto& slot = (first ? optimizer->first_moment : optimizer->second_moment)[name];
        slot.assign(rec.values.size(), T(0));
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] = static_cast<T>(rec.values[i]);
      }
    }
  }
  return h;
}

#define MILE_INSTANTIATE_CHECKPOINT(T)                                                        \
  template void save_checkpoint(const std::filesystem::path&, const MileModel<T>&,            \
                                const std::string&, CheckpointKind, const OptimizerState<T>*, \
                                const std::map<std::string, std::string>&);                   \
  template CheckpointHeader load_checkpoint(const std::filesystem::path&, MileModel<T>&,      \
                                            OptimizerState<T>*);

MILE_INSTANTIATE_CHECKPOINT(float)
MILE_INSTANTIATE_CHECKPOINT(double)

#undef MILE_INSTANTIATE_CHECKPOINT

}  // namespace mile
