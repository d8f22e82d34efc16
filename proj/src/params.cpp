#include "csasr/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace csasr {

namespace {
constexpr char kMagic[4] = {'C', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& is) {
  uint32_t n = read_pod<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}
}  // namespace

Var ParamStore::create(const std::string& name, std::vector<int64_t> shape,
                       Rng& rng, const std::string& init) {
  if (params_.count(name))
    throw std::invalid_argument("param already exists: " + name);
  Tensor t(shape);
  if (init == "xavier") {
    // fan_in/fan_out from the first two dims (or the whole size for vectors)
    double fan_in = shape.size() >= 2 ? static_cast<double>(shape[0]) : static_cast<double>(t.numel());
    double fan_out = shape.size() >= 2 ? static_cast<double>(shape[1]) : fan_in;
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data) v = rng.uniform(-a, a);
  } else if (init == "zeros") {
    // already zero
  } else if (init == "ones") {
    std::fill(t.data.begin(), t.data.end(), 1.0);
  } else {
    throw std::invalid_argument("unknown init: " + init);
  }
  Var v = make_var(std::move(t), true);
  params_[name] = ParamGroup{name, v, true, true};
  return v;
}

Var ParamStore::create_buffer(const std::string& name,
                              std::vector<int64_t> shape, double fill) {
  if (params_.count(name))
    throw std::invalid_argument("param already exists: " + name);
  Tensor t(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), fill);
  Var v = make_var(std::move(t), false);
  params_[name] = ParamGroup{name, v, false, false};
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such param: " + name);
  return it->second.var;
}

int64_t ParamStore::set_trainable(const std::vector<std::string>& frozen_prefixes) {
  for (const auto& p : frozen_prefixes) {
    bool matched = false;
    for (const auto& [name, g] : params_)
      if (name.rfind(p, 0) == 0) { matched = true; break; }
    if (!matched)
      throw std::invalid_argument("freeze prefix matches no parameter: " + p);
  }
  for (auto& [name, g] : params_) {
    bool frozen = false;
    for (const auto& p : frozen_prefixes)
      if (name.rfind(p, 0) == 0) { frozen = true; break; }
    // buffers get the flag too so frozen modules stop updating their stats
    g.trainable = !frozen;
    if (g.learnable) g.var->requires_grad = !frozen;
  }
  return trainable_parameters();
}

int64_t ParamStore::total_parameters() const {
  int64_t n = 0;
  for (const auto& [_, g] : params_)
    if (g.learnable) n += g.var->value.numel();
  return n;
}

int64_t ParamStore::trainable_parameters() const {
  int64_t n = 0;
  for (const auto& [_, g] : params_)
    if (g.trainable) n += g.var->value.numel();
  return n;
}

int64_t ParamStore::parameters_under(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, g] : params_)
    if (g.learnable && name.rfind(prefix, 0) == 0) n += g.var->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, g] : params_) g.var->grad = Tensor();
}

void ParamStore::save_checkpoint(const std::string& path, uint64_t step) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);
  write_pod<uint64_t>(os, step);
  write_pod<uint32_t>(os, static_cast<uint32_t>(params_.size()));
  for (const auto& [name, g] : params_) {
    write_string(os, name);
    write_string(os, "f8");  // little-endian float64
    write_pod<uint32_t>(os, static_cast<uint32_t>(g.var->value.shape.size()));
    for (int64_t d : g.var->value.shape) write_pod<int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(g.var->value.data.data()),
             static_cast<std::streamsize>(g.var->value.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed " + path);
}

uint64_t ParamStore::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  uint64_t step = read_pod<uint64_t>(is);
  uint32_t count = read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    std::string dtype = read_string(is);
    if (dtype != "f8") throw std::runtime_error("checkpoint: unknown dtype " + dtype);
    uint32_t rank = read_pod<uint32_t>(is);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = read_pod<int64_t>(is);
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::runtime_error("checkpoint: unknown param " + name);
    if (it->second.var->value.shape != shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(it->second.var->value.data.data()),
            static_cast<std::streamsize>(it->second.var->value.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated data for " + name);
  }
  return step;
}

}  // namespace csasr
