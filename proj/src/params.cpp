#include "mmpcqa/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "mmpcqa/error.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  ParamEntry<T> e;
  e.grad = Tensor<T>(value.shape);
  e.m = Tensor<T>(value.shape);
  e.v = Tensor<T>(value.shape);
  e.value = std::move(value);
  order_.push_back(name);
  index_.emplace(name, std::move(e));
}

template <typename T>
const ParamEntry<T>& ParameterStore<T>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
ParamEntry<T>& ParameterStore<T>::entry_mut(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::value(const std::string& name) const {
  return entry(name).value;
}

template <typename T>
Tensor<T>& ParameterStore<T>::mutable_value(const std::string& name) {
  return entry_mut(name).value;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::grad(const std::string& name) const {
  return entry(name).grad;
}

template <typename T>
void ParameterStore<T>::restore_moments(const std::string& name, Tensor<T> m, Tensor<T> v) {
  auto& e = entry_mut(name);
  if (m.shape != e.value.shape || v.shape != e.value.shape) {
    throw ShapeError("Adam state shape mismatch for '" + name + "'");
  }
  e.m = std::move(m);
  e.v = std::move(v);
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : index_) n += e.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::accumulate(const std::string& name, const Tensor<T>& g) {
  auto& e = entry_mut(name);
  if (g.shape != e.grad.shape) {
    throw ShapeError("gradient for '" + name + "' has shape " + shape_string(g.shape) + ", expected " +
                     shape_string(e.grad.shape));
  }
  for (std::size_t i = 0; i < g.size(); ++i) e.grad.data[i] += g.data[i];
}

template <typename T>
void ParameterStore<T>::accumulate(const Graph<T>& graph) {
  for (const auto& [name, g] : graph.param_grads()) accumulate(name, *g);
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [_, e] : index_) std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
}

template <typename T>
void ParameterStore<T>::adam_step(const AdamOptions& o) {
  ++step_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (const auto& name : order_) {
    auto& e = index_.at(name);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = static_cast<double>(e.grad.data[i]) + o.weight_decay * static_cast<double>(e.value.data[i]);
      const double m = o.beta1 * static_cast<double>(e.m.data[i]) + (1.0 - o.beta1) * g;
      const double v = o.beta2 * static_cast<double>(e.v.data[i]) + (1.0 - o.beta2) * g * g;
      e.m.data[i] = static_cast<T>(m);
      e.v.data[i] = static_cast<T>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      e.value.data[i] = static_cast<T>(static_cast<double>(e.value.data[i]) - o.lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
  }
  zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

template <typename T>
ParameterStore<T> init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParameterStore<T> store;
  Rng rng(seed);
  for (const auto& spec : specs) {
    Tensor<T> t(spec.shape);
    if (!spec.bias) {
      if (spec.fan_in == 0) throw ValidationError("parameter '" + spec.name + "' has zero fan-in");
      const double bound = std::sqrt(1.0 / static_cast<double>(spec.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.data) v = static_cast<T>(dist(rng));
    }
    store.add(spec.name, std::move(t));
  }
  return store;
}

template ParameterStore<float> init_params<float>(const std::vector<ParamSpec>&, std::uint64_t);
template ParameterStore<double> init_params<double>(const std::vector<ParamSpec>&, std::uint64_t);

namespace {

constexpr char kMagic[8] = {'M', 'M', 'P', 'C', 'Q', 'A', '1', '\0'};

template <typename V>
void put(std::string& out, V v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
  if (name.size() > 0xffff) throw ValidationError("parameter name too long: " + name);
  if (t.rank() > 0xff) throw ValidationError("tensor rank too large: " + name);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.append(reinterpret_cast<const char*>(t.data.data()), t.size() * sizeof(float));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename V>
  V get(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ValidationError(source_ + ": truncated checkpoint while reading " + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string serialize_checkpoint(const ParameterStore<float>& store) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size() * 3));
  for (const auto& name : store.names()) {
    const auto& e = store.entry(name);
    put_tensor(out, name, e.value);
    put_tensor(out, name + ".m", e.m);
    put_tensor(out, name + ".v", e.v);
  }
  put<std::uint64_t>(out, store.step());
  return out;
}

ParameterStore<float> parse_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.get_bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw ValidationError(source + ": not a checkpoint (bad magic)");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  struct Raw {
    std::string name;
    Tensor<float> t;
  };
  std::vector<Raw> raws;
  raws.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.get_bytes(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint32_t>("dims"));
    const std::size_t n = shape_size(shape);
    std::string payload = r.get_bytes(n * sizeof(float), "payload");
    Tensor<float> t(shape);
    std::memcpy(t.data.data(), payload.data(), payload.size());
    raws.push_back({std::move(name), std::move(t)});
  }
  const auto step = r.get<std::uint64_t>("step count");
  if (!r.at_end()) throw ValidationError(source + ": trailing bytes after checkpoint at byte " + std::to_string(r.pos()));

  std::set<std::string> names;
  for (const auto& raw : raws) names.insert(raw.name);
  auto is_moment = [&](const std::string& n) {
    return (ends_with(n, ".m") || ends_with(n, ".v")) && names.count(n.substr(0, n.size() - 2));
  };

  ParameterStore<float> store;
  std::map<std::string, Tensor<float>> moments;
  for (auto& raw : raws) {
    if (is_moment(raw.name)) {
      moments.emplace(raw.name, std::move(raw.t));
    } else {
      store.add(raw.name, std::move(raw.t));
    }
  }
  for (const auto& name : store.names()) {
    auto m = moments.find(name + ".m");
    auto v = moments.find(name + ".v");
    if (m == moments.end() || v == moments.end()) {
      throw ValidationError(source + ": missing Adam state for '" + name + "'");
    }
    store.restore_moments(name, std::move(m->second), std::move(v->second));
  }
  store.set_step(step);
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& store) {
  const auto bytes = serialize_checkpoint(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("write failed for '" + path.string() + "'");
}

ParameterStore<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

}  // namespace mmpcqa
