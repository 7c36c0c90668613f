#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmpcqa/autodiff.hpp"
#include "mmpcqa/tensor.hpp"

namespace mmpcqa {

// Declares one learnable tensor. Weights are drawn from
// U(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases start at zero.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
  bool bias = false;
};

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;  // Adam first moment
  Tensor<T> v;  // Adam second moment
};

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
class ParameterStore {
 public:
  // Names must be unique; insertion order is the checkpoint order.
  void add(const std::string& name, Tensor<T> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& value(const std::string& name) const;
  Tensor<T>& mutable_value(const std::string& name);
  const Tensor<T>& grad(const std::string& name) const;
  const ParamEntry<T>& entry(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t parameter_count() const;
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  // Adds the parameter gradients recorded by a graph after backward().
  void accumulate(const Graph<T>& graph);
  void accumulate(const std::string& name, const Tensor<T>& g);
  void zero_grad();
  void restore_moments(const std::string& name, Tensor<T> m, Tensor<T> v);

  // Adam with bias correction; weight decay is added to the gradient as an L2
  // term. Gradients are zeroed afterwards.
  void adam_step(const AdamOptions& options);

  template <typename U>
  ParameterStore<U> cast() const;

 private:
  ParamEntry<T>& entry_mut(const std::string& name);

  std::vector<std::string> order_;
  std::map<std::string, ParamEntry<T>> index_;
  std::uint64_t step_ = 0;

  template <typename>
  friend class ParameterStore;
};

template <typename T>
ParameterStore<T> init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed);

// Checkpoint layout (little-endian):
//   "MMPCQA1\0", u32 tensor count,
//   per tensor: u16 name length, name bytes, u8 rank, u32 dims[rank], f32 payload
//   u64 step count.
// Each parameter is followed by its Adam moments named "<name>.m", "<name>.v".
std::string serialize_checkpoint(const ParameterStore<float>& store);
ParameterStore<float> parse_checkpoint(const std::string& bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& store);
ParameterStore<float> load_checkpoint(const std::filesystem::path& path);

template <typename T>
template <typename U>
ParameterStore<U> ParameterStore<T>::cast() const {
  ParameterStore<U> out;
  for (const auto& name : order_) {
    const auto& e = index_.at(name);
    ParamEntry<U> c{e.value.template cast<U>(), e.grad.template cast<U>(), e.m.template cast<U>(),
                    e.v.template cast<U>()};
    out.order_.push_back(name);
    out.index_.emplace(name, std::move(c));
  }
  out.step_ = step_;
  return out;
}

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace mmpcqa
