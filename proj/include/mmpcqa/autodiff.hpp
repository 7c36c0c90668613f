#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmpcqa/error.hpp"
#include "mmpcqa/tensor.hpp"

namespace mmpcqa {

// Handle to a node of a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Reverse-mode differentiation over a graph recorded during one forward pass.
// Every operator checks shapes (ShapeError names the operator) and rejects
// non-finite results (RuntimeError).
//
// Operators on rank-2 tensors treat rows as items and the last axis as
// features. Images are rank-3 [channels, height, width].
template <typename T>
class Graph {
 public:
  Var constant(Tensor<T> value);
  // Leaf whose gradient is tracked.
  Var variable(Tensor<T> value);
  // Named parameter leaf. Repeated calls with the same name return the same
  // node, so shared weights accumulate one gradient.
  Var param(const std::string& name, const Tensor<T>& value);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient after backward(); an empty tensor if none reached the node.
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  // Same-shape add, or [m,n] + [1,n] with the row broadcast over m.
  Var add(Var a, Var b);
  Var concat(std::span<const Var> parts, int axis);
  Var relu(Var a);
  Var softmax(Var a);
  // 3x3 kernel, zero padding 1. x: [cin,h,w], w: [cout,cin,3,3], b: [cout].
  Var conv2d(Var x, Var w, Var b, std::size_t stride);
  Var max_pool_rows(Var a);
  Var mean_pool_rows(Var a);
  Var global_average_pool_2d(Var a);
  Var layer_norm(Var a);
  Var scale(Var a, T factor);

  Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

  // Propagates `seed` (same shape as the output) back through the graph.
  void backward(Var out, const Tensor<T>& seed);
  void backward(Var out);  // scalar output, seed 1

  // (name, gradient) for each parameter leaf reached by backward().
  std::vector<std::pair<std::string, const Tensor<T>*>> param_grads() const;

  std::size_t size() const { return nodes_.size(); }

  // Smallest distance of any relu input to 0 or of any max_pool_rows winner
  // to the runner-up seen so far. Finite differences are only meaningful when
  // this is well above the step.
  double kink_margin() const { return kink_margin_; }

  static constexpr T layer_norm_eps = T(1e-9);

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Backward back;
    std::string param;
  };

  Var push(const char* op, Tensor<T> value, bool needs_grad, Backward back);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor<T>& grad_of(std::size_t id);
  const Tensor<T>& out_grad(std::size_t self) const { return nodes_[self].grad; }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// C (m x n) += op(A) * op(B), row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mmpcqa
