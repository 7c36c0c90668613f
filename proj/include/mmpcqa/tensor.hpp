#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmpcqa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& s);

// Dense row-major array. T is float for training and double for gradient
// checks.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }
  // Rows/columns of a rank-2 tensor.
  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * shape[1], shape[1]}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * shape[1], shape[1]}; }

  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
  }
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data) {
    if (!(v - v == T(0))) return false;
  }
  return true;
}

}  // namespace mmpcqa
