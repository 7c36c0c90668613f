#include "mmpcqa/autodiff.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <limits>

namespace mmpcqa {

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if (!trans_a && !trans_b) {
    // a: m x k, b: k x n
    for (std::size_t i = 0; i < m; ++i) {
      T* ci = c + i * n;
      const T* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ai[p];
        if (av == T(0)) continue;
        const T* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // a: m x k, b: n x k
    for (std::size_t i = 0; i < m; ++i) {
      const T* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* bj = b + j * k;
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        c[i * n + j] += acc;
      }
    }
  } else if (trans_a && !trans_b) {
    // a: k x m, b: k x n
    for (std::size_t p = 0; p < k; ++p) {
      const T* ap = a + p * m;
      const T* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = ap[i];
        if (av == T(0)) continue;
        T* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    // a: k x m, b: n x k
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        c[i * n + j] += acc;
      }
    }
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*, const double*, double*);

namespace {

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                     shape_string(t.shape));
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

template <typename T>
Var Graph<T>::push(const char* op, Tensor<T> value, bool needs_grad, Backward back) {
  if (!value.all_finite()) throw RuntimeError(std::string(op) + ": non-finite output");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape != n.value.shape) n.grad = Tensor<T>(n.value.shape);
  return n.grad;
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return push("constant", std::move(value), false, nullptr);
}

template <typename T>
Var Graph<T>::variable(Tensor<T> value) {
  return push("variable", std::move(value), true, nullptr);
}

template <typename T>
Var Graph<T>::param(const std::string& name, const Tensor<T>& value) {
  if (auto it = params_.find(name); it != params_.end()) return Var{it->second};
  Var v = push(name.c_str(), value, true, nullptr);
  nodes_[v.id].param = name;
  params_.emplace(name, v.id);
  return v;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_rank("matmul", A, 2);
  require_rank("matmul", B, 2);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(A.shape) + " x " + shape_string(B.shape));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> out({m, n});
  gemm(false, false, m, n, k, A.data.data(), B.data.data(), out.data.data());
  return push("matmul", std::move(out), needs(a) || needs(b), [a, b, m, n, k](Graph& g, std::size_t self) {
    const auto& dc = g.out_grad(self);
    if (g.needs(a)) {
      gemm(false, true, m, k, n, dc.data.data(), g.value(b).data.data(), g.grad_of(a.id).data.data());
    }
    if (g.needs(b)) {
      gemm(true, false, k, n, m, g.value(a).data.data(), dc.data.data(), g.grad_of(b.id).data.data());
    }
  });
}

template <typename T>
Var Graph<T>::transpose(Var a) {
  const auto& A = value(a);
  require_rank("transpose", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return push("transpose", std::move(out), needs(a), [a, m, n](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    auto& da = g.grad_of(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) += d.at(j, i);
  });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape == B.shape) {
    Tensor<T> out = A;
    add_into(out, B);
    return push("add", std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
      const auto& d = g.out_grad(self);
      if (g.needs(a)) add_into(g.grad_of(a.id), d);
      if (g.needs(b)) add_into(g.grad_of(b.id), d);
    });
  }
  if (A.rank() == 2 && B.rank() == 2 && B.rows() == 1 && B.cols() == A.cols()) {
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out = A;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += B.data[j];
    return push("add", std::move(out), needs(a) || needs(b), [a, b, m, n](Graph& g, std::size_t self) {
      const auto& d = g.out_grad(self);
      if (g.needs(a)) add_into(g.grad_of(a.id), d);
      if (g.needs(b)) {
        auto& db = g.grad_of(b.id);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) db.data[j] += d.at(i, j);
      }
    });
  }
  throw ShapeError("add: incompatible shapes " + shape_string(A.shape) + " + " + shape_string(B.shape));
}

template <typename T>
Var Graph<T>::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  std::vector<Var> ins(parts.begin(), parts.end());
  const auto& first = value(ins[0]);
  require_rank("concat", first, 2);
  std::size_t rows = 0, cols = 0;
  bool any = false;
  for (Var p : ins) {
    const auto& t = value(p);
    require_rank("concat", t, 2);
    if (axis == 0) {
      if (t.cols() != first.cols()) {
        throw ShapeError("concat: column mismatch " + shape_string(first.shape) + " vs " + shape_string(t.shape));
      }
      rows += t.rows();
      cols = t.cols();
    } else {
      if (t.rows() != first.rows()) {
        throw ShapeError("concat: row mismatch " + shape_string(first.shape) + " vs " + shape_string(t.shape));
      }
      cols += t.cols();
      rows = t.rows();
    }
    any = any || needs(p);
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (Var p : ins) {
    const auto& t = value(p);
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (axis == 0) {
          out.at(offset + i, j) = t.at(i, j);
        } else {
          out.at(i, offset + j) = t.at(i, j);
        }
      }
    offset += axis == 0 ? t.rows() : t.cols();
  }
  return push("concat", std::move(out), any, [ins, axis](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    std::size_t off = 0;
    for (Var p : ins) {
      const auto& shape = g.value(p).shape;
      if (g.needs(p)) {
        auto& dp = g.grad_of(p.id);
        for (std::size_t i = 0; i < shape[0]; ++i)
          for (std::size_t j = 0; j < shape[1]; ++j) dp.at(i, j) += axis == 0 ? d.at(off + i, j) : d.at(i, off + j);
      }
      off += axis == 0 ? shape[0] : shape[1];
    }
  });
}

template <typename T>
Var Graph<T>::relu(Var a) {
  Tensor<T> out = value(a);
  for (auto& v : out.data) {
    kink_margin_ = std::min(kink_margin_, std::abs(static_cast<double>(v)));
    v = v > T(0) ? v : T(0);
  }
  return push("relu", std::move(out), needs(a), [a](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    const auto& x = g.value(a);
    auto& da = g.grad_of(a.id);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x.data[i] > T(0)) da.data[i] += d.data[i];
  });
}

template <typename T>
Var Graph<T>::softmax(Var a) {
  const auto& A = value(a);
  require_rank("softmax", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const auto in = A.row(i);
    auto o = out.row(i);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
  }
  return push("softmax", std::move(out), needs(a), [a, m, n](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    const auto& y = g.value(Var{self});
    auto& da = g.grad_of(a.id);
    for (std::size_t i = 0; i < m; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += d.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) += y.at(i, j) * (d.at(i, j) - dot);
    }
  });
}

template <typename T>
Var Graph<T>::conv2d(Var x, Var w, Var b, std::size_t stride) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& B = value(b);
  require_rank("conv2d", X, 3);
  require_rank("conv2d", W, 4);
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  const std::size_t cin = X.dim(0), h = X.dim(1), wd = X.dim(2), cout = W.dim(0);
  if (W.dim(1) != cin || W.dim(2) != 3 || W.dim(3) != 3 || B.shape != Shape{cout}) {
    throw ShapeError("conv2d: weight " + shape_string(W.shape) + " / bias " + shape_string(B.shape) +
                     " incompatible with input " + shape_string(X.shape));
  }
  const std::size_t ho = (h + 2 - 3) / stride + 1;
  const std::size_t wo = (wd + 2 - 3) / stride + 1;
  const std::size_t kk = cin * 9, hw = ho * wo;

  // im2col: cols[c*9 + ky*3 + kx][oy*wo + ox]
  auto cols = std::make_shared<std::vector<T>>(kk * hw, T(0));
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = cols->data() + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            dst[oy * wo + ox] = X.data[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
          }
        }
      }

  Tensor<T> out({cout, ho, wo});
  for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.data.data() + o * hw, hw, B.data[o]);
  gemm(false, false, cout, hw, kk, W.data.data(), cols->data(), out.data.data());

  const bool any = needs(x) || needs(w) || needs(b);
  return push("conv2d", std::move(out), any,
              [x, w, b, cols, cin, h, wd, ho, wo, cout, kk, hw, stride](Graph& g, std::size_t self) {
                const auto& d = g.out_grad(self);
                if (g.needs(b)) {
                  auto& db = g.grad_of(b.id);
                  for (std::size_t o = 0; o < cout; ++o) {
                    T s = T(0);
                    for (std::size_t i = 0; i < hw; ++i) s += d.data[o * hw + i];
                    db.data[o] += s;
                  }
                }
                if (g.needs(w)) {
                  gemm(false, true, cout, kk, hw, d.data.data(), cols->data(), g.grad_of(w.id).data.data());
                }
                if (g.needs(x)) {
                  std::vector<T> dcols(kk * hw, T(0));
                  gemm(true, false, kk, hw, cout, g.value(w).data.data(), d.data.data(), dcols.data());
                  auto& dx = g.grad_of(x.id);
                  for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t ky = 0; ky < 3; ++ky)
                      for (std::size_t kx = 0; kx < 3; ++kx) {
                        const T* src = dcols.data() + ((c * 3 + ky) * 3 + kx) * hw;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
                          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                          for (std::size_t ox = 0; ox < wo; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                            dx.data[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] +=
                                src[oy * wo + ox];
                          }
                        }
                      }
                }
              });
}

template <typename T>
Var Graph<T>::max_pool_rows(Var a) {
  const auto& A = value(a);
  require_rank("max_pool_rows", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  if (m == 0) throw ShapeError("max_pool_rows: no rows");
  Tensor<T> out({1, n});
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    T best = A.at(0, j);
    T second = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 1; i < m; ++i) {
      if (A.at(i, j) > best) {
        second = best;
        best = A.at(i, j);
        arg[j] = i;
      } else if (A.at(i, j) > second) {
        second = A.at(i, j);
      }
    }
    if (m > 1) kink_margin_ = std::min(kink_margin_, static_cast<double>(best - second));
    out.data[j] = best;
  }
  return push("max_pool_rows", std::move(out), needs(a), [a, arg, n](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    auto& da = g.grad_of(a.id);
    for (std::size_t j = 0; j < n; ++j) da.at(arg[j], j) += d.data[j];
  });
}

template <typename T>
Var Graph<T>::mean_pool_rows(Var a) {
  const auto& A = value(a);
  require_rank("mean_pool_rows", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  if (m == 0) throw ShapeError("mean_pool_rows: no rows");
  Tensor<T> out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[j] += A.at(i, j);
  for (auto& v : out.data) v /= static_cast<T>(m);
  return push("mean_pool_rows", std::move(out), needs(a), [a, m, n](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    auto& da = g.grad_of(a.id);
    const T inv = T(1) / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) += d.data[j] * inv;
  });
}

template <typename T>
Var Graph<T>::global_average_pool_2d(Var a) {
  const auto& A = value(a);
  require_rank("global_average_pool_2d", A, 3);
  const std::size_t c = A.dim(0), hw = A.dim(1) * A.dim(2);
  if (hw == 0) throw ShapeError("global_average_pool_2d: empty feature map");
  Tensor<T> out({1, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T s = T(0);
    for (std::size_t i = 0; i < hw; ++i) s += A.data[ch * hw + i];
    out.data[ch] = s / static_cast<T>(hw);
  }
  return push("global_average_pool_2d", std::move(out), needs(a), [a, c, hw](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    auto& da = g.grad_of(a.id);
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) da.data[ch * hw + i] += d.data[ch] * inv;
  });
}

template <typename T>
Var Graph<T>::layer_norm(Var a) {
  const auto& A = value(a);
  require_rank("layer_norm", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<T> out({m, n});
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto x = A.row(i);
    T mean = T(0);
    for (T v : x) mean += v;
    mean /= static_cast<T>(n);
    T var = T(0);
    for (T v : x) var += (v - mean) * (v - mean);
    var /= static_cast<T>(n);
    inv_std[i] = T(1) / std::sqrt(var + layer_norm_eps);
    auto y = out.row(i);
    for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mean) * inv_std[i];
  }
  return push("layer_norm", std::move(out), needs(a), [a, m, n, inv_std](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    const auto& y = g.value(Var{self});
    auto& da = g.grad_of(a.id);
    for (std::size_t i = 0; i < m; ++i) {
      T mean_d = T(0), mean_dy = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        mean_d += d.at(i, j);
        mean_dy += d.at(i, j) * y.at(i, j);
      }
      mean_d /= static_cast<T>(n);
      mean_dy /= static_cast<T>(n);
      for (std::size_t j = 0; j < n; ++j) {
        da.at(i, j) += inv_std[i] * (d.at(i, j) - mean_d - y.at(i, j) * mean_dy);
      }
    }
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Tensor<T> out = value(a);
  for (auto& v : out.data) v *= factor;
  return push("scale", std::move(out), needs(a), [a, factor](Graph& g, std::size_t self) {
    const auto& d = g.out_grad(self);
    auto& da = g.grad_of(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) da.data[i] += d.data[i] * factor;
  });
}

template <typename T>
void Graph<T>::backward(Var out, const Tensor<T>& seed) {
  if (seed.shape != value(out).shape) {
    throw ShapeError("backward: seed " + shape_string(seed.shape) + " does not match output " +
                     shape_string(value(out).shape));
  }
  for (auto& n : nodes_) n.grad = Tensor<T>();
  if (!nodes_[out.id].needs_grad) return;
  grad_of(out.id) = seed;
  for (std::size_t id = out.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.back || n.grad.shape != n.value.shape) continue;
    n.back(*this, id);
  }
}

template <typename T>
void Graph<T>::backward(Var out) {
  const auto& v = value(out);
  if (v.size() != 1) throw ShapeError("backward: output is not a scalar: " + shape_string(v.shape));
  backward(out, Tensor<T>(v.shape, T(1)));
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Graph<T>::param_grads() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (const auto& n : nodes_) {
    if (!n.param.empty() && n.grad.shape == n.value.shape) out.emplace_back(n.param, &n.grad);
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace mmpcqa
