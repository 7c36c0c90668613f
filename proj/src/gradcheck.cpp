#include "mmpcqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmpcqa/error.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

Tensor<double> random_normal(const Shape& shape, std::uint64_t seed) {
  Tensor<double> t(shape);
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

double check_gradients(const std::function<double()>& loss, std::span<Tensor<double>* const> targets,
                       std::span<const Tensor<double>> analytic, double step) {
  if (targets.size() != analytic.size()) throw ValidationError("check_gradients: target/gradient count mismatch");
  double worst = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Tensor<double>& x = *targets[t];
    if (analytic[t].shape != x.shape) {
      throw ShapeError("check_gradients: gradient shape " + shape_string(analytic[t].shape) +
                       " does not match " + shape_string(x.shape));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x.data[i];
      x.data[i] = orig + step;
      const double up = loss();
      x.data[i] = orig - step;
      const double down = loss();
      x.data[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) throw RuntimeError("grad_check: non-finite loss");
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[t].data[i], numeric));
    }
  }
  return worst;
}

namespace {

struct Projected {
  const GraphFunction& fn;
  std::uint64_t projection_seed;
  Tensor<double> projection;

  double operator()(const std::vector<Tensor<double>>& work, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var> leaves;
    for (const auto& t : work) leaves.push_back(g.variable(t));
    Var out = fn(g, leaves);
    const auto& y = g.value(out);
    if (projection.shape != y.shape) projection = random_normal(y.shape, projection_seed);
    double f = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) f += projection.data[i] * y.data[i];
    if (grads) {
      g.backward(out, projection);
      grads->clear();
      for (std::size_t k = 0; k < leaves.size(); ++k) {
        const auto& gr = g.grad(leaves[k]);
        grads->push_back(gr.shape == work[k].shape ? gr : Tensor<double>(work[k].shape));
      }
    }
    return f;
  }
};

double check_projected(Projected& eval, std::vector<Tensor<double>>& work,
                       const std::vector<Tensor<double>>& analytic, double step) {
  std::vector<Tensor<double>*> targets;
  for (auto& t : work) targets.push_back(&t);
  return check_gradients([&] { return eval(work, nullptr); }, targets, analytic, step);
}

}  // namespace

double min_nonzero_abs(std::span<const Tensor<double>> grads) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& t : grads) {
    for (double v : t.data) {
      if (v != 0.0) m = std::min(m, std::abs(v));
    }
  }
  return m;
}

double grad_check(const GraphFunction& fn, const std::vector<Tensor<double>>& inputs,
                  std::uint64_t projection_seed, double step) {
  std::vector<Tensor<double>> work = inputs;
  Projected eval{fn, projection_seed, {}};
  std::vector<Tensor<double>> analytic;
  eval(work, &analytic);
  return check_projected(eval, work, analytic, step);
}

double grad_check(const GraphFunction& fn, const std::vector<Shape>& shapes, std::uint64_t seed, double step) {
  for (std::uint64_t attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::vector<Tensor<double>> work;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      work.push_back(random_normal(shapes[i], mix_seed(seed, {attempt, i})));
    }
    Projected eval{fn, mix_seed(seed, {attempt, 0xface}), {}};
    std::vector<Tensor<double>> analytic;
    eval(work, &analytic);
    if (min_nonzero_abs(analytic) < kMinCheckedGradient) continue;
    return check_projected(eval, work, analytic, step);
  }
  throw RuntimeError("grad_check: no well-conditioned point after redraws");
}

}  // namespace mmpcqa
