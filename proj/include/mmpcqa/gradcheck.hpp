#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mmpcqa/autodiff.hpp"

namespace mmpcqa {

inline constexpr double kGradCheckStep = 1e-5;

// |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
double relative_error(double analytic, double numeric);

// Builds the function under test on a fresh graph from leaf variables.
using GraphFunction = std::function<Var(Graph<double>&, std::span<const Var>)>;

// Checks `fn` at the given inputs. Non-scalar outputs are reduced with a fixed
// random projection so every output coordinate contributes. Returns the
// maximum relative error over all input coordinates (central differences).
double grad_check(const GraphFunction& fn, const std::vector<Tensor<double>>& inputs,
                  std::uint64_t projection_seed = 7, double step = kGradCheckStep);

// A nonzero partial under this is too close to the roundoff floor of the
// central difference for a relative error to mean anything.
inline constexpr double kMinCheckedGradient = 1e-3;
inline constexpr std::uint64_t kMaxRedraws = 500;

// Same, with inputs drawn from N(0,1) for the given shapes. Redrawn (inputs
// and projection) while some nonzero analytic partial is below
// kMinCheckedGradient; the finite differences are never consulted for this.
double grad_check(const GraphFunction& fn, const std::vector<Shape>& shapes, std::uint64_t seed,
                  double step = kGradCheckStep);

// Generic form: `loss` evaluates a scalar from the current contents of
// `targets`, `analytic` holds the gradient for each target. Every coordinate
// of every target is perturbed by +-step and restored.
double check_gradients(const std::function<double()>& loss, std::span<Tensor<double>* const> targets,
                       std::span<const Tensor<double>> analytic, double step = kGradCheckStep);

double min_nonzero_abs(std::span<const Tensor<double>> grads);

Tensor<double> random_normal(const Shape& shape, std::uint64_t seed);

}  // namespace mmpcqa
