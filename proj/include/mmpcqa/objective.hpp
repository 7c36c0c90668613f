#pragma once

#include <span>
#include <vector>

namespace mmpcqa {

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // d loss / d prediction
};

struct LossWeights {
  double mse = 1.0;   // lambda_1
  double rank = 1.0;  // lambda_2

  void validate() const;
};

// (1/n) sum (q - q')^2
LossValue mse_loss(std::span<const double> predictions, std::span<const double> labels);

// (1/n^2) sum_i sum_j max(0, |q_i - q_j| - e(q_i, q_j) (q'_i - q'_j)), with
// e = +1 when q_i >= q_j and -1 otherwise. All n^2 ordered pairs are summed,
// i == j included. The subgradient is 0 at the hinge and at q_i == q_j.
LossValue rank_loss(std::span<const double> predictions, std::span<const double> labels);

LossValue total_loss(std::span<const double> predictions, std::span<const double> labels,
                     const LossWeights& weights = {});

}  // namespace mmpcqa
