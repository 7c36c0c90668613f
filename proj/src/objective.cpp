#include "mmpcqa/objective.hpp"

#include <cmath>
#include <string>

#include "mmpcqa/error.hpp"

namespace mmpcqa {

namespace {

void check_batch(std::span<const double> q, std::span<const double> labels) {
  if (q.empty()) throw ValidationError("loss: empty batch");
  if (q.size() != labels.size()) {
    throw ValidationError("loss: " + std::to_string(q.size()) + " predictions for " + std::to_string(labels.size()) +
                          " labels");
  }
  for (double l : labels) {
    if (!std::isfinite(l)) throw ValidationError("loss: non-finite label");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (mse < 0.0 || rank < 0.0) throw ValidationError("loss weights must be non-negative");
  if (mse == 0.0 && rank == 0.0) throw ValidationError("loss weights must not both be zero");
}

LossValue mse_loss(std::span<const double> q, std::span<const double> labels) {
  check_batch(q, labels);
  const double n = static_cast<double>(q.size());
  LossValue out;
  out.grad.resize(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double d = q[i] - labels[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

LossValue rank_loss(std::span<const double> q, std::span<const double> labels) {
  check_batch(q, labels);
  const std::size_t n = q.size();
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  LossValue out;
  out.grad.assign(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double e = q[i] >= q[j] ? 1.0 : -1.0;
      const double term = std::abs(q[i] - q[j]) - e * (labels[i] - labels[j]);
      if (term > 0.0) {
        sum += term;
        // d|q_i - q_j| / dq_i = sign(q_i - q_j); zero when equal.
        const double s = q[i] > q[j] ? 1.0 : (q[i] < q[j] ? -1.0 : 0.0);
        out.grad[i] += s * norm;
        out.grad[j] -= s * norm;
      }
    }
  }
  out.value = sum / (static_cast<double>(n) * static_cast<double>(n));
  return out;
}

LossValue total_loss(std::span<const double> q, std::span<const double> labels, const LossWeights& w) {
  w.validate();
  LossValue out;
  out.grad.assign(q.size(), 0.0);
  if (w.mse != 0.0) {
    const auto m = mse_loss(q, labels);
    out.value += w.mse * m.value;
    for (std::size_t i = 0; i < q.size(); ++i) out.grad[i] += w.mse * m.grad[i];
  }
  if (w.rank != 0.0) {
    const auto r = rank_loss(q, labels);
    out.value += w.rank * r.value;
    for (std::size_t i = 0; i < q.size(); ++i) out.grad[i] += w.rank * r.grad[i];
  }
  if (w.mse == 0.0 && w.rank == 0.0) check_batch(q, labels);
  return out;
}

}  // namespace mmpcqa
