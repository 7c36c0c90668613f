#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpcqa/error.hpp"

namespace mmpcqa {

// Zero variance or too few items for a correlation.
class DegenerateInput : public ValidationError {
 public:
  DegenerateInput() : ValidationError("degenerate input") {}
  explicit DegenerateInput(const std::string& what) : ValidationError("degenerate input: " + what) {}
};

struct PredictionItem {
  double prediction = 0.0;
  double mos = 0.0;
  std::string content;
  std::string distortion;
};

using PredictionSet = std::vector<PredictionItem>;

// Tie-averaged (fractional) ranks, 1-based.
std::vector<double> fractional_ranks(std::span<const double> v);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
// Kendall tau-b, O(n log n).
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

// f(x) = b1 (1/2 - 1/(1 + exp(b2 (x - b3)))) + b4 x + b5
double logistic5(const std::array<double, 5>& beta, double x);

struct LogisticFit {
  std::array<double, 5> beta{};
  bool converged = false;
  double rmse = 0.0;
  int iterations = 0;
};

struct LogisticMapping {
  LogisticFit fit;
  std::vector<double> mapped;
};

inline constexpr int kLogisticMaxIterations = 500;
inline constexpr double kLogisticRelTolerance = 1e-10;

// Levenberg-Marquardt fit of logistic5 from predictions x to labels y.
// Needs n >= 5. Returns the best iterate with converged=false when the
// iteration budget runs out.
LogisticMapping logistic_fit(std::span<const double> x, std::span<const double> y);

struct Metrics {
  double srcc = 0.0;
  double krcc = 0.0;
  double plcc = 0.0;
  double rmse = 0.0;
  LogisticFit fit;
};

// SRCC/KRCC on raw predictions; PLCC/RMSE after the logistic mapping (an
// affine least-squares mapping when n < 5).
Metrics correlation_metrics(std::span<const double> predictions, std::span<const double> mos);
Metrics correlation_metrics(const PredictionSet& set);

struct FoldPlan {
  std::vector<std::vector<std::string>> test;  // content ids per fold

  std::size_t folds() const { return test.size(); }
  std::vector<std::string> train_contents(std::size_t fold) const;
};

FoldPlan make_folds(std::vector<std::string> contents, std::size_t k, std::uint64_t seed);

struct FoldReport {
  std::size_t fold = 0;
  Metrics metrics;
  bool degenerate = false;  // metrics are NaN when set
  PredictionSet pairs;
};

struct EvalReport {
  std::vector<FoldReport> folds;
  Metrics mean;  // unweighted mean over non-degenerate folds (fit left empty)
};

FoldReport evaluate_fold(std::size_t fold, const PredictionSet& set);
EvalReport evaluate_run(const std::vector<PredictionSet>& per_fold);
EvalReport aggregate(std::vector<FoldReport> folds);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
std::string report_to_csv(const EvalReport& report);

}  // namespace mmpcqa
