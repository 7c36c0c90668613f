#include "mmpcqa/evalkit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "mmpcqa/rng.hpp"

namespace mmpcqa {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("correlation: length mismatch");
  if (x.size() < 2) throw DegenerateInput("need at least 2 items");
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double a : v) s += (a - m) * (a - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double rmse_of(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

// y ~ slope * x + intercept
std::pair<double, double> affine_fit(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mx};
}

// 1 / (1 + exp(z)) without overflow.
double inv_one_plus_exp(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

double sse(const std::array<double, 5>& b, std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = logistic5(b, x[i]) - y[i];
    s += r * r;
  }
  return s;
}

LogisticFit levenberg_marquardt(std::array<double, 5> beta, std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  LogisticFit fit;
  double cur = sse(beta, x, y);
  double lambda = 1e-3;
  for (int it = 0; it < kLogisticMaxIterations; ++it) {
    fit.iterations = it + 1;
    Eigen::Matrix<double, 5, 5> jtj = Eigen::Matrix<double, 5, 5>::Zero();
    Eigen::Matrix<double, 5, 1> jtr = Eigen::Matrix<double, 5, 1>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const double s = inv_one_plus_exp(beta[1] * (x[i] - beta[2]));
      const double ds = s * (1.0 - s);
      Eigen::Matrix<double, 5, 1> j;
      j << 0.5 - s, beta[0] * ds * (x[i] - beta[2]), -beta[0] * ds * beta[1], x[i], 1.0;
      const double r = logistic5(beta, x[i]) - y[i];
      jtj += j * j.transpose();
      jtr += j * r;
    }

    bool improved = false;
    double next = cur;
    std::array<double, 5> trial = beta;
    while (lambda < 1e16) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      for (int d = 0; d < 5; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Eigen::Matrix<double, 5, 1> delta = a.ldlt().solve(-jtr);
      for (int d = 0; d < 5; ++d) trial[static_cast<std::size_t>(d)] = beta[static_cast<std::size_t>(d)] + delta(d);
      next = sse(trial, x, y);
      if (std::isfinite(next) && next < cur) {
        improved = true;
        lambda = std::max(lambda / 10.0, 1e-15);
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) {
      // No descent direction left at working precision: stationary point.
      fit.converged = true;
      break;
    }
    const double old_rmse = std::sqrt(cur / static_cast<double>(n));
    const double new_rmse = std::sqrt(next / static_cast<double>(n));
    beta = trial;
    cur = next;
    if (old_rmse - new_rmse <= kLogisticRelTolerance * std::max(old_rmse, std::numeric_limits<double>::min())) {
      fit.converged = true;
      break;
    }
  }
  fit.beta = beta;
  fit.rmse = std::sqrt(cur / static_cast<double>(n));
  return fit;
}

}  // namespace

std::vector<double> fractional_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DegenerateInput("zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return pearson(rx, ry);
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });

  auto pairs = [](std::uint64_t t) { return t * (t - 1) / 2; };
  std::uint64_t ties_x = 0, ties_xy = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    ties_x += pairs(j - i + 1);
    for (std::size_t a = i; a <= j;) {
      std::size_t b = a;
      while (b + 1 <= j && y[idx[b + 1]] == y[idx[a]]) ++b;
      ties_xy += pairs(b - a + 1);
      a = b + 1;
    }
    i = j + 1;
  }

  // Merge sort on y counting strict inversions (discordant pairs).
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, k = lo;
      while (a < mid && b < hi) {
        if (ys[b] < ys[a]) {
          swaps += mid - a;
          buf[k++] = ys[b++];
        } else {
          buf[k++] = ys[a++];
        }
      }
      while (a < mid) buf[k++] = ys[a++];
      while (b < hi) buf[k++] = ys[b++];
    }
    std::swap(ys, buf);
  }

  std::uint64_t ties_y = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && ys[j + 1] == ys[i]) ++j;
    ties_y += pairs(j - i + 1);
    i = j + 1;
  }

  const double total = static_cast<double>(pairs(n));
  const double nx = total - static_cast<double>(ties_x);
  const double ny = total - static_cast<double>(ties_y);
  if (!(nx > 0.0) || !(ny > 0.0)) throw DegenerateInput("all values tied");
  const double concordant_minus_discordant =
      total - static_cast<double>(ties_x) - static_cast<double>(ties_y) + static_cast<double>(ties_xy) -
      2.0 * static_cast<double>(swaps);
  return std::clamp(concordant_minus_discordant / std::sqrt(nx * ny), -1.0, 1.0);
}

double logistic5(const std::array<double, 5>& b, double x) {
  return b[0] * (0.5 - inv_one_plus_exp(b[1] * (x - b[2]))) + b[3] * x + b[4];
}

LogisticMapping logistic_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("logistic_fit: length mismatch");
  if (x.size() < 5) throw ValidationError("logistic_fit: need at least 5 items, got " + std::to_string(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValidationError("logistic_fit: non-finite input");
  }

  LogisticMapping out;
  const double sx = population_std(x);
  if (!(sx > 0.0)) {
    // Constant regressor: the least-squares answer is the label mean.
    out.fit.beta = {0.0, 0.0, mean_of(x), 0.0, mean_of(y)};
    out.fit.converged = true;
    out.fit.rmse = population_std(y);
    out.mapped.assign(x.size(), mean_of(y));
    return out;
  }

  const auto [slope, intercept] = affine_fit(x, y);
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  const std::array<double, 5> standard{*ymax - *ymin, 1.0 / sx, mean_of(x), slope, intercept};
  const std::array<double, 5> affine{0.0, 1.0 / sx, mean_of(x), slope, intercept};

  LogisticFit a = levenberg_marquardt(standard, x, y);
  LogisticFit b = levenberg_marquardt(affine, x, y);
  out.fit = b.rmse < a.rmse ? b : a;
  out.mapped.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.mapped[i] = logistic5(out.fit.beta, x[i]);
  return out;
}

Metrics correlation_metrics(std::span<const double> predictions, std::span<const double> mos) {
  check_pair(predictions, mos);
  Metrics m;
  m.srcc = spearman(predictions, mos);
  m.krcc = kendall_tau_b(predictions, mos);
  std::vector<double> mapped;
  if (predictions.size() >= 5) {
    auto lm = logistic_fit(predictions, mos);
    m.fit = lm.fit;
    mapped = std::move(lm.mapped);
  } else {
    const auto [slope, intercept] = affine_fit(predictions, mos);
    m.fit.beta = {0.0, 0.0, 0.0, slope, intercept};
    m.fit.converged = true;
    for (double p : predictions) mapped.push_back(slope * p + intercept);
  }
  m.plcc = pearson(mapped, mos);
  m.rmse = rmse_of(mapped, mos);
  m.fit.rmse = m.rmse;
  return m;
}

Metrics correlation_metrics(const PredictionSet& set) {
  std::vector<double> p, y;
  for (const auto& item : set) {
    p.push_back(item.prediction);
    y.push_back(item.mos);
  }
  return correlation_metrics(p, y);
}

std::vector<std::string> FoldPlan::train_contents(std::size_t fold) const {
  std::vector<std::string> out;
  for (std::size_t f = 0; f < test.size(); ++f) {
    if (f != fold) out.insert(out.end(), test[f].begin(), test[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldPlan make_folds(std::vector<std::string> contents, std::size_t k, std::uint64_t seed) {
  std::sort(contents.begin(), contents.end());
  contents.erase(std::unique(contents.begin(), contents.end()), contents.end());
  if (k == 0) throw ValidationError("make_folds: k must be positive");
  if (k > contents.size()) {
    throw ValidationError("make_folds: k=" + std::to_string(k) + " exceeds the " + std::to_string(contents.size()) +
                          " available contents");
  }
  Rng rng(seed);
  std::shuffle(contents.begin(), contents.end(), rng);
  FoldPlan plan;
  plan.test.resize(k);
  const std::size_t base = contents.size() / k, extra = contents.size() % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t take = base + (f < extra ? 1 : 0);
    plan.test[f].assign(contents.begin() + static_cast<std::ptrdiff_t>(pos),
                        contents.begin() + static_cast<std::ptrdiff_t>(pos + take));
    std::sort(plan.test[f].begin(), plan.test[f].end());
    pos += take;
  }
  return plan;
}

FoldReport evaluate_fold(std::size_t fold, const PredictionSet& set) {
  FoldReport r;
  r.fold = fold;
  r.pairs = set;
  try {
    r.metrics = correlation_metrics(set);
  } catch (const DegenerateInput&) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.degenerate = true;
    r.metrics.srcc = r.metrics.krcc = r.metrics.plcc = r.metrics.rmse = nan;
  }
  return r;
}

EvalReport aggregate(std::vector<FoldReport> folds) {
  if (folds.empty()) throw ValidationError("evaluate_run: no folds");
  EvalReport report;
  report.folds = std::move(folds);
  std::size_t used = 0;
  for (const auto& f : report.folds) {
    if (f.degenerate) continue;
    report.mean.srcc += f.metrics.srcc;
    report.mean.krcc += f.metrics.krcc;
    report.mean.plcc += f.metrics.plcc;
    report.mean.rmse += f.metrics.rmse;
    ++used;
  }
  if (used == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.mean.srcc = report.mean.krcc = report.mean.plcc = report.mean.rmse = nan;
  } else {
    const double d = static_cast<double>(used);
    report.mean.srcc /= d;
    report.mean.krcc /= d;
    report.mean.plcc /= d;
    report.mean.rmse /= d;
  }
  return report;
}

EvalReport evaluate_run(const std::vector<PredictionSet>& per_fold) {
  std::vector<FoldReport> folds;
  for (std::size_t f = 0; f < per_fold.size(); ++f) folds.push_back(evaluate_fold(f, per_fold[f]));
  return aggregate(std::move(folds));
}

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double num_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string csv_num(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.folds) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : f.pairs) {
      pairs.push_back({{"prediction", num(p.prediction)}, {"mos", num(p.mos)}, {"content", p.content},
                       {"distortion", p.distortion}});
    }
    nlohmann::json beta = nlohmann::json::array();
    for (double b : f.metrics.fit.beta) beta.push_back(num(b));
    folds.push_back({{"fold", f.fold},
                     {"srcc", num(f.metrics.srcc)},
                     {"krcc", num(f.metrics.krcc)},
                     {"plcc", num(f.metrics.plcc)},
                     {"rmse", num(f.metrics.rmse)},
                     {"beta", beta},
                     {"converged", f.metrics.fit.converged},
                     {"iterations", f.metrics.fit.iterations},
                     {"degenerate", f.degenerate},
                     {"pairs", pairs}});
  }
  return {{"folds", folds},
          {"mean",
           {{"srcc", num(report.mean.srcc)},
            {"krcc", num(report.mean.krcc)},
            {"plcc", num(report.mean.plcc)},
            {"rmse", num(report.mean.rmse)}}}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  for (const auto& f : j.at("folds")) {
    FoldReport fr;
    fr.fold = f.at("fold").get<std::size_t>();
    fr.metrics.srcc = num_from(f.at("srcc"));
    fr.metrics.krcc = num_from(f.at("krcc"));
    fr.metrics.plcc = num_from(f.at("plcc"));
    fr.metrics.rmse = num_from(f.at("rmse"));
    for (std::size_t b = 0; b < 5; ++b) fr.metrics.fit.beta[b] = num_from(f.at("beta").at(b));
    fr.metrics.fit.converged = f.at("converged").get<bool>();
    fr.metrics.fit.iterations = f.value("iterations", 0);
    fr.metrics.fit.rmse = fr.metrics.rmse;
    fr.degenerate = f.value("degenerate", false);
    for (const auto& p : f.at("pairs")) {
      fr.pairs.push_back({num_from(p.at("prediction")), num_from(p.at("mos")), p.at("content").get<std::string>(),
                          p.at("distortion").get<std::string>()});
    }
    r.folds.push_back(std::move(fr));
  }
  const auto& m = j.at("mean");
  r.mean.srcc = num_from(m.at("srcc"));
  r.mean.krcc = num_from(m.at("krcc"));
  r.mean.plcc = num_from(m.at("plcc"));
  r.mean.rmse = num_from(m.at("rmse"));
  return r;
}

std::string report_to_csv(const EvalReport& report) {
  std::string out = "fold,srcc,krcc,plcc,rmse,beta1,beta2,beta3,beta4,beta5,converged\n";
  for (const auto& f : report.folds) {
    out += std::to_string(f.fold);
    for (double v : {f.metrics.srcc, f.metrics.krcc, f.metrics.plcc, f.metrics.rmse}) out += "," + csv_num(v);
    for (double b : f.metrics.fit.beta) out += "," + csv_num(b);
    out += f.metrics.fit.converged ? ",1\n" : ",0\n";
  }
  out += "mean";
  for (double v : {report.mean.srcc, report.mean.krcc, report.mean.plcc, report.mean.rmse}) out += "," + csv_num(v);
  out += ",,,,,,\n";
  return out;
}

}  // namespace mmpcqa
