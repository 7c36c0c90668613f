#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmpcqa/gradcheck.hpp"
#include "mmpcqa/harness.hpp"
#include "mmpcqa/rng.hpp"
#include "oracles.hpp"

using namespace mmpcqa;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kMetricTolerance = 1e-9;
constexpr double kOrderTolerance = 1e-5;
constexpr double kSoftmaxTolerance = 1e-10;
constexpr double kGapTolerance = 1e-12;
constexpr double kOverfitSrcc = 0.9;
constexpr double kOverfitLossRatio = 0.1;
constexpr double kOverfitSeconds = 600.0;
constexpr double kAffineSlack = 1e-6;
constexpr double kIdentityRmse = 1e-9;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (notes.size() < 8) notes.push_back(what);
    }
  }
  void info(const std::string& s) { notes.push_back(s); }
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> normals(std::size_t n, std::uint64_t seed) { return random_normal({n}, seed).data; }

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / double(a.size()));
}

// Small model used wherever only the plumbing matters.
RunConfig tiny_config(const fs::path& manifest) {
  RunConfig c;
  c.manifest = manifest.string();
  c.model.n_s = 32;
  c.model.n_p = 2;
  c.model.n_i = 2;
  c.model.point_hidden = {8};
  c.model.c_p = 16;
  c.model.image_channels = {4, 8};
  c.model.patch = 32;
  c.model.c_fused = 8;
  c.model.heads = 2;
  c.model.ffn = 16;
  c.model.head_hidden = 8;
  c.render.width = c.render.height = 64;
  c.render.crop = 32;
  c.optim.adam.lr = 1e-3;
  c.optim.epochs = 1;
  c.optim.batch_size = 4;
  c.seed = 11;
  return c;
}

// 9 contents x 2 distortions x 2 levels, 512 points: 45 clouds.
const DatasetManifest& nine_content_data(const fs::path& work) {
  static const DatasetManifest m = [&] {
    SynthOptions o;
    o.contents = 9;
    o.types = {DistortionKind::geom_noise, DistortionKind::color_noise};
    o.levels = 2;
    o.points = 512;
    o.seed = 21;
    return build_dataset(o, work / "data9");
  }();
  return m;
}

NormalizedCloud random_cloud(std::size_t n, std::uint64_t seed, bool grid) {
  NormalizedCloud c;
  if (grid) {
    // Integer lattice: many equal distances.
    const auto side = static_cast<std::size_t>(std::ceil(std::cbrt(double(n))));
    for (std::size_t i = 0; c.geometry.size() < n; ++i) {
      c.geometry.push_back({double(i % side), double((i / side) % side), double(i / (side * side))});
    }
  } else {
    const auto t = random_normal({n, 3}, seed);
    for (std::size_t i = 0; i < n; ++i) c.geometry.push_back({t.at(i, 0), t.at(i, 1), t.at(i, 2)});
  }
  return c;
}

ModelConfig small_model() {
  ModelConfig c = toy_model_config();
  c.n_s = 16;
  c.n_p = 4;
  c.n_i = 3;
  return c;
}

template <typename T>
ModelInputs<T> random_inputs(const ModelConfig& c, std::uint64_t seed) {
  ModelInputs<T> in;
  for (std::size_t i = 0; i < c.n_p; ++i) {
    in.submodels.push_back(random_normal({c.n_s, 3}, mix_seed(seed, {0, i})).cast<T>());
  }
  for (std::size_t i = 0; i < c.n_i; ++i) {
    auto p = random_normal({3, c.patch, c.patch}, mix_seed(seed, {1, i}));
    for (auto& v : p.data) v = 0.5 + 0.2 * v;
    in.patches.push_back(p.cast<T>());
  }
  return in;
}

template <typename T>
ParameterStore<T> random_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = init_params<T>(model_param_specs(c), seed);
  Rng rng(mix_seed(seed, {0xb1a5}));
  std::normal_distribution<double> g(0.0, 0.1);
  for (const auto& n : p.names()) {
    if (n.size() > 2 && n.substr(n.size() - 2) == ".b") {
      for (auto& v : p.mutable_value(n).data) v = static_cast<T>(g(rng));
    }
  }
  return p;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite_criterion() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = gradient_suite();
  const double elapsed = seconds_since(t0);
  double worst_ratio = 0.0;
  for (const auto& r : rows) {
    o.require(r.pass(), r.name + " error " + num(r.max_error) + " > " + num(r.tolerance));
    worst_ratio = std::max(worst_ratio, r.max_error / r.tolerance);
  }
  o.require(elapsed < kGradSuiteSeconds, "took " + num(elapsed) + " s");
  o.info(std::to_string(rows.size()) + " rows, worst error/tolerance " + num(worst_ratio) + ", " + num(elapsed) + " s");
  return o;
}

Outcome oracle_criterion() {
  Outcome o;
  std::size_t clouds = 0;
  for (std::uint64_t s = 0; s < 24; ++s) {
    const std::size_t n = s == 0 ? 512 : 8 + (s * 37) % 505;
    const auto cloud = random_cloud(n, mix_seed(s, {0xc10d}), s % 3 == 0);
    std::vector<oracle::P3> pts(cloud.geometry.begin(), cloud.geometry.end());
    const std::size_t k = std::max<std::size_t>(1, std::min<std::size_t>(n, 96) / (1 + s % 2));
    const std::size_t start = s % n;
    o.require(fps(cloud, k, start) == oracle::fps(pts, k, start), "fps differs, n=" + std::to_string(n));
    for (std::size_t a : {std::size_t{0}, n / 2, n - 1}) {
      for (std::size_t kk : {std::size_t{1}, std::min<std::size_t>(n, 33), n}) {
        o.require(knn(cloud, a, kk) == oracle::knn(pts, a, kk), "knn differs, n=" + std::to_string(n));
      }
    }
    ++clouds;
  }

  std::size_t losses = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::size_t n = 2 + s % 40;
    auto q = normals(n, mix_seed(s, {0x7a}));
    auto y = normals(n, mix_seed(s, {0x7b}));
    if (s % 2 == 0) {
      for (auto& v : q) v = std::round(v * 2.0) / 2.0;
      for (auto& v : y) v = std::round(v);
    }
    const double got = rank_loss(q, y).value;
    const double want = oracle::rank_loss(q, y);
    o.require(got == want, "rank_loss " + num(got) + " vs " + num(want));
    ++losses;
  }

  std::size_t vectors = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; vectors < 100; ++s) {
    const std::size_t n = 5 + s % 60;
    auto x = normals(n, mix_seed(s, {0x31}));
    auto y = normals(n, mix_seed(s, {0x32}));
    for (std::size_t i = 0; i < n; ++i) y[i] += 0.6 * x[i];
    if (s % 2 == 0) {
      for (auto& v : x) v = std::round(v * 2.0);
      for (auto& v : y) v = std::round(v);
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) {
      continue;
    }
    const auto m = correlation_metrics(x, y);
    const auto lm = logistic_fit(x, y);
    const double d[] = {std::abs(m.srcc - oracle::spearman(x, y)), std::abs(m.krcc - oracle::kendall_tau_b(x, y)),
                        std::abs(m.plcc - oracle::pearson(lm.mapped, y)), std::abs(m.rmse - rmse(lm.mapped, y))};
    for (double v : d) {
      worst = std::max(worst, v);
      o.require(v <= kMetricTolerance, "metric differs by " + num(v));
    }
    ++vectors;
  }
  o.info(std::to_string(clouds) + " clouds, " + std::to_string(losses) + " loss draws, " + std::to_string(vectors) +
         " metric vectors (max |d| " + num(worst) + ")");
  return o;
}

Outcome formula_criterion() {
  Outcome o;
  std::size_t cases = 0;
  for (std::size_t n : {64, 100, 127, 128, 129, 500, 512, 1000}) {
    // ns == 1 would need n + 1 distinct anchors; patch_up caps it at n.
    for (std::size_t ns : {2, 16, 32, 64}) {
      if (ns > n) continue;
      const auto cloud = normalize(random_cloud(n, mix_seed(n, {ns}), false));
      const auto set = patch_up(cloud, ns);
      o.require(set.count() == n / ns + 1, "count " + std::to_string(set.count()) + " for n=" + std::to_string(n));
      o.require(set.count() * ns > n, "count * ns <= n for n=" + std::to_string(n));
      for (const auto& sm : set.submodels) o.require(sm.size() == ns, "sub-model size");
      ++cases;
    }
  }

  for (auto mode : {FusionMode::token, FusionMode::pooled}) {
    for (auto norm : {NormPlacement::post, NormPlacement::pre}) {
      for (auto wiring : {AttentionWiring::cross, AttentionWiring::guide_only}) {
        for (std::size_t cf : {8, 12}) {
          auto c = small_model();
          c.mode = mode;
          c.norm = norm;
          c.wiring = wiring;
          c.c_fused = cf;
          const Network<double> net(c);
          auto p = random_params<double>(c, 3 + cf);
          Graph<double> g;
          const auto t = net.forward(g, p, random_inputs<double>(c, cf));
          o.require(g.value(t.fusion.quality).shape == Shape{1, 4 * cf}, "fusion width");
          ++cases;
        }
      }
    }
  }

  auto c = small_model();
  c.image_channels = {4, 6, 8};
  const Network<double> net(c);
  auto p = random_params<double>(c, 5);
  for (std::uint64_t s = 0; s < 3; ++s) {
    Graph<double> g;
    std::vector<Var> stages;
    const auto& emb = g.value(net.encode_image(g, p, g.constant(random_inputs<double>(c, s).patches[0]), &stages));
    o.require(stages.size() == c.image_channels.size(), "stage count");
    std::size_t off = 0;
    for (Var st : stages) {
      const auto& v = g.value(st);
      const std::size_t hw = v.dim(1) * v.dim(2);
      for (std::size_t ch = 0; ch < v.dim(0); ++ch) {
        double m = 0.0;
        for (std::size_t i = 0; i < hw; ++i) m += v.data[ch * hw + i];
        o.require(std::abs(emb.data[off + ch] - m / double(hw)) <= kGapTolerance, "stage GAP mismatch");
      }
      off += v.dim(0);
    }
    o.require(off == emb.cols(), "embedding width " + std::to_string(emb.cols()));
    ++cases;
  }
  o.info(std::to_string(cases) + " cases");
  return o;
}

Outcome symmetry_criterion() {
  Outcome o;
  const auto c = small_model();
  const Network<float> net(c);
  double worst_order = 0.0, worst_row = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto p = random_params<float>(c, mix_seed(s, {1}));
    auto in = random_inputs<float>(c, mix_seed(s, {2}));

    // Point permutation inside one sub-model.
    std::vector<std::size_t> order(c.n_s);
    for (std::size_t i = 0; i < c.n_s; ++i) order[i] = i;
    Rng rng(mix_seed(s, {3}));
    std::shuffle(order.begin(), order.end(), rng);
    Tensor<float> perm = in.submodels[0];
    for (std::size_t i = 0; i < c.n_s; ++i) {
      for (std::size_t k = 0; k < 3; ++k) perm.at(i, k) = in.submodels[0].at(order[i], k);
    }
    Graph<float> g;
    const auto a = g.value(net.encode_submodel(g, p, g.constant(in.submodels[0]))).data;
    const auto b = g.value(net.encode_submodel(g, p, g.constant(perm))).data;
    o.require(a == b, "permuted sub-model embedding differs");

    // Sub-model and projection order.
    const double base = net.predict(p, in);
    auto shuffled = in;
    std::shuffle(shuffled.submodels.begin(), shuffled.submodels.end(), rng);
    std::shuffle(shuffled.patches.begin(), shuffled.patches.end(), rng);
    const double d = std::abs(net.predict(p, shuffled) - base);
    worst_order = std::max(worst_order, d);
    o.require(d <= kOrderTolerance, "reordering moved the score by " + num(d));
  }

  // Attention rows in the double network, plus the bare operator.
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Network<double> dnet(c);
    auto p = random_params<double>(c, mix_seed(s, {4}));
    Graph<double> g;
    const auto t = dnet.forward(g, p, random_inputs<double>(c, mix_seed(s, {5})));
    std::vector<Var> mats = t.fusion.attention_weights;
    auto logits = random_normal({7, 9}, mix_seed(s, {6}));
    for (auto& v : logits.data) v *= 30.0;
    mats.push_back(g.softmax(g.constant(logits)));
    for (Var m : mats) {
      const auto& w = g.value(m);
      for (std::size_t r = 0; r < w.rows(); ++r) {
        double sum = 0.0;
        for (double v : w.row(r)) sum += v;
        worst_row = std::max(worst_row, std::abs(sum - 1.0));
      }
    }
  }
  o.require(worst_row <= kSoftmaxTolerance, "softmax row off by " + num(worst_row));
  o.info("max reorder change " + num(worst_order) + ", max row error " + num(worst_row));
  return o;
}

Outcome overfit_criterion(const fs::path& work) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SynthOptions so;
  so.points = 4096;
  so.seed = 3;
  const auto manifest = build_dataset(so, work / "overfit_data");

  RunConfig c;
  c.manifest = (work / "overfit_data" / "manifest.csv").string();
  c.model.n_s = 128;
  c.model.n_p = 6;
  c.model.n_i = 4;
  c.model.point_hidden = {32, 64};
  c.model.c_p = 128;
  c.model.image_channels = {16, 32, 64, 128};
  c.model.patch = 64;
  c.model.c_fused = 64;
  c.model.heads = 2;
  c.model.ffn = 256;
  c.model.head_hidden = 128;
  c.render.width = c.render.height = 128;
  c.render.crop = 64;
  c.optim.adam.lr = 1e-3;
  c.optim.epochs = 200;
  c.resample = ResamplePolicy::fixed;
  c.seed = 3;

  const auto items = items_for_contents(manifest, manifest.contents());
  const auto result = train(c, manifest, items);
  const auto report = evaluate(c, result.final_params, manifest, items);
  const double elapsed = seconds_since(t0);

  const double initial = result.log.front().loss, final = result.log.back().loss;
  o.require(report.metrics.srcc >= kOverfitSrcc, "train SRCC " + num(report.metrics.srcc));
  o.require(final < kOverfitLossRatio * initial, "final loss " + num(final) + " vs initial " + num(initial));
  o.require(elapsed <= kOverfitSeconds, "took " + num(elapsed) + " s");
  o.info(std::to_string(items.size()) + " clouds, train SRCC " + num(report.metrics.srcc) + ", loss " + num(initial) +
         " -> " + num(final) + ", " + num(elapsed) + " s");
  return o;
}

Outcome xval_criterion(const fs::path& work) {
  Outcome o;
  const auto& m = nine_content_data(work);
  o.require(m.contents().size() == 9, "dataset has " + std::to_string(m.contents().size()) + " contents");
  auto c = tiny_config(m.base_dir / "manifest.csv");
  const auto out = work / "xval9";
  fs::remove_all(out);
  const auto r = xval(c, 9, out);
  o.require(r.report.folds.size() == 9, "report has " + std::to_string(r.report.folds.size()) + " folds");

  std::set<std::string> tested;
  std::size_t train_lines = 0, eval_lines = 0;
  for (std::size_t f = 0; f < r.plan.folds(); ++f) {
    const auto& test = r.plan.test[f];
    o.require(test.size() == 1, "fold " + std::to_string(f) + " tests " + std::to_string(test.size()) + " contents");
    tested.insert(test.begin(), test.end());
    const auto train = r.plan.train_contents(f);
    for (const auto& t : train) {
      o.require(std::find(test.begin(), test.end(), t) == test.end(), "content " + t + " in both splits");
    }
    o.require(train.size() + test.size() == 9, "fold does not cover all contents");

    const auto dir = out / ("fold_" + std::to_string(f));
    const auto split = nlohmann::json::parse(slurp(dir / "split.json"));
    o.require(split["test_contents"].get<std::vector<std::string>>() == test, "split.json disagrees with the plan");

    std::ifstream log(dir / "access.log");
    std::string kind, path;
    std::set<std::string> evaluated;
    while (log >> kind >> path) {
      const auto content = fs::path(path).parent_path().filename().string();
      const bool is_test = std::find(test.begin(), test.end(), content) != test.end();
      if (kind == "train") {
        o.require(!is_test, "fold " + std::to_string(f) + " trained on " + path);
        ++train_lines;
      } else if (kind == "eval") {
        o.require(is_test, "fold " + std::to_string(f) + " evaluated " + path);
        evaluated.insert(path);
        ++eval_lines;
      } else {
        o.require(false, "unknown access log entry " + kind);
      }
    }
    o.require(evaluated.size() == items_for_contents(m, test).size(), "fold " + std::to_string(f) +
                                                                           " evaluated " +
                                                                           std::to_string(evaluated.size()) + " items");
  }
  o.require(tested.size() == 9, "only " + std::to_string(tested.size()) + " contents tested");
  o.info("9 folds, " + std::to_string(train_lines) + " train and " + std::to_string(eval_lines) + " eval file reads");
  return o;
}

Outcome logistic_criterion() {
  Outcome o;
  const std::function<double(double)> shapes[] = {
      [](double x) { return 5.0 + 4.0 * std::tanh(1.5 * x); },
      [](double x) { return std::exp(x); },
      [](double x) { return x * x * x + x; },
      [](double x) { return 2.0 * x - 1.0; },
      [](double x) { return 1.0 / (1.0 + std::exp(-6.0 * x)) * 9.0 + 1.0; },
  };
  double worst = -1e300;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::size_t n = 8 + (s * 7) % 60;
    auto x = normals(n, mix_seed(s, {0x51}));
    const auto noise = normals(n, mix_seed(s, {0x52}));
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) y.push_back(shapes[s % 5](x[i]) + 0.05 * (1 + s % 4) * noise[i]);
    const auto fit = logistic_fit(x, y);
    const double affine = oracle::affine_rmse(x, y);
    worst = std::max(worst, fit.fit.rmse - affine);
    o.require(fit.fit.rmse <= affine + kAffineSlack,
              "dataset " + std::to_string(s) + ": " + num(fit.fit.rmse) + " > affine " + num(affine));
  }
  double identity = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto x = normals(20 + 10 * s, mix_seed(s, {0x53}));
    identity = std::max(identity, logistic_fit(x, x).fit.rmse);
  }
  o.require(identity <= kIdentityRmse, "identity RMSE " + num(identity));
  o.info("50 datasets, max (fit - affine) " + num(worst) + ", identity RMSE " + num(identity));
  return o;
}

Outcome ablation_criterion(const fs::path& work) {
  Outcome o;
  const auto& m = nine_content_data(work);
  auto c = tiny_config(m.base_dir / "manifest.csv");
  const auto out = work / "ablation";
  fs::remove_all(out);
  const std::pair<std::string, std::vector<std::string>> studies[] = {
      {"modality", {"P", "I", "P+I", "P+I+SCMA"}},
      {"patching", {"FPS", "Patch-up"}},
  };
  std::string summary;
  for (const auto& [study, names] : studies) {
    const auto rows = ablate(c, study, 3, out);
    std::vector<std::string> got;
    for (const auto& r : rows) {
      got.push_back(r.variant);
      o.require(r.study == study, "row study " + r.study);
      for (double v : {r.metrics.srcc, r.metrics.krcc, r.metrics.plcc}) {
        o.require(std::isnan(v) || (v >= -1.0 && v <= 1.0), study + "/" + r.variant + " correlation " + num(v));
      }
      o.require(std::isnan(r.metrics.rmse) || r.metrics.rmse >= 0.0, "negative RMSE");
    }
    o.require(got == names, study + " variants do not match");

    const auto csv = slurp(out / ("ablation_" + study + ".csv"));
    o.require(csv == ablation_to_csv(rows), "ablation_" + study + ".csv differs from the rows");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    o.require(line == "study,variant,srcc,krcc,plcc,rmse", "bad csv header");
    std::size_t data_lines = 0;
    while (std::getline(lines, line)) {
      o.require(std::count(line.begin(), line.end(), ',') == 5, "bad csv row: " + line);
      ++data_lines;
    }
    o.require(data_lines == names.size(), study + " csv has " + std::to_string(data_lines) + " rows");
    for (const auto& n : names) {
      std::string d = n;
      std::replace(d.begin(), d.end(), '+', '_');
      const auto report = out / study / d / "report.json";
      o.require(fs::exists(report), "missing " + report.string());
      if (fs::exists(report)) {
        const auto back = report_from_json(nlohmann::json::parse(slurp(report)));
        o.require(back.folds.size() == 3, "report for " + n + " has " + std::to_string(back.folds.size()) + " folds");
      }
    }
    summary += (summary.empty() ? "" : ", ") + study + " " + std::to_string(rows.size()) + " variants";
  }
  o.info(summary);
  return o;
}

Outcome reproducibility_criterion(const fs::path& work) {
  Outcome o;
  const auto& m = nine_content_data(work);
  auto c = tiny_config(m.base_dir / "manifest.csv");
  c.optim.epochs = 2;
  const auto items = items_for_contents(m, m.contents());

  const auto a = train(c, m, items);
  const auto b = train(c, m, items);
  o.require(serialize_checkpoint(a.final_params) == serialize_checkpoint(b.final_params), "final checkpoints differ");
  o.require(serialize_checkpoint(a.best_params) == serialize_checkpoint(b.best_params), "best checkpoints differ");

  const auto dir = work / "repro_train";
  fs::remove_all(dir);
  write_train_outputs(dir, c, a);
  const auto mem = evaluate(c, a.final_params, m, items);
  const auto disk = evaluate_checkpoint(c, dir / "final.ckpt", m, items);
  bool exact = mem.pairs.size() == disk.pairs.size();
  for (std::size_t i = 0; exact && i < mem.pairs.size(); ++i) exact = mem.pairs[i].prediction == disk.pairs[i].prediction;
  o.require(exact, "checkpoint round trip changed predictions");

  c.optim.epochs = 1;
  const auto x1 = work / "repro_xval_1", x2 = work / "repro_xval_2";
  fs::remove_all(x1);
  fs::remove_all(x2);
  xval(c, 3, x1);
  xval(c, 3, x2);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(x1)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), x1);
    if (rel == "run.json") continue;  // wall clock
    o.require(slurp(e.path()) == slurp(x2 / rel), rel.string() + " differs between runs");
    ++files;
  }
  o.info(std::to_string(files) + " xval files byte-identical, " + std::to_string(mem.pairs.size()) +
         " predictions exact after reload");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = (fs::temp_directory_path() / "mmpcqa_acceptance").string();
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  const fs::path dir(work);
  fs::create_directories(dir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite_criterion},
      {"oracle equivalence", oracle_criterion},
      {"formula invariants", formula_criterion},
      {"symmetry invariants", symmetry_criterion},
      {"overfit smoke test", [&] { return overfit_criterion(dir); }},
      {"cross-validation folds", [&] { return xval_criterion(dir); }},
      {"logistic mapping", logistic_criterion},
      {"ablation structure", [&] { return ablation_criterion(dir); }},
      {"reproducibility", [&] { return reproducibility_criterion(dir); }},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("exception: ") + e.what());
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first;
    for (const auto& n : o.notes) std::cout << " | " << n;
    std::cout << std::endl;
  }
  return all ? 0 : 1;
}
