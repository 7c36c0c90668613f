#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "mmpcqa/gradcheck.hpp"
#include "mmpcqa/harness.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

namespace {

struct OpCase {
  std::vector<Shape> shapes;
  GraphFunction fn;
};

GradCheckRow run_cases(const std::string& name, const std::vector<OpCase>& cases, std::uint64_t seed) {
  GradCheckRow row{name, cases.size(), 0.0, kOperatorTolerance};
  for (std::size_t i = 0; i < cases.size(); ++i) {
    row.max_error = std::max(row.max_error, grad_check(cases[i].fn, cases[i].shapes, mix_seed(seed, {i})));
  }
  return row;
}

std::vector<OpCase> unary_cases(const std::vector<Shape>& shapes, Var (Graph<double>::*op)(Var)) {
  std::vector<OpCase> out;
  for (const auto& s : shapes) {
    out.push_back({{s}, [op](Graph<double>& g, std::span<const Var> x) { return (g.*op)(x[0]); }});
  }
  return out;
}

// Smallest distance of any pair to a kink of the rank loss.
double rank_kink_margin(const std::vector<double>& q, const std::vector<double>& y) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      if (i == j) continue;
      const double d = q[i] - q[j];
      const double e = d >= 0.0 ? 1.0 : -1.0;
      m = std::min(m, std::abs(d));
      m = std::min(m, std::abs(std::abs(d) - e * (y[i] - y[j])));
    }
  }
  return m;
}

// Hinge terms are +-2/n^2 each, so a coordinate can cancel to exactly zero;
// the relative error there only measures roundoff.
double min_abs(const std::vector<double>& g) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : g) m = std::min(m, std::abs(v));
  return m;
}

GradCheckRow loss_row(const std::string& name, LossValue (*loss)(std::span<const double>, std::span<const double>),
                      std::uint64_t seed) {
  GradCheckRow row{name, 0, 0.0, kLossTolerance};
  std::size_t attempt = 0;
  for (std::size_t n : {2, 3, 5, 8, 13}) {
    Tensor<double> q, y;
    do {
      q = random_normal({n}, mix_seed(seed, {n, attempt, 0}));
      y = random_normal({n}, mix_seed(seed, {n, attempt, 1}));
      ++attempt;
    } while (rank_kink_margin(q.data, y.data) < 1e-3 || min_abs(loss(q.data, y.data).grad) < 1e-3);
    const auto analytic = loss(q.data, y.data);
    Tensor<double> g({n}, analytic.grad);
    Tensor<double>* targets[] = {&q};
    const Tensor<double> grads[] = {g};
    row.max_error =
        std::max(row.max_error, check_gradients([&] { return loss(q.data, y.data).value; }, targets, grads));
    ++row.cases;
  }
  return row;
}

inline constexpr double kKinkMargin = 1e-3;
// A nonzero partial below this sits near the one-ulp floor of the central
// difference (~1e-11 absolute), so its relative error says nothing.
inline constexpr double kMinGradient = 1e-5;

GradCheckRow network_row(const std::string& name, const ModelConfig& config, std::uint64_t seed) {
  GradCheckRow row{name, 1, 0.0, kNetworkTolerance};
  const Network<double> net(config);
  const auto specs = model_param_specs(config);

  ParameterStore<double> params;
  std::vector<Tensor<double>> inputs;
  std::size_t n_points = 0;

  auto evaluate = [&](std::vector<Tensor<double>>* grads, double* margin) {
    Graph<double> g;
    std::vector<Var> subs, patches;
    for (std::size_t i = 0; i < inputs.size(); ++i) (i < n_points ? subs : patches).push_back(g.variable(inputs[i]));
    const auto trace = net.forward(g, params, subs, patches);
    const double score = g.value(trace.score).data[0];
    if (margin) *margin = g.kink_margin();
    if (grads) {
      g.backward(trace.score);
      grads->clear();
      for (const auto& v : subs) grads->push_back(g.grad(v));
      for (const auto& v : patches) grads->push_back(g.grad(v));
      std::map<std::string, const Tensor<double>*> by_name;
      for (const auto& [n, t] : g.param_grads()) by_name[n] = t;
      for (const auto& n : params.names()) {
        auto it = by_name.find(n);
        grads->push_back(it == by_name.end() ? Tensor<double>(params.value(n).shape) : *it->second);
      }
    }
    return score;
  };

  // Parameters are inputs of the checked function like any other. Weights are
  // N(0, 2/fan_in), biases N(0, 0.01). The training init (zero biases) is a
  // poor point for a check: dead receptive fields sit exactly on a relu kink,
  // and tokens collapse so query/key gradients sink below roundoff.
  // Redrawn when a relu input or max-pool gap is within kKinkMargin of its
  // kink, or some nonzero partial is under kMinGradient. Neither test looks at
  // the finite differences.
  std::vector<Tensor<double>> analytic;
  for (std::size_t attempt = 0;; ++attempt) {
    if (attempt == 200) throw RuntimeError("gradient suite: no well-conditioned point for " + name);
    params = ParameterStore<double>();
    inputs.clear();
    std::size_t tag = 0;
    for (const auto& spec : specs) {
      auto t = random_normal(spec.shape, mix_seed(seed, {attempt, 1, tag++}));
      const double scale = spec.bias ? 0.1 : std::sqrt(2.0 / static_cast<double>(spec.fan_in));
      for (auto& v : t.data) v *= scale;
      params.add(spec.name, std::move(t));
    }
    if (config.uses_points()) {
      for (std::size_t s = 0; s < config.n_p; ++s) {
        inputs.push_back(random_normal({config.n_s, 3}, mix_seed(seed, {attempt, 2, tag++})));
      }
    }
    n_points = inputs.size();
    if (config.uses_images()) {
      for (std::size_t s = 0; s < config.n_i; ++s) {
        inputs.push_back(random_normal({3, config.patch, config.patch}, mix_seed(seed, {attempt, 3, tag++})));
      }
    }
    double margin = 0.0;
    evaluate(&analytic, &margin);
    if (margin < kKinkMargin) continue;
    if (min_nonzero_abs(analytic) >= kMinGradient) break;
  }

  std::vector<Tensor<double>*> targets;
  for (auto& t : inputs) targets.push_back(&t);
  for (const auto& n : params.names()) targets.push_back(&params.mutable_value(n));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (analytic[i].shape != targets[i]->shape) analytic[i] = Tensor<double>(targets[i]->shape);
  }
  row.max_error = check_gradients([&] { return evaluate(nullptr, nullptr); }, targets, analytic);
  return row;
}

}  // namespace

ModelConfig toy_model_config() {
  ModelConfig c;
  c.n_s = 8;
  c.n_p = 2;
  c.n_i = 2;
  c.point_hidden = {6};
  c.c_p = 8;
  c.image_channels = {3, 4};
  c.patch = 8;
  c.c_fused = 8;
  c.heads = 2;
  c.ffn = 12;
  c.head_hidden = 6;
  return c;
}

std::vector<GradCheckRow> gradient_suite(std::uint64_t seed) {
  using G = Graph<double>;
  std::vector<GradCheckRow> rows;

  {
    std::vector<OpCase> cases;
    for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {2, 3, 4}, {5, 1, 3}, {4, 7, 2}, {1, 6, 9}, {8, 8, 8}}) {
      cases.push_back({{{m, k}, {k, n}}, [](G& g, std::span<const Var> x) { return g.matmul(x[0], x[1]); }});
    }
    // shared operand
    cases.push_back({{{3, 3}}, [](G& g, std::span<const Var> x) { return g.matmul(x[0], x[0]); }});
    rows.push_back(run_cases("matmul", cases, mix_seed(seed, {1})));
  }
  rows.push_back(run_cases("transpose", unary_cases({{1, 1}, {1, 5}, {4, 1}, {3, 6}, {7, 2}}, &G::transpose),
                           mix_seed(seed, {2})));
  {
    std::vector<OpCase> cases;
    for (Shape s : {Shape{1, 1}, Shape{3, 4}, Shape{2, 3, 5}, Shape{6}, Shape{4, 4}}) {
      cases.push_back({{s, s}, [](G& g, std::span<const Var> x) { return g.add(x[0], x[1]); }});
    }
    for (auto [m, n] : {std::array<std::size_t, 2>{1, 3}, {4, 3}, {7, 1}, {5, 6}, {2, 9}}) {
      cases.push_back({{{m, n}, {1, n}}, [](G& g, std::span<const Var> x) { return g.add(x[0], x[1]); }});
    }
    rows.push_back(run_cases("add", cases, mix_seed(seed, {3})));
  }
  {
    std::vector<OpCase> cases;
    for (auto [a, b, n] : {std::array<std::size_t, 3>{1, 1, 1}, {2, 3, 4}, {1, 5, 3}, {4, 2, 6}, {3, 3, 2}}) {
      cases.push_back({{{a, n}, {b, n}, {1, n}}, [](G& g, std::span<const Var> x) {
                         const Var p[] = {x[0], x[1], x[2]};
                         return g.concat(p, 0);
                       }});
      cases.push_back({{{n, a}, {n, b}}, [](G& g, std::span<const Var> x) {
                         const Var p[] = {x[0], x[1], x[0]};
                         return g.concat(p, 1);
                       }});
    }
    rows.push_back(run_cases("concat", cases, mix_seed(seed, {4})));
  }
  const std::vector<Shape> rowshapes{{1, 1}, {1, 6}, {5, 1}, {4, 7}, {9, 3}};
  rows.push_back(run_cases("relu", unary_cases({{1, 1}, {4, 5}, {3, 4, 4}, {17}, {2, 9}}, &G::relu), mix_seed(seed, {5})));
  rows.push_back(run_cases("softmax", unary_cases(rowshapes, &G::softmax), mix_seed(seed, {6})));
  {
    std::vector<OpCase> cases;
    struct Conv {
      std::size_t cin, cout, h, w, stride;
    };
    for (Conv c : {Conv{1, 1, 3, 3, 1}, Conv{2, 3, 5, 4, 1}, Conv{3, 2, 6, 6, 2}, Conv{2, 2, 7, 5, 2},
                   Conv{1, 4, 1, 1, 1}, Conv{3, 3, 4, 9, 2}}) {
      const std::size_t stride = c.stride;
      cases.push_back({{{c.cin, c.h, c.w}, {c.cout, c.cin, 3, 3}, {c.cout}},
                       [stride](G& g, std::span<const Var> x) { return g.conv2d(x[0], x[1], x[2], stride); }});
    }
    rows.push_back(run_cases("conv2d", cases, mix_seed(seed, {7})));
  }
  rows.push_back(run_cases("max_pool_rows", unary_cases(rowshapes, &G::max_pool_rows), mix_seed(seed, {8})));
  rows.push_back(run_cases("mean_pool_rows", unary_cases(rowshapes, &G::mean_pool_rows), mix_seed(seed, {9})));
  rows.push_back(run_cases("global_average_pool_2d",
                           unary_cases({{1, 1, 1}, {2, 3, 4}, {4, 5, 5}, {3, 1, 7}, {1, 8, 2}}, &G::global_average_pool_2d),
                           mix_seed(seed, {10})));
  rows.push_back(run_cases("layer_norm", unary_cases({{1, 3}, {1, 6}, {5, 3}, {4, 7}, {9, 16}}, &G::layer_norm),
                           mix_seed(seed, {11})));
  {
    std::vector<OpCase> cases;
    for (double f : {0.5, -2.0, 1.0, 3.25, -0.125}) {
      cases.push_back({{{3, 4}}, [f](G& g, std::span<const Var> x) { return g.scale(x[0], f); }});
    }
    rows.push_back(run_cases("scale", cases, mix_seed(seed, {12})));
  }
  {
    std::vector<OpCase> cases;
    for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 2, 3}, {4, 3, 2}, {5, 5, 5}, {2, 8, 1}, {6, 1, 4}}) {
      cases.push_back(
          {{{m, k}, {k, n}, {1, n}}, [](G& g, std::span<const Var> x) { return g.linear(x[0], x[1], x[2]); }});
    }
    rows.push_back(run_cases("linear", cases, mix_seed(seed, {13})));
  }

  ModelConfig toy = toy_model_config();
  rows.push_back(network_row("network P+I+SCMA", toy, mix_seed(seed, {20})));
  toy.norm = NormPlacement::pre;
  toy.mode = FusionMode::pooled;
  rows.push_back(network_row("network P+I+SCMA pre-norm pooled", toy, mix_seed(seed, {21})));
  toy = toy_model_config();
  toy.variant = ModelVariant::concat;
  rows.push_back(network_row("network P+I", toy, mix_seed(seed, {22})));

  rows.push_back(loss_row("mse_loss", &mse_loss, mix_seed(seed, {30})));
  rows.push_back(loss_row("rank_loss", &rank_loss, mix_seed(seed, {31})));
  return rows;
}

}  // namespace mmpcqa
