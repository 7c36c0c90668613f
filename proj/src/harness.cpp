#include "mmpcqa/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include "mmpcqa/error.hpp"
#include "mmpcqa/ply.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

namespace {

constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kShuffleTag = 0x5u;
constexpr std::uint64_t kEvalTag = 0xE7A1;
constexpr std::uint64_t kFpsStartTag = 0xF5;

template <typename E>
E parse_enum(const nlohmann::json& j, const char* key, std::initializer_list<std::pair<const char*, E>> options) {
  const auto s = j.at(key).get<std::string>();
  for (const auto& [name, value] : options) {
    if (s == name) return value;
  }
  throw ValidationError(std::string("run config: unknown ") + key + " '" + s + "'");
}

void check_keys(const nlohmann::json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(std::string("run config: ") + where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ValidationError(std::string("run config: unknown key '") + key + "' in " + where);
    }
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeError("write failed: " + path.string());
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  if (optim.batch_size == 0) throw ValidationError("run config: batch_size must be positive");
  if (optim.epochs == 0) throw ValidationError("run config: epochs must be positive");
  if (!(optim.adam.lr > 0.0)) throw ValidationError("run config: lr must be positive");
  if (optim.adam.weight_decay < 0.0) throw ValidationError("run config: weight_decay must be >= 0");
  if (!(optim.adam.beta1 >= 0.0 && optim.adam.beta1 < 1.0 && optim.adam.beta2 >= 0.0 && optim.adam.beta2 < 1.0)) {
    throw ValidationError("run config: betas must lie in [0,1)");
  }
  if (!(optim.adam.eps > 0.0)) throw ValidationError("run config: eps must be positive");
  if (folds == 0) throw ValidationError("run config: folds must be positive");
  if (render.crop != static_cast<int>(model.patch)) {
    throw ValidationError("run config: render crop " + std::to_string(render.crop) + " differs from model patch " +
                          std::to_string(model.patch));
  }
  if (render.crop > render.width || render.crop > render.height) {
    throw ValidationError("run config: crop larger than the canvas");
  }
  Camera cam;
  cam.width = render.width;
  cam.height = render.height;
  cam.distance = render.distance;
  cam.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"manifest", c.manifest},
      {"model", c.model},
      {"optim",
       {{"lr", c.optim.adam.lr},
        {"weight_decay", c.optim.adam.weight_decay},
        {"beta1", c.optim.adam.beta1},
        {"beta2", c.optim.adam.beta2},
        {"eps", c.optim.adam.eps},
        {"batch_size", c.optim.batch_size},
        {"epochs", c.optim.epochs}}},
      {"loss", {{"mse", c.loss.mse}, {"rank", c.loss.rank}}},
      {"seed", c.seed},
      {"resample", c.resample == ResamplePolicy::per_epoch ? "per_epoch" : "fixed"},
      {"sampling", c.sampling == SamplingStrategy::patch_up ? "patch_up" : "fps"},
      {"patch_mode", c.patch_mode == PatchMode::strict ? "strict" : "pad"},
      {"random_fps_start", c.random_fps_start},
      {"render",
       {{"width", c.render.width},
        {"height", c.render.height},
        {"crop", c.render.crop},
        {"distance", c.render.distance},
        {"splat_radius", c.render.splat_radius},
        {"background", c.render.background}}},
      {"folds", c.folds},
  };
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  check_keys(j, "config",
             {"manifest", "model", "optim", "loss", "seed", "resample", "sampling", "patch_mode", "random_fps_start",
              "render", "folds"});
  auto opt = [](const nlohmann::json& o, const char* key, auto& field) {
    if (o.contains(key)) o.at(key).get_to(field);
  };
  opt(j, "manifest", c.manifest);
  if (j.contains("model")) {
    check_keys(j.at("model"), "model",
               {"n_s", "n_p", "n_i", "point_hidden", "c_p", "image_channels", "patch", "c_fused", "heads", "ffn",
                "head_hidden", "mode", "norm", "wiring", "variant"});
    from_json(j.at("model"), c.model);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    check_keys(o, "optim", {"lr", "weight_decay", "beta1", "beta2", "eps", "batch_size", "epochs"});
    opt(o, "lr", c.optim.adam.lr);
    opt(o, "weight_decay", c.optim.adam.weight_decay);
    opt(o, "beta1", c.optim.adam.beta1);
    opt(o, "beta2", c.optim.adam.beta2);
    opt(o, "eps", c.optim.adam.eps);
    opt(o, "batch_size", c.optim.batch_size);
    opt(o, "epochs", c.optim.epochs);
  }
  if (j.contains("loss")) {
    check_keys(j.at("loss"), "loss", {"mse", "rank"});
    opt(j.at("loss"), "mse", c.loss.mse);
    opt(j.at("loss"), "rank", c.loss.rank);
  }
  opt(j, "seed", c.seed);
  if (j.contains("resample")) {
    c.resample = parse_enum<ResamplePolicy>(j, "resample",
                                            {{"per_epoch", ResamplePolicy::per_epoch}, {"fixed", ResamplePolicy::fixed}});
  }
  if (j.contains("sampling")) {
    c.sampling = parse_enum<SamplingStrategy>(j, "sampling",
                                              {{"patch_up", SamplingStrategy::patch_up}, {"fps", SamplingStrategy::fps}});
  }
  if (j.contains("patch_mode")) {
    c.patch_mode = parse_enum<PatchMode>(j, "patch_mode", {{"strict", PatchMode::strict}, {"pad", PatchMode::pad}});
  }
  opt(j, "random_fps_start", c.random_fps_start);
  if (j.contains("render")) {
    const auto& r = j.at("render");
    check_keys(r, "render", {"width", "height", "crop", "distance", "splat_radius", "background"});
    opt(r, "width", c.render.width);
    opt(r, "height", c.render.height);
    opt(r, "crop", c.render.crop);
    opt(r, "distance", c.render.distance);
    opt(r, "splat_radius", c.render.splat_radius);
    opt(r, "background", c.render.background);
  }
  opt(j, "folds", c.folds);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

DataSource::DataSource(const DatasetManifest& manifest, const RunConfig& config)
    : manifest_(manifest), config_(config) {}

DataSource::Prepared& DataSource::load(std::size_t index) {
  auto it = cache_.find(index);
  if (it != cache_.end()) return *it->second;
  const std::string file = path(index);
  access_.push_back(file);
  auto p = std::make_unique<Prepared>();
  ColoredPointCloud raw = read_ply(file);
  raw.id = entry(index).content_id;
  p->colored = normalize_colored(raw);
  p->geometry = normalize(raw);
  const std::size_t ns = config_.model.n_s;
  if (config_.sampling == SamplingStrategy::patch_up) {
    const std::size_t start =
        config_.random_fps_start ? mix_seed(config_.seed, {kFpsStartTag, index}) % p->geometry.size() : 0;
    p->patches = patch_up(p->geometry, ns, config_.patch_mode, start);
  } else {
    p->fps_groups = fps_point_groups(p->geometry, config_.model.n_p, ns);
  }
  return *cache_.emplace(index, std::move(p)).first->second;
}

std::vector<SubModelPoints> DataSource::submodels(std::size_t index, std::uint64_t seed) {
  auto& p = load(index);
  if (config_.sampling == SamplingStrategy::fps) return p.fps_groups;
  const bool replace = p.patches.count() < config_.model.n_p;
  return select_submodels(p.geometry, p.patches, config_.model.n_p, seed, replace);
}

std::vector<RgbImage> DataSource::views(std::size_t index, std::uint64_t seed) {
  auto& p = load(index);
  return render_views(p.colored, config_.model.n_i, seed, config_.render);
}

ModelInputs<float> DataSource::inputs(std::size_t index, std::uint64_t submodel_seed, std::uint64_t view_seed) {
  ModelInputs<float> in;
  if (config_.model.uses_points()) {
    for (const auto& s : submodels(index, submodel_seed)) in.submodels.push_back(submodel_tensor<float>(s));
  }
  if (config_.model.uses_images()) {
    for (const auto& v : views(index, view_seed)) in.patches.push_back(patch_tensor<float>(v));
  }
  return in;
}

std::vector<std::size_t> items_for_contents(const DatasetManifest& m, const std::vector<std::string>& contents) {
  const std::set<std::string> wanted(contents.begin(), contents.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (wanted.count(m.entries[i].content_id)) out.push_back(i);
  }
  return out;
}

ParameterStore<float> initial_params(const RunConfig& config) {
  return init_params<float>(model_param_specs(config.model), mix_seed(config.seed, {kInitTag}));
}

namespace {

// Evaluation always uses the kEvalTag draw. Under the fixed policy training
// uses it too, so each cloud has exactly one set of sub-models and views.
ModelInputs<float> sampled_inputs(const RunConfig& config, DataSource& data, std::size_t item,
                                    std::optional<std::size_t> epoch) {
  const std::uint64_t tag =
      epoch && config.resample == ResamplePolicy::per_epoch ? static_cast<std::uint64_t>(*epoch) : kEvalTag;
  return data.inputs(item, mix_seed(config.seed, {tag, item, 0}), mix_seed(config.seed, {tag, item, 1}));
}

}  // namespace

TrainResult train(const RunConfig& config, const DatasetManifest& manifest, const std::vector<std::size_t>& items,
                  std::ostream* progress) {
  return train(config, manifest, items, initial_params(config), progress);
}

TrainResult train(const RunConfig& config, const DatasetManifest& manifest, const std::vector<std::size_t>& items,
                  ParameterStore<float> params, std::ostream* progress) {
  config.validate();
  if (items.empty()) throw ValidationError("train: no training items");
  check_params_match(config.model, params);

  const Network<float> net(config.model);
  DataSource data(manifest, config);
  TrainResult result;

  // One pass over the shuffled items. With update=false only the losses are
  // computed.
  auto run_epoch = [&](std::size_t epoch, bool update) {
    std::vector<std::size_t> order = items;
    Rng rng(mix_seed(config.seed, {kShuffleTag, epoch}));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.optim.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.optim.batch_size);
      std::vector<std::unique_ptr<Graph<float>>> graphs;
      std::vector<Var> scores;
      std::vector<double> preds, labels;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t item = order[b];
        auto g = std::make_unique<Graph<float>>();
        try {
          const auto in = sampled_inputs(config, data, item, epoch);
          const auto trace = net.forward(*g, params, in);
          scores.push_back(trace.score);
          preds.push_back(static_cast<double>(g->value(trace.score).data[0]));
        } catch (const RuntimeError& e) {
          throw RuntimeError("training item " + data.path(item) + " (epoch " + std::to_string(epoch) +
                             "): " + e.what());
        }
        labels.push_back(data.entry(item).mos);
        if (update) graphs.push_back(std::move(g));
      }
      const LossValue loss = total_loss(preds, labels, config.loss);
      if (!std::isfinite(loss.value)) {
        std::string names;
        for (std::size_t b = start; b < end; ++b) {
          if (!std::isfinite(preds[b - start])) names += " " + data.path(order[b]);
        }
        throw RuntimeError("non-finite loss in epoch " + std::to_string(epoch) +
                           (names.empty() ? std::string(" (batch starting at ") + data.path(order[start]) + ")"
                                          : " from item(s)" + names));
      }
      loss_sum += loss.value;
      ++batches;
      if (!update) continue;
      for (std::size_t b = 0; b < graphs.size(); ++b) {
        Tensor<float> seed({1, 1}, static_cast<float>(loss.grad[b]));
        try {
          graphs[b]->backward(scores[b], seed);
        } catch (const RuntimeError& e) {
          throw RuntimeError("backward for item " + data.path(order[start + b]) + ": " + e.what());
        }
        params.accumulate(*graphs[b]);
      }
      params.adam_step(config.optim.adam);
    }
    return loss_sum / static_cast<double>(batches);
  };

  const double initial = run_epoch(0, false);
  result.log.push_back({0, initial});
  result.best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= config.optim.epochs; ++epoch) {
    const double l = run_epoch(epoch, true);
    result.log.push_back({epoch, l});
    if (progress) *progress << "epoch " << epoch << " loss " << l << "\n" << std::flush;
    if (l < result.best_loss) {
      result.best_loss = l;
      result.best_epoch = epoch;
      result.best_params = params;
    }
  }
  result.final_params = std::move(params);
  result.access_log = data.access_log();
  return result;
}

PredictionSet predict_items(const RunConfig& config, const ParameterStore<float>& params, DataSource& data,
                            const std::vector<std::size_t>& items) {
  const Network<float> net(config.model);
  PredictionSet out;
  for (std::size_t item : items) {
    const auto in = sampled_inputs(config, data, item, std::nullopt);
    double score;
    try {
      score = net.predict(params, in);
    } catch (const RuntimeError& e) {
      throw RuntimeError("evaluation item " + data.path(item) + ": " + e.what());
    }
    const auto& e = data.entry(item);
    out.push_back({score, e.mos, e.content_id, e.distortion});
  }
  return out;
}

void check_params_match(const ModelConfig& model, const ParameterStore<float>& params) {
  std::vector<std::string> problems;
  std::set<std::string> expected;
  for (const auto& spec : model_param_specs(model)) {
    expected.insert(spec.name);
    if (!params.contains(spec.name)) {
      problems.push_back(spec.name + " (missing)");
    } else if (params.value(spec.name).shape != spec.shape) {
      problems.push_back(spec.name + " (expected " + shape_string(spec.shape) + ", got " +
                         shape_string(params.value(spec.name).shape) + ")");
    }
  }
  for (const auto& name : params.names()) {
    if (!expected.count(name)) problems.push_back(name + " (unexpected)");
  }
  if (problems.empty()) return;
  std::string msg = "parameter mismatch:";
  for (const auto& p : problems) msg += " " + p + ";";
  msg.pop_back();
  throw ValidationError(msg);
}

FoldReport evaluate(const RunConfig& config, const ParameterStore<float>& params, const DatasetManifest& manifest,
                    const std::vector<std::size_t>& items, std::size_t fold, std::vector<std::string>* access) {
  check_params_match(config.model, params);
  DataSource data(manifest, config);
  const auto preds = predict_items(config, params, data, items);
  if (access) *access = data.access_log();
  return evaluate_fold(fold, preds);
}

FoldReport evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint,
                               const DatasetManifest& manifest, const std::vector<std::size_t>& items,
                               std::size_t fold) {
  if (!std::filesystem::exists(checkpoint)) throw ValidationError("checkpoint not found: " + checkpoint.string());
  return evaluate(config, load_checkpoint(checkpoint), manifest, items, fold);
}

void write_train_outputs(const std::filesystem::path& dir, const RunConfig& config, const TrainResult& result) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", nlohmann::json(config).dump(2) + "\n");
  std::string log = "epoch,loss\n";
  for (const auto& e : result.log) log += std::to_string(e.epoch) + "," + fmt(e.loss) + "\n";
  write_text(dir / "log.csv", log);
  save_checkpoint(dir / "best.ckpt", result.best_params);
  save_checkpoint(dir / "final.ckpt", result.final_params);
  std::string access;
  for (const auto& a : result.access_log) access += "train " + a + "\n";
  write_text(dir / "access.log", access);
}

XvalResult xval(const RunConfig& config, std::size_t k, const std::filesystem::path& out_dir, std::ostream* progress) {
  config.validate();
  const DatasetManifest manifest = read_manifest(config.manifest);
  XvalResult out;
  out.plan = make_folds(manifest.contents(), k, config.seed);
  const auto started = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "config.json", nlohmann::json(config).dump(2) + "\n");

  std::vector<FoldReport> folds;
  nlohmann::json timing = nlohmann::json::array();
  for (std::size_t f = 0; f < k; ++f) {
    const auto fold_start = std::chrono::steady_clock::now();
    const auto train_items = items_for_contents(manifest, out.plan.train_contents(f));
    const auto test_items = items_for_contents(manifest, out.plan.test[f]);
    if (progress) {
      *progress << "fold " << f << ": " << train_items.size() << " train / " << test_items.size() << " test items\n";
    }
    const TrainResult tr = train(config, manifest, train_items, progress);
    const auto dir = out_dir / ("fold_" + std::to_string(f));
    write_train_outputs(dir, config, tr);

    std::vector<std::string> eval_access;
    FoldReport report = evaluate(config, tr.final_params, manifest, test_items, f, &eval_access);
    std::ofstream log(dir / "access.log", std::ios::app | std::ios::binary);
    for (const auto& a : eval_access) log << "eval " << a << "\n";
    if (!log) throw RuntimeError("cannot append to " + (dir / "access.log").string());

    nlohmann::json split{{"train_contents", out.plan.train_contents(f)}, {"test_contents", out.plan.test[f]}};
    write_text(dir / "split.json", split.dump(2) + "\n");
    write_text(dir / "report.json", report_to_json(aggregate({report})).dump(2) + "\n");
    folds.push_back(std::move(report));
    timing.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - fold_start).count());
  }
  out.report = aggregate(std::move(folds));
  write_text(out_dir / "report.json", report_to_json(out.report).dump(2) + "\n");
  write_text(out_dir / "report.csv", report_to_csv(out.report));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_text(out_dir / "run.json", nlohmann::json{{"wall_clock_seconds", wall}, {"fold_seconds", timing}}.dump(2) + "\n");
  return out;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::string out = "study,variant,srcc,krcc,plcc,rmse\n";
  auto num = [](double v) { return std::isfinite(v) ? fmt(v) : std::string("nan"); };
  for (const auto& r : rows) {
    out += r.study + "," + r.variant + "," + num(r.metrics.srcc) + "," + num(r.metrics.krcc) + "," +
           num(r.metrics.plcc) + "," + num(r.metrics.rmse) + "\n";
  }
  return out;
}

std::vector<AblationRow> ablate(const RunConfig& config, const std::string& study, std::size_t k,
                                const std::filesystem::path& out_dir, std::ostream* progress) {
  std::vector<std::pair<std::string, RunConfig>> variants;
  if (study == "modality") {
    for (auto v : {ModelVariant::point_only, ModelVariant::image_only, ModelVariant::concat, ModelVariant::full}) {
      RunConfig c = config;
      c.model.variant = v;
      variants.emplace_back(to_string(v), c);
    }
  } else if (study == "patching") {
    RunConfig fps = config, patch = config;
    fps.model.variant = patch.model.variant = ModelVariant::full;
    fps.sampling = SamplingStrategy::fps;
    patch.sampling = SamplingStrategy::patch_up;
    variants.emplace_back("FPS", fps);
    variants.emplace_back("Patch-up", patch);
  } else if (study == "counts") {
    for (std::size_t n : {2, 4, 6, 8}) {
      RunConfig c = config;
      c.model.variant = ModelVariant::point_only;
      c.model.n_p = n;
      variants.emplace_back("N_P=" + std::to_string(n), c);
    }
    for (std::size_t n : {2, 4, 6, 8}) {
      RunConfig c = config;
      c.model.variant = ModelVariant::image_only;
      c.model.n_i = n;
      variants.emplace_back("N_I=" + std::to_string(n), c);
    }
  } else {
    throw ValidationError("unknown ablation study '" + study + "' (expected modality, patching or counts)");
  }

  std::vector<AblationRow> rows;
  for (const auto& [name, c] : variants) {
    if (progress) *progress << "ablate " << study << ": " << name << "\n";
    std::string dir_name = name;
    std::replace(dir_name.begin(), dir_name.end(), '+', '_');
    std::replace(dir_name.begin(), dir_name.end(), '=', '_');
    const auto r = xval(c, k, out_dir / study / dir_name, progress);
    rows.push_back({study, name, r.report.mean});
  }
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / ("ablation_" + study + ".csv"), ablation_to_csv(rows));
  return rows;
}

}  // namespace mmpcqa
