#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mmpcqa/harness.hpp"

using namespace mmpcqa;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
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
  c.optim.epochs = 2;
  c.optim.batch_size = 4;
  c.seed = 7;
  return c;
}

// One shared dataset: 3 contents x 2 types x 2 levels, 300 points.
const DatasetManifest& tiny_data() {
  static const DatasetManifest m = [] {
    const auto dir = fs::temp_directory_path() / "mmpcqa_unit_harness_data";
    fs::remove_all(dir);
    SynthOptions o;
    o.contents = 3;
    o.types = {DistortionKind::geom_noise, DistortionKind::color_noise};
    o.levels = 2;
    o.points = 300;
    o.seed = 2;
    return build_dataset(o, dir);
  }();
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mmpcqa");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.optim.adam.lr == 5e-5);
  CHECK(c.optim.adam.weight_decay == 1e-4);
  CHECK(c.optim.epochs == 50);
  CHECK(c.optim.batch_size == 8);
  CHECK(c.loss.mse == 1.0);
  CHECK(c.loss.rank == 1.0);
  CHECK(c.model.n_s == 2048);
  CHECK(c.model.mode == FusionMode::token);
  CHECK(c.resample == ResamplePolicy::per_epoch);
  CHECK(c.render.crop == 224);
  CHECK(c.folds == 9);
  c.validate();
}

TEST_CASE("config json") {
  auto c = tiny_config();
  c.resample = ResamplePolicy::fixed;
  c.sampling = SamplingStrategy::fps;
  c.random_fps_start = true;
  nlohmann::json j = c;
  auto back = j.get<RunConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.random_fps_start);

  auto bad = j;
  bad["lerning_rate"] = 1;
  CHECK_THROWS(bad.get<RunConfig>());
  auto bad_model = j;
  bad_model["model"]["hedas"] = 2;
  CHECK_THROWS(bad_model.get<RunConfig>());

  auto mismatch = tiny_config();
  mismatch.render.crop = 16;
  CHECK_THROWS_AS(mismatch.validate(), ValidationError);
  auto zero = tiny_config();
  zero.optim.batch_size = 0;
  CHECK_THROWS_AS(zero.validate(), ValidationError);

  const auto path = fs::temp_directory_path() / "mmpcqa_unit_cfg.json";
  std::ofstream(path) << R"({"seed": 3, "optim": {"epochs": 4}})";
  auto loaded = load_run_config(path);
  CHECK(loaded.seed == 3);
  CHECK(loaded.optim.epochs == 4);
  CHECK(loaded.optim.adam.lr == 5e-5);
  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(load_run_config(path), ValidationError);
  fs::remove(path);
}

TEST_CASE("data source records what it opens") {
  const auto& m = tiny_data();
  auto c = tiny_config();
  DataSource ds(m, c);
  auto in = ds.inputs(3, 1, 2);
  CHECK(in.submodels.size() == 2);
  CHECK(in.submodels[0].shape == Shape{32, 3});
  CHECK(in.patches.size() == 2);
  CHECK(in.patches[0].shape == Shape{3, 32, 32});
  ds.inputs(3, 5, 6);
  CHECK(ds.access_log() == std::vector<std::string>{ds.path(3)});
  auto again = ds.inputs(3, 1, 2);
  CHECK(again.submodels[1].data == in.submodels[1].data);
  CHECK(again.patches[1].data == in.patches[1].data);
}

TEST_CASE("random fps start moves the first anchor") {
  const auto& m = tiny_data();
  auto c = tiny_config();
  DataSource fixed(m, c);
  c.random_fps_start = true;
  DataSource moved(m, c);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (fixed.submodels(i, 1) != moved.submodels(i, 1)) ++differ;
  }
  CHECK(differ > 0);
}

TEST_CASE("items for contents") {
  const auto& m = tiny_data();
  CHECK(m.entries.size() == 15);
  auto items = items_for_contents(m, {m.contents()[1]});
  CHECK(items.size() == 5);
  for (auto i : items) CHECK(m.entries[i].content_id == m.contents()[1]);
}

TEST_CASE("training is deterministic and checkpoints evaluate exactly") {
  const auto& m = tiny_data();
  auto c = tiny_config();
  auto items = items_for_contents(m, m.contents());
  auto a = train(c, m, items);
  auto b = train(c, m, items);
  CHECK(serialize_checkpoint(a.final_params) == serialize_checkpoint(b.final_params));
  CHECK(serialize_checkpoint(a.best_params) == serialize_checkpoint(b.best_params));
  REQUIRE(a.log.size() == 3);
  CHECK(a.log[0].epoch == 0);
  CHECK(a.final_params.step() == 2 * 4);  // ceil(15/4) batches per epoch

  double best = a.log[0].loss;
  std::size_t best_epoch = 0;
  for (const auto& e : a.log) {
    if (e.loss < best) {
      best = e.loss;
      best_epoch = e.epoch;
    }
  }
  CHECK(a.best_epoch == best_epoch);

  const auto dir = fs::temp_directory_path() / "mmpcqa_unit_train";
  fs::remove_all(dir);
  write_train_outputs(dir, c, a);
  for (const char* f : {"config.json", "log.csv", "best.ckpt", "final.ckpt", "access.log"}) CHECK(fs::exists(dir / f));
  CHECK(slurp(dir / "final.ckpt") == serialize_checkpoint(a.final_params));
  CHECK(slurp(dir / "log.csv").rfind("epoch,loss\n", 0) == 0);

  auto mem = evaluate(c, a.final_params, m, items);
  auto disk = evaluate_checkpoint(c, dir / "final.ckpt", m, items);
  REQUIRE(mem.pairs.size() == disk.pairs.size());
  for (std::size_t i = 0; i < mem.pairs.size(); ++i) CHECK(mem.pairs[i].prediction == disk.pairs[i].prediction);
  CHECK(report_to_json(aggregate({mem})) == report_to_json(aggregate({disk})));
  CHECK_THROWS_AS(evaluate_checkpoint(c, dir / "missing.ckpt", m, items), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("fixed resampling and fps sampling also run") {
  const auto& m = tiny_data();
  auto c = tiny_config();
  c.optim.epochs = 1;
  c.resample = ResamplePolicy::fixed;
  c.sampling = SamplingStrategy::fps;
  auto r = train(c, m, items_for_contents(m, m.contents()));
  CHECK(std::isfinite(r.log.back().loss));
}

TEST_CASE("constant labels with a matching head bias never move") {
  const auto& base = tiny_data();
  DatasetManifest m = base;
  for (auto& e : m.entries) e.mos = 5.0;
  auto c = tiny_config();
  c.loss.rank = 0.0;
  c.optim.adam.weight_decay = 0.0;
  c.optim.epochs = 3;
  auto p = initial_params(c);
  for (const char* n : {"head.fc0.w", "head.fc0.b", "head.fc1.w"}) {
    for (auto& v : p.mutable_value(n).data) v = 0.0f;
  }
  p.mutable_value("head.fc1.b").data[0] = 5.0f;
  auto r = train(c, m, items_for_contents(m, m.contents()), p);
  for (const auto& e : r.log) CHECK(e.loss == 0.0);
  for (const auto& n : p.names()) CHECK(r.final_params.value(n).data == p.value(n).data);
}

TEST_CASE("checkpoint shape mismatch lists tensors") {
  auto c = tiny_config();
  auto p = initial_params(c);
  auto other = c;
  other.model.c_p = 12;
  try {
    check_params_match(other.model, p);
    FAIL("expected a mismatch");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("point.out.w") != std::string::npos);
    CHECK(msg.find("fuse.proj_p.w") != std::string::npos);
  }
  check_params_match(c.model, p);
}

TEST_CASE("xval layout and fold discipline") {
  const auto& m = tiny_data();
  const auto mpath = m.base_dir / "manifest.csv";
  auto c = tiny_config();
  c.optim.epochs = 1;
  c.manifest = mpath.string();
  const auto out = fs::temp_directory_path() / "mmpcqa_unit_xval";
  fs::remove_all(out);
  auto r = xval(c, 3, out);
  CHECK(r.report.folds.size() == 3);
  for (const char* f : {"config.json", "report.json", "report.csv", "run.json"}) CHECK(fs::exists(out / f));
  for (std::size_t f = 0; f < 3; ++f) {
    const auto fd = out / ("fold_" + std::to_string(f));
    for (const char* name : {"log.csv", "best.ckpt", "final.ckpt", "access.log", "report.json", "split.json"}) {
      CHECK(fs::exists(fd / name));
    }
    const std::set<std::string> test(r.plan.test[f].begin(), r.plan.test[f].end());
    std::ifstream log(fd / "access.log");
    std::string kind, path;
    std::size_t evals = 0;
    while (log >> kind >> path) {
      const auto content = fs::path(path).parent_path().filename().string();
      if (kind == "train") CHECK(test.count(content) == 0);
      if (kind == "eval") {
        CHECK(test.count(content) == 1);
        ++evals;
      }
    }
    CHECK(evals == 5);
  }
  CHECK(slurp(out / "report.json").find("wall") == std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("ablation csv") {
  std::vector<AblationRow> rows{{"modality", "P", {0.5, 0.4, 0.6, 1.0, {}}}};
  const auto csv = ablation_to_csv(rows);
  CHECK(csv.rfind("study,variant,srcc,krcc,plcc,rmse\n", 0) == 0);
  CHECK(csv.find("modality,P,") != std::string::npos);
  CHECK_THROWS_AS(ablate(tiny_config(), "colour", 2, fs::temp_directory_path()), ValidationError);
}

TEST_CASE("cli exit codes") {
  CHECK(cli({"bogus"}) == 1);
  CHECK(cli({"--no-such-flag", "train"}) == 1);
  CHECK(cli({}) == 1);
  CHECK(cli({"train", "--manifest", "/nonexistent/manifest.csv"}) == 1);
  CHECK(cli({"train"}) == 1);
  CHECK(cli({"eval", "--checkpoint", "/nonexistent/x.ckpt", "--manifest", "/nonexistent/m.csv"}) == 1);

  const auto dir = fs::temp_directory_path() / "mmpcqa_unit_cli";
  fs::remove_all(dir);
  const auto ply = tiny_data().resolve(tiny_data().entries[0]);
  CHECK(cli({"--out", (dir / "p.json").string(), "patch", "--input", ply.string(), "--ns", "64"}) == 0);
  auto j = nlohmann::json::parse(slurp(dir / "p.json"));
  CHECK(j["count"] == 300 / 64 + 1);
  CHECK(j["submodels"][0].size() == 64);
  CHECK(cli({"--out", (dir / "r").string(), "render", "--input", ply.string(), "--views", "2"}) == 0);
  CHECK(fs::exists(dir / "r" / "view_1.png"));
  CHECK(fs::exists(dir / "r" / "cameras.json"));
  fs::remove_all(dir);
}
