#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mmpcqa/error.hpp"
#include "mmpcqa/harness.hpp"
#include "mmpcqa/ply.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeError("write failed: " + path.string());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_metrics(const std::string& label, const Metrics& m) {
  std::printf("%s srcc=%.4f krcc=%.4f plcc=%.4f rmse=%.4f\n", label.c_str(), m.srcc, m.krcc, m.plcc, m.rmse);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"No-reference point cloud quality assessment: data, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  app.add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed override");
  app.add_option("--out", out, "Output file or directory");
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  std::size_t contents = 4, points = 4096;
  int levels = 3;
  std::string types = "downsample,geom_noise,color_noise,color_quantize";
  synth->add_option("--contents", contents, "Number of source clouds");
  synth->add_option("--types", types, "Comma-separated distortion types");
  synth->add_option("--levels", levels, "Levels per distortion type (1-5)");
  synth->add_option("--points", points, "Points per pristine cloud");

  auto* patch = app.add_subcommand("patch", "Split a cloud into sub-models and print them as JSON");
  std::string input, mode = "strict";
  std::optional<std::size_t> ns;
  patch->add_option("--input", input, "PLY file")->required();
  patch->add_option("--ns", ns, "Points per sub-model");
  patch->add_option("--mode", mode, "strict or pad")->check(CLI::IsMember({"strict", "pad"}));

  auto* render = app.add_subcommand("render", "Render random projections of a cloud to PNG");
  std::optional<std::size_t> views;
  bool full = false;
  render->add_option("--input", input, "PLY file")->required();
  render->add_option("--views", views, "Number of projections");
  render->add_flag("--full", full, "Also write the uncropped projections");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every operator, the network and the losses");

  auto* train_cmd = app.add_subcommand("train", "Train on a manifest");
  std::string manifest;
  std::optional<std::size_t> fold, epochs;
  train_cmd->add_option("--manifest", manifest, "Dataset manifest (overrides the config)");
  train_cmd->add_option("--fold", fold, "Train on the training split of this fold only");
  train_cmd->add_option("--epochs", epochs, "Epoch count override");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, split = "all";
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", manifest, "Dataset manifest (overrides the config)");
  eval_cmd->add_option("--fold", fold, "Fold whose split is evaluated");
  eval_cmd->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));

  auto* ablate_cmd = app.add_subcommand("ablate", "Ablation study");
  std::string study;
  std::optional<std::size_t> k;
  ablate_cmd->add_option("study", study, "modality, patching or counts")
      ->required()
      ->check(CLI::IsMember({"modality", "patching", "counts"}));
  ablate_cmd->add_option("--manifest", manifest, "Dataset manifest (overrides the config)");
  ablate_cmd->add_option("--k", k, "Fold count");

  auto* xval_cmd = app.add_subcommand("xval", "Content-disjoint k-fold cross validation");
  xval_cmd->add_option("--manifest", manifest, "Dataset manifest (overrides the config)");
  xval_cmd->add_option("--k", k, "Fold count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  std::ostream* progress = verbose ? &std::cerr : nullptr;
  try {
    RunConfig config;
    if (!config_path.empty()) config = load_run_config(config_path);
    if (seed) config.seed = *seed;
    if (!manifest.empty()) config.manifest = manifest;
    if (epochs) config.optim.epochs = *epochs;
    config.validate();
    auto need_manifest = [&] {
      if (config.manifest.empty()) throw ValidationError("no manifest given (--manifest or config)");
      return read_manifest(config.manifest);
    };

    if (*synth) {
      SynthOptions o;
      o.contents = contents;
      o.levels = levels;
      o.points = points;
      o.seed = config.seed;
      o.types.clear();
      for (const auto& t : split_list(types)) o.types.push_back(parse_distortion(t));
      const auto m = build_dataset(o, out.empty() ? "synth" : out);
      std::printf("wrote %zu entries, %zu contents to %s\n", m.entries.size(), m.contents().size(),
                  (m.base_dir / "manifest.csv").c_str());
      return 0;
    }
    if (*patch) {
      const auto cloud = normalize(read_ply(input));
      const std::size_t n = ns.value_or(config.model.n_s);
      const auto set = patch_up(cloud, n, mode == "pad" ? PatchMode::pad : PatchMode::strict);
      nlohmann::json j = submodels_to_json(set);
      j["source"] = input;
      j["points"] = cloud.size();
      j["n_s"] = n;
      j["count"] = set.count();
      const std::string text = j.dump(2) + "\n";
      if (out.empty()) {
        std::cout << text;
      } else {
        write_file(out, text);
      }
      return 0;
    }
    if (*render) {
      const auto cloud = normalize_colored(read_ply(input));
      const std::size_t n = views.value_or(config.model.n_i);
      const std::filesystem::path dir = out.empty() ? "render" : out;
      std::filesystem::create_directories(dir);
      const auto crops = render_views(cloud, n, config.seed, config.render);
      nlohmann::json cams = nlohmann::json::array();
      for (std::size_t v = 0; v < n; ++v) {
        write_png(dir / ("view_" + std::to_string(v) + ".png"), crops[v]);
        const Camera cam = sample_camera(mix_seed(config.seed, {v, 0}), config.render.distance, config.render.width,
                                         config.render.height);
        cams.push_back(cam);
        if (full) {
          const int radius = config.render.splat_radius < 0
                                 ? default_splat_radius(config.render.width, config.render.height)
                                 : config.render.splat_radius;
          write_png(dir / ("full_" + std::to_string(v) + ".png"),
                    rasterize(cloud, cam, radius, config.render.background).pixels);
        }
      }
      write_file(dir / "cameras.json", cams.dump(2) + "\n");
      std::printf("wrote %zu views to %s\n", n, dir.c_str());
      return 0;
    }
    if (*gradcheck) {
      bool ok = true;
      for (const auto& row : gradient_suite(config.seed + 1)) {
        std::printf("%-36s cases=%-3zu max_rel_err=%.3e tol=%.0e %s\n", row.name.c_str(), row.cases, row.max_error,
                    row.tolerance, row.pass() ? "PASS" : "FAIL");
        ok = ok && row.pass();
      }
      return ok ? 0 : 2;
    }
    if (*train_cmd) {
      const auto m = need_manifest();
      std::vector<std::size_t> items;
      if (fold) {
        const auto plan = make_folds(m.contents(), config.folds, config.seed);
        if (*fold >= plan.folds()) throw ValidationError("fold index out of range");
        items = items_for_contents(m, plan.train_contents(*fold));
      } else {
        items = items_for_contents(m, m.contents());
      }
      const auto result = train(config, m, items, progress);
      const std::filesystem::path dir = out.empty() ? "runs/train" : out;
      write_train_outputs(dir, config, result);
      std::printf("initial loss %.6g, final loss %.6g, best epoch %zu\n", result.log.front().loss,
                  result.log.back().loss, result.best_epoch);
      return 0;
    }
    if (*eval_cmd) {
      const auto m = need_manifest();
      std::vector<std::size_t> items;
      if (fold && split != "all") {
        const auto plan = make_folds(m.contents(), config.folds, config.seed);
        if (*fold >= plan.folds()) throw ValidationError("fold index out of range");
        items = items_for_contents(m, split == "test" ? plan.test[*fold] : plan.train_contents(*fold));
      } else {
        items = items_for_contents(m, m.contents());
      }
      const auto report = aggregate({evaluate_checkpoint(config, checkpoint, m, items, fold.value_or(0))});
      if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_file(std::filesystem::path(out) / "report.json", report_to_json(report).dump(2) + "\n");
        write_file(std::filesystem::path(out) / "report.csv", report_to_csv(report));
      }
      print_metrics("eval", report.mean);
      return 0;
    }
    if (*ablate_cmd) {
      const auto rows = ablate(config, study, k.value_or(config.folds), out.empty() ? "runs/ablate" : out, progress);
      std::cout << ablation_to_csv(rows);
      return 0;
    }
    if (*xval_cmd) {
      if (config.manifest.empty()) throw ValidationError("no manifest given (--manifest or config)");
      const auto r = xval(config, k.value_or(config.folds), out.empty() ? "runs/xval" : out, progress);
      for (const auto& f : r.report.folds) print_metrics("fold " + std::to_string(f.fold), f.metrics);
      print_metrics("mean", r.report.mean);
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace mmpcqa
