#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpcqa/clouds.hpp"
#include "mmpcqa/evalkit.hpp"
#include "mmpcqa/network.hpp"
#include "mmpcqa/objective.hpp"
#include "mmpcqa/params.hpp"
#include "mmpcqa/render.hpp"
#include "mmpcqa/synthdata.hpp"

namespace mmpcqa {

enum class ResamplePolicy { per_epoch, fixed };
enum class SamplingStrategy { patch_up, fps };

struct OptimConfig {
  AdamOptions adam;
  std::size_t batch_size = 8;  // invented
  std::size_t epochs = 50;
};

struct RunConfig {
  std::string manifest;
  ModelConfig model;
  OptimConfig optim;
  LossWeights loss;
  std::uint64_t seed = 0;
  ResamplePolicy resample = ResamplePolicy::per_epoch;
  SamplingStrategy sampling = SamplingStrategy::patch_up;
  PatchMode patch_mode = PatchMode::strict;
  bool random_fps_start = false;  // first patch-up anchor drawn per cloud instead of index 0
  RenderSettings render;
  std::size_t folds = 9;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// Loads manifest items on demand, caches the prepared clouds and records
// every file it opens.
class DataSource {
 public:
  DataSource(const DatasetManifest& manifest, const RunConfig& config);

  std::size_t size() const { return manifest_.entries.size(); }
  const ManifestEntry& entry(std::size_t index) const { return manifest_.entries.at(index); }
  std::string path(std::size_t index) const { return manifest_.resolve(entry(index)).string(); }

  ModelInputs<float> inputs(std::size_t index, std::uint64_t submodel_seed, std::uint64_t view_seed);
  std::vector<SubModelPoints> submodels(std::size_t index, std::uint64_t seed);
  std::vector<RgbImage> views(std::size_t index, std::uint64_t seed);

  const std::vector<std::string>& access_log() const { return access_; }

 private:
  struct Prepared {
    NormalizedCloud geometry;
    ColoredPointCloud colored;  // normalized
    SubModelSet patches;
    std::vector<SubModelPoints> fps_groups;
  };
  Prepared& load(std::size_t index);

  DatasetManifest manifest_;
  RunConfig config_;
  std::map<std::size_t, std::unique_ptr<Prepared>> cache_;
  std::vector<std::string> access_;
};

// Indices of the manifest entries whose content is in `contents`.
std::vector<std::size_t> items_for_contents(const DatasetManifest& m, const std::vector<std::string>& contents);

struct EpochLog {
  std::size_t epoch = 0;  // 0 = loss before the first update
  double loss = 0.0;
};

struct TrainResult {
  ParameterStore<float> final_params;
  ParameterStore<float> best_params;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
  std::vector<EpochLog> log;
  std::vector<std::string> access_log;
};

ParameterStore<float> initial_params(const RunConfig& config);

// Mini-batch Adam on the given manifest items. Batches are forwarded item by
// item, the batch loss is formed over all predictions and each item's graph
// is seeded with d loss / d prediction.
TrainResult train(const RunConfig& config, const DatasetManifest& manifest, const std::vector<std::size_t>& items,
                  std::ostream* progress = nullptr);
TrainResult train(const RunConfig& config, const DatasetManifest& manifest, const std::vector<std::size_t>& items,
                  ParameterStore<float> params, std::ostream* progress = nullptr);

// Fixed evaluation seeds: the same item always sees the same sub-models and
// views.
PredictionSet predict_items(const RunConfig& config, const ParameterStore<float>& params, DataSource& data,
                            const std::vector<std::size_t>& items);

// Throws ValidationError listing every tensor whose name or shape differs.
void check_params_match(const ModelConfig& model, const ParameterStore<float>& params);

FoldReport evaluate(const RunConfig& config, const ParameterStore<float>& params, const DatasetManifest& manifest,
                    const std::vector<std::size_t>& items, std::size_t fold = 0,
                    std::vector<std::string>* access = nullptr);
FoldReport evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint,
                               const DatasetManifest& manifest, const std::vector<std::size_t>& items,
                               std::size_t fold = 0);

// Writes config.json, log.csv, best.ckpt, final.ckpt and access.log.
void write_train_outputs(const std::filesystem::path& dir, const RunConfig& config, const TrainResult& result);

struct XvalResult {
  FoldPlan plan;
  EvalReport report;
};

// Content-disjoint k-fold loop. Layout:
//   out/config.json, out/report.json, out/report.csv, out/run.json
//   out/fold_<k>/{log.csv, best.ckpt, final.ckpt, access.log, report.json}
// Only run.json holds wall-clock data.
XvalResult xval(const RunConfig& config, std::size_t k, const std::filesystem::path& out_dir,
                std::ostream* progress = nullptr);

struct AblationRow {
  std::string study;
  std::string variant;
  Metrics metrics;
};

// study: modality | patching | counts. Each variant runs the k-fold loop
// with the shared config and seed. Writes ablation_<study>.csv into out_dir.
std::vector<AblationRow> ablate(const RunConfig& config, const std::string& study, std::size_t k,
                                const std::filesystem::path& out_dir, std::ostream* progress = nullptr);
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

struct GradCheckRow {
  std::string name;
  std::size_t cases = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_error <= tolerance; }
};

inline constexpr double kOperatorTolerance = 1e-6;
inline constexpr double kNetworkTolerance = 1e-4;
inline constexpr double kLossTolerance = 1e-7;

// Every graph operator over several shape configurations, the composed
// network at toy widths (parameters and inputs) and both losses.
std::vector<GradCheckRow> gradient_suite(std::uint64_t seed = 1);

// Small widths used by the gradient suite.
ModelConfig toy_model_config();

int run_cli(int argc, char** argv);

}  // namespace mmpcqa
