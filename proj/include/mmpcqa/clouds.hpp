#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace mmpcqa {

using Vec3 = std::array<double, 3>;

// Colored point cloud. Colors are stored in [0,1]; on disk they are 8-bit.
struct ColoredPointCloud {
  std::vector<Vec3> geometry;
  std::vector<Vec3> color;
  std::string id;

  std::size_t size() const { return geometry.size(); }
  // Throws ValidationError when the field invariants do not hold.
  void validate() const;
};

// Geometry-only cloud centered at the origin with unit maximum radius.
struct NormalizedCloud {
  std::vector<Vec3> geometry;
  std::string source_id;

  std::size_t size() const { return geometry.size(); }
};

struct SubModelSet {
  std::vector<std::size_t> anchors;
  std::vector<std::vector<std::size_t>> submodels;
  std::size_t points_per_submodel = 0;

  std::size_t count() const { return anchors.size(); }
};

enum class PatchMode { strict, pad };

// Similarity transform that maps a cloud onto its normalized frame.
struct NormalizationFrame {
  Vec3 centroid{};
  double scale = 1.0;  // maximum distance to the centroid
};

NormalizationFrame normalization_frame(const std::vector<Vec3>& geometry);

NormalizedCloud normalize(const ColoredPointCloud& cloud);
NormalizedCloud normalize(const NormalizedCloud& cloud);

// Same transform as normalize() but keeps the colors; this is what the
// renderer consumes.
ColoredPointCloud normalize_colored(const ColoredPointCloud& cloud);

// Greedy farthest point sampling. Each new pick maximizes its distance to the
// already-picked set; ties go to the lowest index.
std::vector<std::size_t> fps(const NormalizedCloud& cloud, std::size_t k, std::size_t start = 0);

// k nearest neighbors of cloud point `anchor`. The anchor itself is always the
// first entry; the remaining entries are ordered by (distance, index).
std::vector<std::size_t> knn(const NormalizedCloud& cloud, std::size_t anchor, std::size_t k);

// Number of sub-models for a cloud of n points: floor(n / ns) + 1.
std::size_t submodel_count(std::size_t n, std::size_t ns);

// `start` is the first FPS anchor.
SubModelSet patch_up(const NormalizedCloud& cloud, std::size_t ns, PatchMode mode = PatchMode::strict,
                     std::size_t start = 0);

// Row-major ns x 3 coordinates of one sub-model.
using SubModelPoints = std::vector<double>;

std::vector<SubModelPoints> select_submodels(const NormalizedCloud& cloud, const SubModelSet& set,
                                             std::size_t count, std::uint64_t seed,
                                             bool with_replacement = true);

// Point-sampling baseline: FPS of count*ns points split into `count`
// consecutive groups of ns points. Clouds smaller than count*ns are cycled.
std::vector<SubModelPoints> fps_point_groups(const NormalizedCloud& cloud, std::size_t count,
                                             std::size_t ns);

nlohmann::json submodels_to_json(const SubModelSet& set);

}  // namespace mmpcqa
