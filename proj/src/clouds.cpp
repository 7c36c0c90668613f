#include "mmpcqa/clouds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmpcqa/error.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

namespace {

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

std::vector<Vec3> apply_frame(const std::vector<Vec3>& geometry, const NormalizationFrame& f) {
  std::vector<Vec3> out(geometry.size());
  for (std::size_t i = 0; i < geometry.size(); ++i) {
    for (int a = 0; a < 3; ++a) out[i][a] = (geometry[i][a] - f.centroid[a]) / f.scale;
  }
  return out;
}

}  // namespace

void ColoredPointCloud::validate() const {
  if (geometry.empty()) throw ValidationError("point cloud is empty");
  if (geometry.size() != color.size()) {
    throw ValidationError("geometry/color length mismatch: " + std::to_string(geometry.size()) +
                          " vs " + std::to_string(color.size()));
  }
  for (const auto& c : color) {
    for (double v : c) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("color component outside [0,1]");
    }
  }
  for (const auto& p : geometry) {
    for (double v : p) {
      if (!std::isfinite(v)) throw ValidationError("non-finite coordinate");
    }
  }
}

NormalizationFrame normalization_frame(const std::vector<Vec3>& geometry) {
  if (geometry.size() < 2) throw ValidationError("normalize needs at least 2 points");
  NormalizationFrame f;
  for (const auto& p : geometry) {
    for (int a = 0; a < 3; ++a) f.centroid[a] += p[a];
  }
  for (int a = 0; a < 3; ++a) f.centroid[a] /= static_cast<double>(geometry.size());
  double max_sq = 0.0;
  for (const auto& p : geometry) max_sq = std::max(max_sq, squared_distance(p, f.centroid));
  f.scale = std::sqrt(max_sq);
  if (!(f.scale > 0.0) || !std::isfinite(f.scale)) throw ValidationError("zero scale");
  return f;
}

NormalizedCloud normalize(const ColoredPointCloud& cloud) {
  const auto frame = normalization_frame(cloud.geometry);
  return NormalizedCloud{apply_frame(cloud.geometry, frame), cloud.id};
}

NormalizedCloud normalize(const NormalizedCloud& cloud) {
  const auto frame = normalization_frame(cloud.geometry);
  return NormalizedCloud{apply_frame(cloud.geometry, frame), cloud.source_id};
}

ColoredPointCloud normalize_colored(const ColoredPointCloud& cloud) {
  const auto frame = normalization_frame(cloud.geometry);
  return ColoredPointCloud{apply_frame(cloud.geometry, frame), cloud.color, cloud.id};
}

std::vector<std::size_t> fps(const NormalizedCloud& cloud, std::size_t k, std::size_t start) {
  const std::size_t n = cloud.size();
  if (k < 1 || k > n) {
    throw ValidationError("fps: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  if (start >= n) throw ValidationError("fps: start index out of range");

  std::vector<std::size_t> picked;
  picked.reserve(k);
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);

  std::size_t current = start;
  for (;;) {
    picked.push_back(current);
    taken[current] = 1;
    if (picked.size() == k) break;
    const Vec3& c = cloud.geometry[current];
    std::size_t best = n;
    double best_dist = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_dist[i] = std::min(min_dist[i], squared_distance(cloud.geometry[i], c));
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

std::vector<std::size_t> knn(const NormalizedCloud& cloud, std::size_t anchor, std::size_t k) {
  const std::size_t n = cloud.size();
  if (k < 1 || k > n) {
    throw ValidationError("knn: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  if (anchor >= n) throw ValidationError("knn: anchor index out of range");

  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n - 1);
  const Vec3& a = cloud.geometry[anchor];
  for (std::size_t i = 0; i < n; ++i) {
    if (i != anchor) cand.emplace_back(squared_distance(cloud.geometry[i], a), i);
  }
  const std::size_t rest = k - 1;
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(rest), cand.end());

  std::vector<std::size_t> out;
  out.reserve(k);
  out.push_back(anchor);
  for (std::size_t i = 0; i < rest; ++i) out.push_back(cand[i].second);
  return out;
}

std::size_t submodel_count(std::size_t n, std::size_t ns) {
  if (ns == 0) throw ValidationError("sub-model size must be positive");
  return n / ns + 1;
}

SubModelSet patch_up(const NormalizedCloud& cloud, std::size_t ns, PatchMode mode, std::size_t start) {
  if (ns == 0) throw ValidationError("sub-model size must be positive");
  const std::size_t n = cloud.size();
  if (n == 0) throw ValidationError("patch_up: empty cloud");
  if (start >= n) throw ValidationError("patch_up: start index " + std::to_string(start) + " out of range");

  const NormalizedCloud* work = &cloud;
  NormalizedCloud padded;
  if (n < ns) {
    if (mode == PatchMode::strict) {
      throw ValidationError("patch_up: cloud has " + std::to_string(n) +
                            " points, fewer than the sub-model size " + std::to_string(ns));
    }
    padded.source_id = cloud.source_id;
    padded.geometry.reserve(ns);
    for (std::size_t i = 0; i < ns; ++i) padded.geometry.push_back(cloud.geometry[i % n]);
    work = &padded;
  }

  SubModelSet set;
  set.points_per_submodel = ns;
  const std::size_t count = submodel_count(work->size(), ns);
  // More anchors than points can only happen for ns == 1; cap at the cloud size.
  const auto anchors = fps(*work, std::min(count, work->size()), start);
  for (std::size_t anchor : anchors) {
    auto members = knn(*work, anchor, ns);
    for (auto& m : members) m %= n;
    set.anchors.push_back(anchor % n);
    set.submodels.push_back(std::move(members));
  }
  return set;
}

std::vector<SubModelPoints> select_submodels(const NormalizedCloud& cloud, const SubModelSet& set,
                                             std::size_t count, std::uint64_t seed,
                                             bool with_replacement) {
  if (set.count() == 0) throw ValidationError("select_submodels: empty sub-model set");
  if (count == 0) throw ValidationError("select_submodels: count must be positive");

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  if (with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, set.count() - 1);
    for (std::size_t i = 0; i < count; ++i) chosen.push_back(pick(rng));
  } else {
    if (count > set.count()) {
      throw ValidationError("select_submodels: cannot draw " + std::to_string(count) +
                            " of " + std::to_string(set.count()) + " without replacement");
    }
    chosen.resize(set.count());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(count);
  }

  std::vector<SubModelPoints> out;
  out.reserve(count);
  for (std::size_t s : chosen) {
    SubModelPoints pts;
    pts.reserve(set.submodels[s].size() * 3);
    for (std::size_t idx : set.submodels[s]) {
      if (idx >= cloud.size()) throw ValidationError("select_submodels: index out of range");
      const auto& p = cloud.geometry[idx];
      pts.insert(pts.end(), p.begin(), p.end());
    }
    out.push_back(std::move(pts));
  }
  return out;
}

std::vector<SubModelPoints> fps_point_groups(const NormalizedCloud& cloud, std::size_t count,
                                             std::size_t ns) {
  if (count == 0 || ns == 0) throw ValidationError("fps_point_groups: counts must be positive");
  const std::size_t total = count * ns;
  const auto order = fps(cloud, std::min(total, cloud.size()), 0);
  std::vector<SubModelPoints> out(count);
  for (std::size_t i = 0; i < total; ++i) {
    const auto& p = cloud.geometry[order[i % order.size()]];
    out[i / ns].insert(out[i / ns].end(), p.begin(), p.end());
  }
  return out;
}

nlohmann::json submodels_to_json(const SubModelSet& set) {
  return nlohmann::json{{"anchor_indices", set.anchors}, {"submodels", set.submodels}};
}

}  // namespace mmpcqa
