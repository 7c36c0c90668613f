#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmpcqa/clouds.hpp"

namespace mmpcqa {

enum class ShapeKind { sphere, torus, cube_surface, gaussian_blob };
enum class DistortionKind { downsample, geom_noise, color_noise, color_quantize };

std::string to_string(ShapeKind k);
std::string to_string(DistortionKind k);
ShapeKind parse_shape(const std::string& s);
DistortionKind parse_distortion(const std::string& s);

inline constexpr std::size_t kMinShapePoints = 256;
inline constexpr int kMaxDistortionLevel = 5;

// Points on the surface (or, for the blob, in the volume) with a smooth color
// field. Colors are multiples of 1/255 so they survive an 8-bit PLY round trip.
ColoredPointCloud gen_shape(ShapeKind kind, std::size_t n, std::uint64_t seed);

// level in 1..5. Geometric noise is relative to the cloud's normalization
// scale.
ColoredPointCloud apply_distortion(const ColoredPointCloud& cloud, DistortionKind kind, int level,
                                   std::uint64_t seed);

// Fraction of points kept by downsample at `level`.
std::size_t downsample_count(std::size_t n, int level);

struct ManifestEntry {
  std::string path;  // relative to the manifest directory, or absolute
  std::string content_id;
  std::string distortion;  // "none" for the pristine cloud
  int level = 0;
  double mos = 0.0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // directory that relative paths resolve against

  std::filesystem::path resolve(const ManifestEntry& e) const;
  // Sorted, unique content ids.
  std::vector<std::string> contents() const;
};

struct SynthOptions {
  std::size_t contents = 4;
  std::vector<DistortionKind> types{DistortionKind::downsample, DistortionKind::geom_noise,
                                    DistortionKind::color_noise, DistortionKind::color_quantize};
  int levels = 3;
  std::size_t points = 4096;
  std::uint64_t seed = 0;

  void validate() const;
};

// Pseudo-MOS before jitter: 10 - 9 * level / levels.
double base_mos(int level, int levels);
inline constexpr double kMosJitter = 0.2;

// Writes <out>/<content>/<file>.ply and <out>/manifest.csv.
DatasetManifest build_dataset(const SynthOptions& options, const std::filesystem::path& out_dir);

std::string manifest_to_csv(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace mmpcqa
