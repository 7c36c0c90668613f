#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpcqa/clouds.hpp"

namespace mmpcqa {

// Pinhole camera looking at the origin from `direction * distance`.
struct Camera {
  Vec3 direction{0.0, 0.0, 1.0};
  double distance = 3.0;  // in normalized-cloud radii
  Vec3 up{0.0, 1.0, 0.0};
  double fov_y = 40.0;  // degrees
  int width = 512;
  int height = 512;

  void validate() const;
};

void to_json(nlohmann::json& j, const Camera& c);
void from_json(const nlohmann::json& j, Camera& c);

// Interleaved RGB raster, components in [0,1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // height * width * 3

  double& at(int y, int x, int ch) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
  double at(int y, int x, int ch) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
};

struct ProjectionImage {
  RgbImage pixels;
  std::vector<double> depth;  // +inf where the background was written
  Camera camera;
  std::string source_id;
};

inline constexpr double kDefaultFovY = 40.0;
inline constexpr double kDefaultDistance = 3.0;

Camera sample_camera(std::uint64_t seed, double distance, int width, int height);

// Square-splat half-width: 1 px at a 1080-line canvas, scaled with the
// shorter canvas side and rounded (0 means single-pixel splats).
int default_splat_radius(int width, int height);

ProjectionImage rasterize(const ColoredPointCloud& normalized, const Camera& camera, int splat_radius,
                          const Vec3& background = {1.0, 1.0, 1.0});

RgbImage crop_patch(const RgbImage& image, int size, std::uint64_t seed);
RgbImage crop_at(const RgbImage& image, int size, int x0, int y0);

struct RenderSettings {
  int width = 512;
  int height = 512;
  int crop = 224;
  double distance = kDefaultDistance;
  int splat_radius = -1;  // < 0 selects default_splat_radius
  Vec3 background{1.0, 1.0, 1.0};
};

// `views` independent random projections of a normalized colored cloud, one
// random crop each.
std::vector<RgbImage> render_views(const ColoredPointCloud& normalized, std::size_t views,
                                   std::uint64_t seed, const RenderSettings& settings);

// 8-bit RGB PNG, no alpha.
std::string encode_png(const RgbImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace mmpcqa
