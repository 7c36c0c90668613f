#include "mmpcqa/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "mmpcqa/error.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

namespace {

// Dot product summed in value order. A signed axis permutation of both
// operands yields the same multiset of products, so the result is bit-exact
// under 90-degree rotations.
double dot_canonical(const Vec3& a, const Vec3& b) {
  double t[3] = {a[0] * b[0], a[1] * b[1], a[2] * b[2]};
  std::sort(t, t + 3);
  return (t[0] + t[1]) + t[2];
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 unit(const Vec3& v) {
  const double n = std::sqrt(dot_canonical(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

}  // namespace

void Camera::validate() const {
  if (std::abs(norm(direction) - 1.0) > 1e-9) throw ValidationError("camera direction is not unit length");
  if (std::abs(norm(up) - 1.0) > 1e-9) throw ValidationError("camera up is not unit length");
  if (norm(cross(direction, up)) < 1e-9) throw ValidationError("camera direction and up are parallel");
  if (!(distance > 1.0)) throw ValidationError("camera distance must exceed 1 (got " + std::to_string(distance) + ")");
  if (width < 32 || height < 32) throw ValidationError("canvas must be at least 32x32");
  if (!(fov_y > 0.0 && fov_y < 180.0)) throw ValidationError("fov_y must be in (0, 180)");
}

void to_json(nlohmann::json& j, const Camera& c) {
  j = nlohmann::json{{"direction", c.direction}, {"distance", c.distance}, {"up", c.up},
                     {"fov_y", c.fov_y},         {"width", c.width},       {"height", c.height}};
}

void from_json(const nlohmann::json& j, Camera& c) {
  j.at("direction").get_to(c.direction);
  j.at("distance").get_to(c.distance);
  j.at("up").get_to(c.up);
  j.at("fov_y").get_to(c.fov_y);
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
}

Camera sample_camera(std::uint64_t seed, double distance, int width, int height) {
  if (!(distance > 1.0)) throw ValidationError("camera distance must exceed 1 (got " + std::to_string(distance) + ")");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 d{};
  double n = 0.0;
  do {
    d = {gauss(rng), gauss(rng), gauss(rng)};
    n = norm(d);
  } while (n < 1e-12);
  Camera cam;
  cam.direction = {d[0] / n, d[1] / n, d[2] / n};
  cam.distance = distance;
  cam.up = std::abs(cam.direction[1]) > 0.99 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
  cam.fov_y = kDefaultFovY;
  cam.width = width;
  cam.height = height;
  cam.validate();
  return cam;
}

int default_splat_radius(int width, int height) {
  return static_cast<int>(std::lround(std::min(width, height) / 1080.0));
}

ProjectionImage rasterize(const ColoredPointCloud& normalized, const Camera& camera, int splat_radius,
                          const Vec3& background) {
  if (normalized.size() == 0) throw ValidationError("rasterize: empty cloud");
  if (normalized.geometry.size() != normalized.color.size()) {
    throw ValidationError("rasterize: geometry/color length mismatch");
  }
  if (splat_radius < 0) throw ValidationError("rasterize: negative splat radius");
  camera.validate();

  const int w = camera.width;
  const int h = camera.height;
  ProjectionImage img;
  img.camera = camera;
  img.source_id = normalized.id;
  img.pixels.width = w;
  img.pixels.height = h;
  img.pixels.data.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < img.pixels.data.size(); i += 3) {
    img.pixels.data[i] = background[0];
    img.pixels.data[i + 1] = background[1];
    img.pixels.data[i + 2] = background[2];
  }
  img.depth.assign(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());

  const Vec3 eye{camera.direction[0] * camera.distance, camera.direction[1] * camera.distance,
                 camera.direction[2] * camera.distance};
  const Vec3 forward{-camera.direction[0], -camera.direction[1], -camera.direction[2]};
  const Vec3 right = unit(cross(forward, camera.up));
  const Vec3 true_up = cross(right, forward);
  const double focal = (h / 2.0) / std::tan(camera.fov_y * std::numbers::pi / 360.0);
  const double cx = w / 2.0;
  const double cy = h / 2.0;

  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const auto& p = normalized.geometry[i];
    const Vec3 rel{p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]};
    const double z = dot_canonical(rel, forward);
    if (!(z > 1e-9)) continue;
    const double px = cx + focal * dot_canonical(rel, right) / z;
    const double py = cy - focal * dot_canonical(rel, true_up) / z;
    if (!std::isfinite(px) || !std::isfinite(py)) continue;
    const long col = static_cast<long>(std::floor(px));
    const long row = static_cast<long>(std::floor(py));
    const long r = splat_radius;
    for (long y = std::max(0L, row - r); y <= std::min<long>(h - 1, row + r); ++y) {
      for (long x = std::max(0L, col - r); x <= std::min<long>(w - 1, col + r); ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
        if (z < img.depth[idx]) {
          img.depth[idx] = z;
          const auto& c = normalized.color[i];
          img.pixels.data[idx * 3] = c[0];
          img.pixels.data[idx * 3 + 1] = c[1];
          img.pixels.data[idx * 3 + 2] = c[2];
        }
      }
    }
  }
  return img;
}

RgbImage crop_at(const RgbImage& image, int size, int x0, int y0) {
  if (size <= 0 || size > image.width || size > image.height) {
    throw ValidationError("crop size " + std::to_string(size) + " does not fit a " +
                          std::to_string(image.width) + "x" + std::to_string(image.height) + " canvas");
  }
  if (x0 < 0 || y0 < 0 || x0 + size > image.width || y0 + size > image.height) {
    throw ValidationError("crop offset out of range");
  }
  RgbImage out;
  out.width = size;
  out.height = size;
  out.data.resize(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y) {
    const auto* src = &image.data[(static_cast<std::size_t>(y0 + y) * image.width + x0) * 3];
    std::copy(src, src + static_cast<std::size_t>(size) * 3, &out.data[static_cast<std::size_t>(y) * size * 3]);
  }
  return out;
}

RgbImage crop_patch(const RgbImage& image, int size, std::uint64_t seed) {
  if (size <= 0 || size > image.width || size > image.height) {
    throw ValidationError("crop size " + std::to_string(size) + " does not fit a " +
                          std::to_string(image.width) + "x" + std::to_string(image.height) + " canvas");
  }
  Rng rng(seed);
  std::uniform_int_distribution<int> ox(0, image.width - size);
  std::uniform_int_distribution<int> oy(0, image.height - size);
  const int x0 = ox(rng);
  const int y0 = oy(rng);
  return crop_at(image, size, x0, y0);
}

std::vector<RgbImage> render_views(const ColoredPointCloud& normalized, std::size_t views,
                                   std::uint64_t seed, const RenderSettings& settings) {
  if (views == 0) throw ValidationError("render_views: need at least one view");
  const int radius = settings.splat_radius < 0 ? default_splat_radius(settings.width, settings.height)
                                               : settings.splat_radius;
  std::vector<RgbImage> out;
  out.reserve(views);
  for (std::size_t v = 0; v < views; ++v) {
    const Camera cam = sample_camera(mix_seed(seed, {v, 0}), settings.distance, settings.width, settings.height);
    const auto img = rasterize(normalized, cam, radius, settings.background);
    out.push_back(crop_patch(img.pixels, settings.crop, mix_seed(seed, {v, 1})));
  }
  return out;
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(
                   crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png(const RgbImage& image) {
  std::string raw;
  raw.reserve(static_cast<std::size_t>(image.height) * (image.width * 3 + 1));
  for (int y = 0; y < image.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        raw.push_back(static_cast<char>(std::lround(std::clamp(image.at(y, x, c), 0.0, 1.0) * 255.0)));
      }
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &bound, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
    throw RuntimeError("png: deflate failed");
  }
  packed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit, truecolor, deflate, no filter, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", "");
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mmpcqa
