#include "mmpcqa/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "mmpcqa/error.hpp"
#include "mmpcqa/ply.hpp"
#include "mmpcqa/rng.hpp"

namespace mmpcqa {

namespace {

double snap8(double c) { return std::round(std::clamp(c, 0.0, 1.0) * 255.0) / 255.0; }

Vec3 sample_point(ShapeKind kind, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (kind) {
    case ShapeKind::sphere: {
      for (;;) {
        Vec3 p{normal(rng), normal(rng), normal(rng)};
        const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (r < 1e-12) continue;
        return {p[0] / r, p[1] / r, p[2] / r};
      }
    }
    case ShapeKind::torus: {
      constexpr double big = 1.0, small = 0.35;
      for (;;) {
        const double u = 2.0 * std::numbers::pi * unit(rng);
        const double v = 2.0 * std::numbers::pi * unit(rng);
        // area element is proportional to (R + r cos v)
        if (unit(rng) * (big + small) > big + small * std::cos(v)) continue;
        const double ring = big + small * std::cos(v);
        return {ring * std::cos(u), ring * std::sin(u), small * std::sin(v)};
      }
    }
    case ShapeKind::cube_surface: {
      const int face = static_cast<int>(unit(rng) * 6.0) % 6;
      const double a = 2.0 * unit(rng) - 1.0, b = 2.0 * unit(rng) - 1.0;
      const double s = face % 2 == 0 ? 1.0 : -1.0;
      switch (face / 2) {
        case 0: return {s, a, b};
        case 1: return {a, s, b};
        default: return {a, b, s};
      }
    }
    case ShapeKind::gaussian_blob:
      return {0.4 * normal(rng), 0.4 * normal(rng), 0.4 * normal(rng)};
  }
  return {};
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::torus: return "torus";
    case ShapeKind::cube_surface: return "cube-surface";
    case ShapeKind::gaussian_blob: return "gaussian-blob";
  }
  return "?";
}

std::string to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::downsample: return "downsample";
    case DistortionKind::geom_noise: return "geom_noise";
    case DistortionKind::color_noise: return "color_noise";
    case DistortionKind::color_quantize: return "color_quantize";
  }
  return "?";
}

ShapeKind parse_shape(const std::string& s) {
  for (auto k : {ShapeKind::sphere, ShapeKind::torus, ShapeKind::cube_surface, ShapeKind::gaussian_blob}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown shape kind '" + s + "'");
}

DistortionKind parse_distortion(const std::string& s) {
  for (auto k : {DistortionKind::downsample, DistortionKind::geom_noise, DistortionKind::color_noise,
                 DistortionKind::color_quantize}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown distortion '" + s + "'");
}

ColoredPointCloud gen_shape(ShapeKind kind, std::size_t n, std::uint64_t seed) {
  if (n < kMinShapePoints) {
    throw ValidationError("gen_shape: need at least " + std::to_string(kMinShapePoints) + " points, got " +
                          std::to_string(n));
  }
  Rng rng(seed);
  ColoredPointCloud cloud;
  cloud.id = to_string(kind);
  cloud.geometry.reserve(n);
  for (std::size_t i = 0; i < n; ++i) cloud.geometry.push_back(sample_point(kind, rng));

  // smooth color field: one plane wave per channel
  std::uniform_real_distribution<double> freq(1.0, 3.0), phase(0.0, 2.0 * std::numbers::pi);
  std::array<Vec3, 3> k{};
  std::array<double, 3> phi{};
  for (int c = 0; c < 3; ++c) {
    k[c] = {freq(rng), freq(rng), freq(rng)};
    phi[c] = phase(rng);
  }
  cloud.color.reserve(n);
  for (const auto& p : cloud.geometry) {
    Vec3 col;
    for (int c = 0; c < 3; ++c) {
      col[c] = snap8(0.5 + 0.45 * std::sin(k[c][0] * p[0] + k[c][1] * p[1] + k[c][2] * p[2] + phi[c]));
    }
    cloud.color.push_back(col);
  }
  return cloud;
}

std::size_t downsample_count(std::size_t n, int level) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - 0.15 * level)));
}

ColoredPointCloud apply_distortion(const ColoredPointCloud& cloud, DistortionKind kind, int level,
                                   std::uint64_t seed) {
  if (level < 1 || level > kMaxDistortionLevel) {
    throw ValidationError("apply_distortion: level must be in 1.." + std::to_string(kMaxDistortionLevel) +
                          ", got " + std::to_string(level));
  }
  cloud.validate();
  Rng rng(seed);
  ColoredPointCloud out = cloud;
  out.id = cloud.id + "_" + to_string(kind) + "_L" + std::to_string(level);
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (kind) {
    case DistortionKind::downsample: {
      const std::size_t keep = downsample_count(cloud.size(), level);
      std::vector<std::size_t> idx(cloud.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      idx.resize(keep);
      std::sort(idx.begin(), idx.end());
      out.geometry.clear();
      out.color.clear();
      for (auto i : idx) {
        out.geometry.push_back(cloud.geometry[i]);
        out.color.push_back(cloud.color[i]);
      }
      break;
    }
    case DistortionKind::geom_noise: {
      const double sigma = 0.004 * level * normalization_frame(cloud.geometry).scale;
      for (auto& p : out.geometry) {
        for (auto& x : p) x += sigma * normal(rng);
      }
      break;
    }
    case DistortionKind::color_noise: {
      const double sigma = 0.03 * level;
      for (auto& c : out.color) {
        for (auto& x : c) x = snap8(x + sigma * normal(rng));
      }
      break;
    }
    case DistortionKind::color_quantize: {
      const double steps = std::ldexp(1.0, 8 - level) - 1.0;
      for (auto& c : out.color) {
        for (auto& x : c) x = snap8(std::round(x * steps) / steps);
      }
      break;
    }
  }
  return out;
}

void SynthOptions::validate() const {
  if (contents < 2) throw ValidationError("synth: need at least 2 contents");
  if (types.empty()) throw ValidationError("synth: no distortion types");
  if (levels < 1 || levels > kMaxDistortionLevel) {
    throw ValidationError("synth: levels must be in 1.." + std::to_string(kMaxDistortionLevel));
  }
  if (points < kMinShapePoints) throw ValidationError("synth: too few points per cloud");
}

double base_mos(int level, int levels) { return 10.0 - 9.0 * static_cast<double>(level) / levels; }

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& e) const {
  const std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::string> DatasetManifest::contents() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.content_id);
  return {s.begin(), s.end()};
}

DatasetManifest build_dataset(const SynthOptions& options, const std::filesystem::path& out_dir) {
  options.validate();
  const ShapeKind kinds[] = {ShapeKind::sphere, ShapeKind::torus, ShapeKind::cube_surface, ShapeKind::gaussian_blob};
  std::uniform_real_distribution<double> jitter(-kMosJitter, kMosJitter);

  DatasetManifest m;
  m.base_dir = out_dir;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw RuntimeError("synth: cannot create " + out_dir.string() + ": " + ec.message());

  for (std::size_t c = 0; c < options.contents; ++c) {
    const ShapeKind kind = kinds[c % 4];
    char id[64];
    std::snprintf(id, sizeof(id), "c%02zu_%s", c, to_string(kind).c_str());
    const std::string content = id;
    std::filesystem::create_directories(out_dir / content, ec);
    if (ec) throw RuntimeError("synth: cannot create directory for " + content + ": " + ec.message());

    ColoredPointCloud pristine = gen_shape(kind, options.points, mix_seed(options.seed, {c, 0}));
    pristine.id = content;
    Rng jr(mix_seed(options.seed, {c, 0x6a}));
    const double pristine_mos = std::min(10.0, base_mos(0, options.levels) + jitter(jr));

    const std::string rel0 = content + "/" + content + "_pristine.ply";
    write_ply(out_dir / rel0, pristine);
    m.entries.push_back({rel0, content, "none", 0, pristine_mos});

    for (std::size_t t = 0; t < options.types.size(); ++t) {
      double prev = pristine_mos;
      for (int level = 1; level <= options.levels; ++level) {
        const auto seed = mix_seed(options.seed, {c, t + 1, static_cast<std::uint64_t>(level)});
        ColoredPointCloud d = apply_distortion(pristine, options.types[t], level, seed);
        double mos = std::clamp(base_mos(level, options.levels) + jitter(jr), 1.0, 10.0);
        if (mos >= prev) mos = prev - 0.01;  // keep the series strictly decreasing
        prev = mos;
        const std::string name = to_string(options.types[t]);
        const std::string rel = content + "/" + content + "_" + name + "_L" + std::to_string(level) + ".ply";
        write_ply(out_dir / rel, d);
        m.entries.push_back({rel, content, name, level, mos});
      }
    }
  }
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

std::string manifest_to_csv(const DatasetManifest& m) {
  std::string out = "path,content_id,distortion,level,mos\n";
  for (const auto& e : m.entries) {
    out += e.path + "," + e.content_id + "," + e.distortion + "," + std::to_string(e.level) + "," +
           fmt_double(e.mos) + "\n";
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const std::string where = "manifest line " + std::to_string(lineno);
    if (!header) {
      if (f != std::vector<std::string>{"path", "content_id", "distortion", "level", "mos"}) {
        throw ValidationError(where + ": expected header path,content_id,distortion,level,mos");
      }
      header = true;
      continue;
    }
    if (f.size() != 5) throw ValidationError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    ManifestEntry e;
    e.path = f[0];
    e.content_id = f[1];
    e.distortion = f[2];
    if (e.path.empty() || e.content_id.empty()) throw ValidationError(where + ": empty path or content id");
    auto r1 = std::from_chars(f[3].data(), f[3].data() + f[3].size(), e.level);
    auto r2 = std::from_chars(f[4].data(), f[4].data() + f[4].size(), e.mos);
    if (r1.ec != std::errc() || r1.ptr != f[3].data() + f[3].size() || e.level < 0) {
      throw ValidationError(where + ": bad level '" + f[3] + "'");
    }
    if (r2.ec != std::errc() || r2.ptr != f[4].data() + f[4].size() || !std::isfinite(e.mos)) {
      throw ValidationError(where + ": bad mos '" + f[4] + "'");
    }
    m.entries.push_back(std::move(e));
  }
  if (!header) throw ValidationError("manifest is empty");
  if (m.entries.empty()) throw ValidationError("manifest has no entries");
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write manifest " + path.string());
  out << manifest_to_csv(m);
  if (!out) throw RuntimeError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

}  // namespace mmpcqa
