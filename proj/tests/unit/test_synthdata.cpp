#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mmpcqa/error.hpp"
#include "mmpcqa/ply.hpp"
#include "mmpcqa/synthdata.hpp"

using namespace mmpcqa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mmpcqa_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gen_shape") {
  auto s = gen_shape(ShapeKind::sphere, 4096, 1);
  CHECK(s.size() == 4096);
  for (const auto& p : s.geometry) CHECK(std::abs(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) - 1.0) <= 1e-9);
  for (auto k : {ShapeKind::sphere, ShapeKind::torus, ShapeKind::cube_surface, ShapeKind::gaussian_blob}) {
    auto a = gen_shape(k, 300, 5);
    auto b = gen_shape(k, 300, 5);
    CHECK(a.geometry == b.geometry);
    CHECK(a.color == b.color);
    a.validate();
    for (const auto& c : a.color) {
      for (double v : c) CHECK(std::round(v * 255.0) / 255.0 == v);
    }
    CHECK(parse_shape(to_string(k)) == k);
  }
  for (const auto& p : gen_shape(ShapeKind::cube_surface, 500, 2).geometry) {
    CHECK(std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])}) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(gen_shape(ShapeKind::sphere, 100, 1), ValidationError);
}

TEST_CASE("apply_distortion") {
  auto base = gen_shape(ShapeKind::torus, 4096, 3);
  CHECK(apply_distortion(base, DistortionKind::downsample, 2, 1).size() == 2867);
  CHECK(downsample_count(4096, 2) == 2867);
  for (auto k : {DistortionKind::downsample, DistortionKind::geom_noise, DistortionKind::color_noise,
                 DistortionKind::color_quantize}) {
    auto a = apply_distortion(base, k, 3, 9);
    auto b = apply_distortion(base, k, 3, 9);
    CHECK(a.geometry == b.geometry);
    CHECK(a.color == b.color);
    a.validate();
    CHECK_THROWS_AS(apply_distortion(base, k, 0, 9), ValidationError);
    CHECK_THROWS_AS(apply_distortion(base, k, 6, 9), ValidationError);
    CHECK(parse_distortion(to_string(k)) == k);
  }
  // Quantizing to (8 - level) bits leaves at most 2^(8-level) values per channel.
  auto q = apply_distortion(base, DistortionKind::color_quantize, 5, 0);
  std::set<double> levels;
  for (const auto& c : q.color) levels.insert(c[0]);
  CHECK(levels.size() <= 8);
  // Color noise leaves geometry alone; geometry noise leaves colors alone.
  CHECK(apply_distortion(base, DistortionKind::color_noise, 2, 0).geometry == base.geometry);
  CHECK(apply_distortion(base, DistortionKind::geom_noise, 2, 0).color == base.color);
}

TEST_CASE("build_dataset") {
  auto dir = scratch("synth");
  SynthOptions o;
  o.points = 512;
  o.seed = 4;
  auto m = build_dataset(o, dir);
  CHECK(m.entries.size() == 52);
  CHECK(m.contents().size() == 4);

  std::map<std::pair<std::string, std::string>, std::vector<std::pair<int, double>>> series;
  std::map<std::string, double> pristine;
  for (const auto& e : m.entries) {
    CHECK(e.mos >= 1.0);
    CHECK(e.mos <= 10.0);
    CHECK(fs::exists(m.resolve(e)));
    if (e.level == 0) {
      CHECK(e.distortion == "none");
      pristine[e.content_id] = e.mos;
    } else {
      series[{e.content_id, e.distortion}].push_back({e.level, e.mos});
    }
  }
  CHECK(series.size() == 16);
  for (auto& [key, s] : series) {
    std::sort(s.begin(), s.end());
    CHECK(s.size() == 3);
    CHECK(pristine.at(key.first) > s[0].second);
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i].second < s[i - 1].second);
  }
  // Every file parses.
  for (const auto& e : m.entries) CHECK(read_ply(m.resolve(e)).size() > 0);

  const auto dir2 = scratch("synth2");
  auto again = build_dataset(o, dir2);
  CHECK(manifest_to_csv(again) == manifest_to_csv(m));
  for (const auto& e : m.entries) CHECK(slurp(dir / e.path) == slurp(dir2 / e.path));

  auto read = read_manifest(dir / "manifest.csv");
  CHECK(manifest_to_csv(read) == manifest_to_csv(m));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("base mos") {
  CHECK(base_mos(0, 3) == 10.0);
  CHECK(base_mos(3, 3) == 1.0);
}

TEST_CASE("manifest parsing") {
  const std::string ok = "path,content_id,distortion,level,mos\na.ply,c1,none,0,9.5\nb.ply,c1,geom_noise,1,7\n";
  auto m = parse_manifest(ok, "/data");
  CHECK(m.entries.size() == 2);
  CHECK(m.resolve(m.entries[0]) == fs::path("/data/a.ply"));
  CHECK(m.entries[1].mos == 7.0);
  CHECK(manifest_to_csv(m) == ok);
  CHECK_THROWS_AS(parse_manifest("p,c,d,l,m\n", "/"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_manifest("path,content_id,distortion,level,mos\na.ply,c1,none,zero,9\n", "/"),
                       doctest::Contains("line 2"), ValidationError);
  CHECK_THROWS_AS(read_manifest("/nonexistent/manifest.csv"), ValidationError);

  SynthOptions bad;
  bad.contents = 1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
