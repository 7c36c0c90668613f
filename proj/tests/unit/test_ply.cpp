#include <filesystem>

#include "doctest.h"
#include "mmpcqa/ply.hpp"
#include "mmpcqa/rng.hpp"

using namespace mmpcqa;

namespace {

ColoredPointCloud sample_cloud(std::size_t n) {
  Rng rng(99);
  std::normal_distribution<double> g(0.0, 10.0);
  std::uniform_int_distribution<int> c(0, 255);
  ColoredPointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    cloud.geometry.push_back({g(rng), g(rng), g(rng)});
    cloud.color.push_back({c(rng) / 255.0, c(rng) / 255.0, c(rng) / 255.0});
  }
  return cloud;
}

std::string contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos ? needle : hay;
}

}  // namespace

TEST_CASE("one-point ascii") {
  const std::string text =
      "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n";
  auto c = parse_ply(text);
  REQUIRE(c.size() == 1);
  CHECK(c.geometry[0] == Vec3{0, 0, 0});
  CHECK(c.color[0] == Vec3{1, 0, 0});
}

TEST_CASE("round trip is bit exact") {
  auto cloud = sample_cloud(257);
  for (auto fmt : {PlyFormat::ascii, PlyFormat::binary_little_endian}) {
    auto back = parse_ply(serialize_ply(cloud, {fmt, true}));
    CHECK(back.geometry == cloud.geometry);
    CHECK(back.color == cloud.color);
  }
  auto path = std::filesystem::temp_directory_path() / "mmpcqa_unit_roundtrip.ply";
  write_ply(path, cloud);
  auto disk = read_ply(path);
  CHECK(disk.geometry == cloud.geometry);
  CHECK(disk.color == cloud.color);
  std::filesystem::remove(path);
}

TEST_CASE("float32 geometry round trips at float precision") {
  auto cloud = sample_cloud(20);
  auto back = parse_ply(serialize_ply(cloud, {PlyFormat::binary_little_endian, false}));
  for (std::size_t i = 0; i < 20; ++i) {
    for (int k = 0; k < 3; ++k) CHECK(back.geometry[i][k] == static_cast<double>(static_cast<float>(cloud.geometry[i][k])));
  }
}

TEST_CASE("unknown properties and elements are ignored") {
  const std::string text =
      "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty double nx\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\n"
      "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "9 1 2 3 0 0 255 7\n9 4 5 6 255 255 255 7\n3 0 1 1\n";
  auto c = parse_ply(text);
  REQUIRE(c.size() == 2);
  CHECK(c.geometry[1] == Vec3{4, 5, 6});
  CHECK(c.color[0] == Vec3{0, 0, 1});
}

TEST_CASE("errors") {
  const std::string head = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n";
  std::string msg;
  try {
    parse_ply(head + "property uchar green\nproperty uchar blue\nend_header\n0 0 0 0 0\n");
  } catch (const PlyError& e) {
    msg = e.what();
  }
  CHECK(contains(msg, "missing color property") == "missing color property");

  CHECK_THROWS_AS(parse_ply("plx\n"), PlyError);
  CHECK_THROWS_AS(parse_ply(head + "property uchar red\nproperty uchar green\nproperty uchar blue\n"), PlyError);
  try {
    parse_ply(head + "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n1 2\n");
    FAIL("expected a throw");
  } catch (const PlyError& e) {
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }

  auto bin = serialize_ply(sample_cloud(3), {PlyFormat::binary_little_endian, true});
  bin.resize(bin.size() - 5);
  try {
    parse_ply(bin);
    FAIL("expected a throw");
  } catch (const PlyError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  CHECK_THROWS_AS(read_ply("/nonexistent/none.ply"), ValidationError);
}
