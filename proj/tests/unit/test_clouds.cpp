#include <cmath>
#include <set>

#include "doctest.h"
#include "mmpcqa/clouds.hpp"
#include "mmpcqa/error.hpp"
#include "mmpcqa/rng.hpp"
#include "oracles.hpp"

using namespace mmpcqa;

namespace {

NormalizedCloud line4() { return NormalizedCloud{{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}}, "line"}; }

NormalizedCloud random_cloud(std::size_t n, std::uint64_t seed, bool grid = false) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> cell(0, 3);
  NormalizedCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    // Grid points produce plenty of exact distance ties.
    if (grid) {
      c.geometry.push_back({double(cell(rng)), double(cell(rng)), double(cell(rng))});
    } else {
      c.geometry.push_back({g(rng), g(rng), g(rng)});
    }
  }
  return c;
}

}  // namespace

TEST_CASE("normalize by hand") {
  ColoredPointCloud c{{{0, 0, 0}, {2, 0, 0}}, {{0, 0, 0}, {1, 1, 1}}, "two"};
  auto n = normalize(c);
  CHECK(n.geometry[0] == Vec3{-1, 0, 0});
  CHECK(n.geometry[1] == Vec3{1, 0, 0});
  CHECK(n.source_id == "two");
}

TEST_CASE("normalize centroid, radius, idempotence") {
  auto raw = random_cloud(300, 11);
  for (auto& p : raw.geometry) {
    p[0] = 5.0 + 3.0 * p[0];
    p[2] -= 7.0;
  }
  auto a = normalize(raw);
  Vec3 c{};
  double rmax = 0.0;
  for (const auto& p : a.geometry) {
    for (int i = 0; i < 3; ++i) c[i] += p[i] / 300.0;
    rmax = std::max(rmax, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  for (double v : c) CHECK(std::abs(v) < 1e-12);
  CHECK(std::abs(rmax - 1.0) < 1e-12);
  auto b = normalize(a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (int k = 0; k < 3; ++k) CHECK(std::abs(a.geometry[i][k] - b.geometry[i][k]) < 1e-12);
  }
}

TEST_CASE("normalize rejects degenerate clouds") {
  ColoredPointCloud same{{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}, {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}, ""};
  CHECK_THROWS_WITH_AS(normalize(same), "zero scale", ValidationError);
  ColoredPointCloud one{{{1, 1, 1}}, {{0, 0, 0}}, ""};
  CHECK_THROWS_AS(normalize(one), ValidationError);
}

TEST_CASE("fps examples") {
  CHECK(fps(line4(), 2, 0) == std::vector<std::size_t>{0, 3});
  CHECK(fps(line4(), 1, 2) == std::vector<std::size_t>{2});
  CHECK(fps(line4(), 4, 0) == std::vector<std::size_t>{0, 3, 1, 2});
  CHECK_THROWS_AS(fps(line4(), 5, 0), ValidationError);
  CHECK_THROWS_AS(fps(line4(), 0, 0), ValidationError);
}

TEST_CASE("fps ties go to the lowest index") {
  // 1 and 2 are both at distance 1 from 0.
  NormalizedCloud c{{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}}, ""};
  CHECK(fps(c, 2, 0) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("knn examples") {
  CHECK(knn(line4(), 0, 2) == std::vector<std::size_t>{0, 1});
  CHECK(knn(line4(), 2, 1) == std::vector<std::size_t>{2});
  CHECK(knn(line4(), 1, 3) == std::vector<std::size_t>{1, 0, 2});
  CHECK_THROWS_AS(knn(line4(), 0, 5), ValidationError);
}

TEST_CASE("fps and knn match brute force") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const bool grid = seed % 2 == 1;
    const std::size_t n = 64 + 40 * seed;  // up to 504
    auto cloud = random_cloud(n, seed, grid);
    const std::size_t start = seed % n;
    const std::size_t k = std::min<std::size_t>(n, 5 + 3 * seed);
    CHECK(fps(cloud, k, start) == oracle::fps(cloud.geometry, k, start));
    for (std::size_t anchor : {std::size_t{0}, n / 2, n - 1}) {
      for (std::size_t kk : {std::size_t{1}, std::size_t{17}, n}) {
        CHECK(knn(cloud, anchor, kk) == oracle::knn(cloud.geometry, anchor, kk));
      }
    }
  }
}

TEST_CASE("fps properties") {
  auto cloud = random_cloud(200, 5);
  auto order = fps(cloud, 200, 0);
  CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == 200);
  // Min pairwise distance of the first k picks never increases with k.
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k <= 40; ++k) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) m = std::min(m, oracle::sq(cloud.geometry[order[i]], cloud.geometry[order[j]]));
    }
    CHECK(m <= prev);
    prev = m;
  }
}

TEST_CASE("knn distance property") {
  auto cloud = random_cloud(150, 9);
  const std::size_t k = 20;
  auto nn = knn(cloud, 7, k);
  REQUIRE(nn.size() == k);
  const double kth = oracle::sq(cloud.geometry[nn.back()], cloud.geometry[7]);
  std::set<std::size_t> in(nn.begin(), nn.end());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!in.count(i)) CHECK(oracle::sq(cloud.geometry[i], cloud.geometry[7]) >= kth);
  }
}

TEST_CASE("patch_up counts") {
  CHECK(submodel_count(5000, 2048) == 3);
  CHECK(submodel_count(2048, 2048) == 2);
  for (std::size_t n : {64, 65, 100, 127, 128, 300}) {
    auto cloud = random_cloud(n, n);
    auto set = patch_up(cloud, 64);
    CHECK(set.count() == n / 64 + 1);
    CHECK(set.count() * 64 > n);
    for (std::size_t s = 0; s < set.count(); ++s) {
      CHECK(set.submodels[s].size() == 64);
      CHECK(set.submodels[s].front() == set.anchors[s]);
      for (auto i : set.submodels[s]) CHECK(i < n);
    }
  }
}

TEST_CASE("patch_up N = N_s covers the whole cloud twice") {
  auto cloud = random_cloud(128, 3);
  auto set = patch_up(cloud, 128);
  REQUIRE(set.count() == 2);
  for (const auto& s : set.submodels) CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 128);
}

TEST_CASE("patch_up start anchor") {
  const auto cloud = normalize(random_cloud(300, 8));
  for (std::size_t start : {0, 17, 299}) {
    auto set = patch_up(cloud, 64, PatchMode::strict, start);
    CHECK(set.anchors[0] == start);
    CHECK(set.submodels[0][0] == start);
  }
  CHECK_THROWS_AS(patch_up(cloud, 64, PatchMode::strict, 300), ValidationError);
}

TEST_CASE("patch_up small clouds") {
  auto cloud = random_cloud(50, 4);
  CHECK_THROWS_AS(patch_up(cloud, 64, PatchMode::strict), ValidationError);
  auto set = patch_up(cloud, 64, PatchMode::pad);
  CHECK(set.count() == 2);
  for (const auto& s : set.submodels) {
    CHECK(s.size() == 64);
    for (auto i : s) CHECK(i < 50);
  }
}

TEST_CASE("select_submodels") {
  auto cloud = random_cloud(100, 1);
  auto set = patch_up(cloud, 40);  // 3 sub-models
  REQUIRE(set.count() == 3);
  auto a = select_submodels(cloud, set, 6, 42, true);
  auto b = select_submodels(cloud, set, 6, 42, true);
  CHECK(a == b);
  CHECK(a.size() == 6);
  for (const auto& s : a) CHECK(s.size() == 40 * 3);

  auto all = select_submodels(cloud, set, 3, 7, false);
  std::set<double> firsts;
  for (const auto& s : all) firsts.insert(s[0]);
  CHECK(firsts.size() == 3);  // a permutation: every anchor once
  CHECK_THROWS_AS(select_submodels(cloud, set, 4, 7, false), ValidationError);
  CHECK_THROWS_AS(select_submodels(cloud, SubModelSet{}, 1, 7), ValidationError);
}

TEST_CASE("fps_point_groups sizes") {
  auto cloud = random_cloud(300, 2);
  auto g = fps_point_groups(cloud, 6, 32);
  CHECK(g.size() == 6);
  for (const auto& s : g) CHECK(s.size() == 32 * 3);
}

TEST_CASE("sub-model json") {
  auto set = patch_up(line4(), 2);
  auto j = submodels_to_json(set);
  CHECK(j["anchor_indices"].size() == 3);
  CHECK(j["submodels"][0][0] == j["anchor_indices"][0]);
}
