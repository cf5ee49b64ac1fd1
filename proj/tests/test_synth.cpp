#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "vessel/synth.hpp"

using namespace vessel;

namespace {

std::map<int, int> degrees(const SkeletonGraph& g) {
  std::map<int, int> deg;
  for (const auto& n : g.nodes) deg[n.id] = 0;
  for (const auto& [a, b] : g.edges) {
    deg[a]++;
    deg[b]++;
  }
  return deg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("forced single bifurcation") {
  SynthConfig cfg;
  cfg.depth_min = cfg.depth_max = 1;
  cfg.bifurcation_prob = 1.0;
  Rng rng(1);
  auto g = generate_tree(cfg, rng);
  int bifurcations = 0, leaves = 0;
  for (const auto& [id, d] : degrees(g)) {
    if (d == 3) ++bifurcations;
    if (d == 1) ++leaves;
  }
  CHECK(bifurcations == 1);
  CHECK(leaves == 3);  // root end plus the two branch tips
  CHECK(g.validate().empty());
  CHECK(g.edges.size() == g.nodes.size() - 1);  // loop-free
}

TEST_CASE("zero curvature amplitude gives straight segments") {
  SynthConfig cfg;
  cfg.curvature_min = cfg.curvature_max = 0.0;
  cfg.depth_min = cfg.depth_max = 2;
  cfg.bifurcation_prob = 1.0;
  Rng rng(2);
  auto g = generate_tree(cfg, rng);
  auto sample = extract_segments(g, 200, Vec3{0, 0, 0});
  REQUIRE(!sample.segments.empty());
  for (const auto& rec : sample.segments) {
    int child = rec.child;
    CHECK(sample.key_graph.nodes[child].desc.kappa < 1e-9);
  }
}

TEST_CASE("fixed seed reproduces the tree exactly") {
  SynthConfig cfg;
  Rng a(77), b(77);
  auto ga = generate_tree(cfg, a);
  auto gb = generate_tree(cfg, b);
  CHECK(skeleton_to_json(ga) == skeleton_to_json(gb));
}

TEST_CASE("radii strictly decrease from root to leaves") {
  SynthConfig cfg;
  cfg.depth_min = 3;
  cfg.depth_max = 4;
  Rng rng(5);
  auto g = generate_tree(cfg, rng);
  auto kg = extract_key_graph(g, Vec3{0, 0, 0});
  // each chain's far-end radius is no larger than its start radius,
  // and strictly smaller across bifurcations
  for (int i = 0; i < kg.graph.node_count(); ++i) {
    for (int c : kg.children[i]) {
      double r_parent = g.nodes[kg.skeleton_node[i]].radius;
      double r_child = g.nodes[kg.skeleton_node[c]].radius;
      CHECK(r_child <= r_parent + 1e-12);
    }
  }
  for (const auto& n : g.nodes) CHECK(n.radius > 0.0);
}

TEST_CASE("dataset split and validity") {
  SynthConfig cfg;
  cfg.depth_min = 1;
  cfg.depth_max = 2;
  cfg.points_min = 4;
  cfg.points_max = 8;
  cfg.seed = 9;
  std::string dir = "/tmp/test_synth_dataset";
  std::filesystem::remove_all(dir);
  auto paths = generate_dataset(dir, 10, cfg);
  CHECK(paths.train.size() == 9);
  CHECK(paths.test.size() == 1);
  auto samples = load_dataset(paths.train);
  for (const auto& s : samples) {
    CHECK(validate_key_graph(s.key_graph).empty());
    CHECK(!s.segments.empty());
  }
  SUBCASE("regeneration is byte-identical") {
    std::string before = slurp(paths.train[3]);
    std::filesystem::remove_all(dir);
    generate_dataset(dir, 10, cfg);
    CHECK(slurp(paths.train[3]) == before);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("wider curvature range raises mean segment curvature") {
  SynthConfig lo, hi;
  lo.curvature_min = 0.0;
  lo.curvature_max = 0.05;
  hi.curvature_min = 0.25;
  hi.curvature_max = 0.5;
  lo.depth_min = lo.depth_max = hi.depth_min = hi.depth_max = 2;
  lo.bifurcation_prob = hi.bifurcation_prob = 1.0;
  auto mean_kappa = [](const SynthConfig& cfg) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < 100; ++i) {
      Rng rng(1000 + i);
      auto g = generate_tree(cfg, rng);
      auto s = extract_segments(g, 200, Vec3{0, 0, 0});
      for (const auto& rec : s.segments) {
        sum += s.key_graph.nodes[rec.child].desc.kappa;
        ++count;
      }
    }
    return sum / count;
  };
  CHECK(mean_kappa(hi) > 2.0 * mean_kappa(lo));
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), SynthError);
  cfg = SynthConfig{};
  cfg.bifurcation_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), SynthError);
  cfg = SynthConfig{};
  cfg.depth_max = 0;
  CHECK_THROWS_AS(cfg.validate(), SynthError);
}
