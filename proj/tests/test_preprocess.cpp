#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "vessel/preprocess.hpp"
#include "vessel/rng.hpp"

using namespace vessel;

namespace {

VoxelGrid make_grid(int nx, int ny, int nz, std::array<double, 3> spacing = {1, 1, 1}) {
  VoxelGrid v;
  v.dims = {nx, ny, nz};
  v.spacing = spacing;
  v.data.assign(v.voxel_count(), 0);
  return v;
}

void fill_ball(VoxelGrid& v, Vec3 center, double radius) {
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[0]; ++x) {
        Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        if (norm(p - center) <= radius) v.data[v.index(x, y, z)] = 1;
      }
}

// degree census on a skeleton graph
std::map<int, int> degrees(const SkeletonGraph& g) {
  std::map<int, int> deg;
  for (const auto& n : g.nodes) deg[n.id] = 0;
  for (const auto& [a, b] : g.edges) {
    deg[a]++;
    deg[b]++;
  }
  return deg;
}

SkeletonGraph path_graph(int n, double step = 1.0, double radius = 1.0) {
  SkeletonGraph g;
  for (int i = 0; i < n; ++i) g.nodes.push_back({i, {i * step, 0, 0}, radius});
  for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

}  // namespace

TEST_CASE("thinning keeps a single voxel") {
  auto v = make_grid(3, 3, 3);
  v.data[v.index(1, 1, 1)] = 1;
  auto skel = thin_volume(v);
  REQUIRE(skel.size() == 1);
  CHECK(*skel.begin() == VoxelCoord{1, 1, 1});
}

TEST_CASE("thinning errors") {
  auto empty = make_grid(4, 4, 4);
  CHECK_THROWS_AS(thin_volume(empty), PreprocessError);
  auto two = make_grid(8, 8, 8);
  two.data[two.index(1, 1, 1)] = 1;
  two.data[two.index(6, 6, 6)] = 1;  // not 26-adjacent
  CHECK_THROWS_AS(thin_volume(two), PreprocessError);
}

TEST_CASE("thinning a solid bar yields a line along its axis") {
  auto v = make_grid(5, 5, 22);
  for (int z = 1; z <= 20; ++z)
    for (int y = 1; y <= 3; ++y)
      for (int x = 1; x <= 3; ++x) v.data[v.index(x, y, z)] = 1;
  auto skel = thin_volume(v);
  // skeleton stays inside the bar and is a simple path spanning its length
  for (const auto& c : skel) CHECK(v.at(c[0], c[1], c[2]));
  CHECK(skel.size() >= 18);
  CHECK(skel.size() <= 24);
  std::map<VoxelCoord, double> radii;
  for (const auto& c : skel) radii[c] = 1.0;
  auto g = skeleton_to_graph(skel, radii);
  auto deg = degrees(g);
  int endpoints = 0;
  for (const auto& [id, d] : deg) {
    CHECK(d <= 2);
    if (d == 1) ++endpoints;
  }
  CHECK(endpoints == 2);
  CHECK(g.edges.size() == g.nodes.size() - 1);
  int zmin = 100, zmax = -1;
  for (const auto& c : skel) {
    zmin = std::min(zmin, c[2]);
    zmax = std::max(zmax, c[2]);
  }
  CHECK(zmax - zmin >= 17);
}

TEST_CASE("thinning a solid torus keeps exactly one cycle") {
  auto v = make_grid(24, 24, 9);
  double R = 7.0, r = 2.2;
  Vec3 c{11.5, 11.5, 4.0};
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[0]; ++x) {
        double dx = x - c[0], dy = y - c[1], dz = z - c[2];
        double q = std::sqrt(dx * dx + dy * dy) - R;
        if (q * q + dz * dz <= r * r) v.data[v.index(x, y, z)] = 1;
      }
  auto skel = thin_volume(v);
  std::map<VoxelCoord, double> radii;
  for (const auto& cc : skel) radii[cc] = 1.0;
  auto g = skeleton_to_graph(skel, radii);
  // connected graph: cycle rank = E - V + 1
  CHECK(g.edges.size() - g.nodes.size() + 1 == 1);
}

TEST_CASE("thinning preserves component count on random tubular volumes") {
  Rng rng(401);
  for (int rep = 0; rep < 8; ++rep) {
    auto v = make_grid(16, 16, 16);
    // random polyline tube
    Vec3 p{rng.uniform(4, 12), rng.uniform(4, 12), rng.uniform(4, 12)};
    for (int s = 0; s < 4; ++s) {
      Vec3 q{rng.uniform(3, 13), rng.uniform(3, 13), rng.uniform(3, 13)};
      for (double t = 0; t <= 1.0; t += 0.05) fill_ball(v, p + t * (q - p), 1.6);
      p = q;
    }
    auto skel = thin_volume(v);  // throws if occupancy is not one component
    // skeleton itself must stay one 26-connected component
    std::map<VoxelCoord, double> radii;
    for (const auto& c : skel) radii[c] = 1.0;
    CHECK_NOTHROW(skeleton_to_graph(skel, radii));
  }
}

TEST_CASE("radius of a solid ball center matches the ball radius") {
  auto v = make_grid(16, 16, 16);
  fill_ball(v, {7, 7, 7}, 5.0);
  std::set<VoxelCoord> skel{{7, 7, 7}};
  auto radii = estimate_radius(v, skel);
  CHECK(radii.at({7, 7, 7}) == doctest::Approx(5.0).epsilon(0.25));
}

TEST_CASE("radius along a 1-voxel line stays at most one spacing") {
  auto v = make_grid(12, 5, 5);
  std::set<VoxelCoord> skel;
  for (int x = 1; x <= 10; ++x) {
    v.data[v.index(x, 2, 2)] = 1;
    skel.insert({x, 2, 2});
  }
  auto radii = estimate_radius(v, skel);
  for (const auto& [c, r] : radii) {
    CHECK(r > 0.0);
    CHECK(r <= 1.0 + 1e-12);
  }
}

TEST_CASE("estimate_radius rejects skeleton voxels outside the occupancy") {
  auto v = make_grid(4, 4, 4);
  v.data[v.index(1, 1, 1)] = 1;
  std::set<VoxelCoord> skel{{2, 2, 2}};
  CHECK_THROWS_AS(estimate_radius(v, skel), PreprocessError);
}

TEST_CASE("distance transform matches brute force on a random 16^3 grid") {
  Rng rng(402);
  auto v = make_grid(16, 16, 16, {1.0, 1.25, 0.8});
  for (auto& b : v.data) b = rng.uniform() < 0.7 ? 1 : 0;
  v.data[0] = 0;  // guarantee background
  auto d2 = edt_sq(v);
  std::vector<std::array<int, 3>> bg;
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (!v.at(x, y, z)) bg.push_back({x, y, z});
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        double best = 1e30;
        for (const auto& b : bg) {
          double dx = (x - b[0]) * v.spacing[0];
          double dy = (y - b[1]) * v.spacing[1];
          double dz = (z - b[2]) * v.spacing[2];
          best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        CHECK(d2[v.index(x, y, z)] == doctest::Approx(best).epsilon(1e-9));
      }
}

TEST_CASE("skeleton_to_graph shapes") {
  SUBCASE("straight line is a path") {
    std::set<VoxelCoord> skel;
    std::map<VoxelCoord, double> radii;
    for (int x = 0; x < 10; ++x) {
      skel.insert({x, 0, 0});
      radii[{x, 0, 0}] = 1.0;
    }
    auto g = skeleton_to_graph(skel, radii);
    CHECK(g.nodes.size() == 10);
    CHECK(g.edges.size() == 9);
  }
  SUBCASE("L shape corner has degree 2") {
    std::set<VoxelCoord> skel;
    std::map<VoxelCoord, double> radii;
    for (int x = 0; x <= 4; ++x) skel.insert({x, 0, 0});
    for (int y = 1; y <= 4; ++y) skel.insert({4, y, 0});
    for (const auto& c : skel) radii[c] = 1.0;
    auto g = skeleton_to_graph(skel, radii);
    CHECK(g.nodes.size() == 9);
    CHECK(g.edges.size() == 8);
    for (const auto& [id, d] : degrees(g)) CHECK(d <= 2);
  }
  SUBCASE("plus sign has one degree-4 node") {
    std::set<VoxelCoord> skel;
    std::map<VoxelCoord, double> radii;
    for (int x = -3; x <= 3; ++x) skel.insert({x + 5, 5, 0});
    for (int y = -3; y <= 3; ++y) skel.insert({5, y + 5, 0});
    for (const auto& c : skel) radii[c] = 1.0;
    auto g = skeleton_to_graph(skel, radii);
    int deg4 = 0;
    for (const auto& [id, d] : degrees(g))
      if (d == 4) ++deg4;
    CHECK(deg4 == 1);
  }
  SUBCASE("physical coordinates honor spacing") {
    std::set<VoxelCoord> skel{{2, 3, 4}};
    std::map<VoxelCoord, double> radii{{{2, 3, 4}, 1.0}};
    auto g = skeleton_to_graph(skel, radii, {0.5, 1.0, 2.0});
    CHECK(g.nodes[0].pos[0] == doctest::Approx(1.25));
    CHECK(g.nodes[0].pos[1] == doctest::Approx(3.5));
    CHECK(g.nodes[0].pos[2] == doctest::Approx(9.0));
  }
  SUBCASE("disconnected skeleton is rejected with a component count") {
    std::set<VoxelCoord> skel{{0, 0, 0}, {5, 5, 5}};
    std::map<VoxelCoord, double> radii{{{0, 0, 0}, 1.0}, {{5, 5, 5}, 1.0}};
    try {
      skeleton_to_graph(skel, radii);
      FAIL("expected PreprocessError");
    } catch (const PreprocessError& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
  }
}

TEST_CASE("key graph of a path has two nodes and one chain") {
  auto g = path_graph(8);
  auto kg = extract_key_graph(g);
  CHECK(kg.graph.node_count() == 2);
  CHECK(kg.children[kg.graph.root].size() == 1);
  int child = kg.children[kg.graph.root][0];
  CHECK(kg.chains[child].size() == 8);
}

TEST_CASE("key graph of a Y shape has four nodes") {
  SkeletonGraph g;
  // trunk 0..4, then two arms
  for (int i = 0; i < 5; ++i) g.nodes.push_back({i, {0, 0, static_cast<double>(i)}, 2.0});
  for (int i = 0; i < 4; ++i) g.edges.emplace_back(i, i + 1);
  for (int i = 0; i < 3; ++i) g.nodes.push_back({5 + i, {static_cast<double>(i + 1), 0, 5.0 + i}, 1.0});
  g.edges.emplace_back(4, 5);
  g.edges.emplace_back(5, 6);
  g.edges.emplace_back(6, 7);
  for (int i = 0; i < 3; ++i) g.nodes.push_back({8 + i, {-static_cast<double>(i + 1), 0, 5.0 + i}, 1.0});
  g.edges.emplace_back(4, 8);
  g.edges.emplace_back(8, 9);
  g.edges.emplace_back(9, 10);
  auto kg = extract_key_graph(g);
  CHECK(kg.graph.node_count() == 4);
  // branch node 4 has degree 3, the others are leaves
  int chains = 0;
  for (const auto& ch : kg.chains)
    if (!ch.empty()) ++chains;
  CHECK(chains == 3);
}

TEST_CASE("key vertex count equals the degree census") {
  Rng rng(403);
  for (int rep = 0; rep < 10; ++rep) {
    // random tree over n nodes: connect i to a random earlier node
    int n = 40;
    SkeletonGraph g;
    std::vector<int> parent(n, -1);
    for (int i = 0; i < n; ++i) {
      g.nodes.push_back({i, {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)},
                         rng.uniform(0.5, 3.0)});
      if (i > 0) {
        parent[i] = rng.uniform_int(0, i - 1);
        g.edges.emplace_back(parent[i], i);
      }
    }
    auto deg = degrees(g);
    int expected = 0;
    for (const auto& [id, d] : deg)
      if (d != 2) ++expected;
    auto kg = extract_key_graph(g);
    CHECK(kg.graph.node_count() == expected);
  }
}

TEST_CASE("MST breaks cycles through the thinnest edge") {
  // square cycle with one thin node; the two edges at the thin node tie,
  // so exactly one of them is dropped and both neighbours stay key vertices
  SkeletonGraph g;
  g.nodes.push_back({0, {0, 0, 0}, 2.0});
  g.nodes.push_back({1, {1, 0, 0}, 2.0});
  g.nodes.push_back({2, {1, 1, 0}, 0.1});
  g.nodes.push_back({3, {0, 1, 0}, 2.0});
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  auto kg = extract_key_graph(g);
  // after dropping one thin edge the tree is a path: 2 key vertices
  CHECK(kg.graph.node_count() == 2);
}

namespace {

ExtractedKeyGraph star_tree(int fanout) {
  // trunk -> center -> `fanout` arms, each arm a 2-node chain
  SkeletonGraph g;
  g.nodes.push_back({0, {0, 0, -1}, 3.5});  // trunk end (root: largest radius)
  g.nodes.push_back({1, {0, 0, 0}, 3.0});   // center
  g.edges.emplace_back(0, 1);
  for (int i = 0; i < fanout; ++i) {
    double a = 2.0 * M_PI * i / fanout;
    g.nodes.push_back({2 + 2 * i, {std::cos(a), std::sin(a), 0.4}, 1.0 + 0.1 * i});
    g.nodes.push_back({3 + 2 * i, {2 * std::cos(a), 2 * std::sin(a), 0.8}, 1.0 + 0.1 * i});
    g.edges.emplace_back(1, 2 + 2 * i);
    g.edges.emplace_back(2 + 2 * i, 3 + 2 * i);
  }
  return extract_key_graph(g);
}

}  // namespace

TEST_CASE("binarization") {
  SUBCASE("binary tree passes through unchanged") {
    auto t = star_tree(2);
    auto b = binarize_bifurcations(t);
    CHECK(b.graph.node_count() == t.graph.node_count());
    CHECK(b.graph.leaf_count() == 2);
    CHECK(validate_key_graph(b.graph).empty());
  }
  SUBCASE("trifurcation becomes two co-located nodes") {
    auto t = star_tree(3);
    auto b = binarize_bifurcations(t);
    CHECK(b.graph.node_count() == t.graph.node_count() + 1);
    CHECK(b.graph.leaf_count() == 3);
    // the inserted node shares the branch position
    int center = b.graph.children[b.graph.root][0];
    int extra = b.graph.node_count() - 1;
    CHECK(norm(b.graph.nodes[extra].pos - b.graph.nodes[center].pos) == doctest::Approx(0.0));
    for (const auto& kids : b.graph.children) {
      int k = (kids[0] >= 0) + (kids[1] >= 0);
      CHECK(k <= 2);
    }
  }
  SUBCASE("4-ary tree keeps the leaf multiset") {
    auto t = star_tree(4);
    auto b = binarize_bifurcations(t);
    auto leaves_of = [](const KeyGraph& g) {
      std::vector<std::array<double, 3>> out;
      for (int i = 0; i < g.node_count(); ++i)
        if (g.children[i][0] < 0 && g.children[i][1] < 0) out.push_back(g.nodes[i].pos);
      std::sort(out.begin(), out.end());
      return out;
    };
    CHECK(leaves_of(t.graph) == leaves_of(b.graph));
    for (const auto& kids : b.graph.children) CHECK(((kids[0] >= 0) + (kids[1] >= 0)) <= 2);
  }
  SUBCASE("children ordered by descending subtree radius") {
    auto t = star_tree(3);
    auto b = binarize_bifurcations(t);
    int center = b.graph.children[b.graph.root][0];
    int left = b.graph.children[center][0];
    // thickest arm (radius 1.2) attaches first
    bool found = false;
    for (int i = 0; i < t.graph.node_count(); ++i)
      if (t.subtree_radius[i] == doctest::Approx(1.2) &&
          norm(t.graph.nodes[i].pos - b.graph.nodes[left].pos) < 1e-12)
        found = true;
    CHECK(found);
  }
}

TEST_CASE("resampling") {
  SUBCASE("unit spacing on a straight line") {
    VesselSegment s;
    for (int i = 0; i <= 4; ++i) s.points.push_back({{2.5 * i, 0, 0}, 1.0});
    auto r = resample_segment(s, 11);
    REQUIRE(r.size() == 11);
    for (int i = 0; i < 11; ++i) CHECK(r.points[i].pos[0] == doctest::Approx(i).epsilon(1e-12));
  }
  SUBCASE("n=2 keeps just the endpoints") {
    VesselSegment s;
    s.points = {{{0, 0, 0}, 1.0}, {{1, 2, 0}, 0.5}, {{3, 1, 4}, 0.25}};
    auto r = resample_segment(s, 2);
    REQUIRE(r.size() == 2);
    CHECK(norm(r.front().pos - s.front().pos) == 0.0);
    CHECK(norm(r.back().pos - s.back().pos) == 0.0);
    CHECK(r.front().radius == 1.0);
    CHECK(r.back().radius == 0.25);
  }
  SUBCASE("arc length preserved within 1% on a smooth curve") {
    VesselSegment dense;
    for (int i = 0; i <= 2000; ++i) {
      double t = M_PI * i / 2000.0;
      dense.points.push_back({{std::cos(t), std::sin(t), 0.3 * t}, 1.0});
    }
    auto r = resample_segment(dense, 100);
    CHECK(arc_length(r) == doctest::Approx(arc_length(dense)).epsilon(0.01));
  }
  SUBCASE("point count rule") {
    CHECK(resample_point_count(10.0, 1.0) == 11);
    CHECK(resample_point_count(10.0, 1.0, 8) == 8);
    CHECK(resample_point_count(0.05, 1.0) == 2);
  }
  SUBCASE("rejects bad point counts") {
    VesselSegment s;
    s.points = {{{0, 0, 0}, 1.0}, {{1, 0, 0}, 1.0}};
    CHECK_THROWS(resample_segment(s, 1));
  }
}

TEST_CASE("extract_segments on a path gives one full-length segment") {
  auto g = path_graph(11);
  auto sample = extract_segments(g);
  REQUIRE(sample.segments.size() == 1);
  CHECK(sample.key_graph.node_count() == 2);
  int child = sample.segments[0].child;
  CHECK(sample.key_graph.nodes[child].desc.ell == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(sample.key_graph.nodes[child].desc.delta == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(validate_key_graph(sample.key_graph).empty());
}

TEST_CASE("extract_segments on a Y shape anchors all segments at the branch") {
  SkeletonGraph g;
  for (int i = 0; i < 5; ++i) g.nodes.push_back({i, {0, 0, static_cast<double>(i)}, 2.0});
  for (int i = 0; i < 4; ++i) g.edges.emplace_back(i, i + 1);
  g.nodes.push_back({5, {1, 0, 5}, 1.0});
  g.nodes.push_back({6, {2, 0, 6}, 1.0});
  g.edges.emplace_back(4, 5);
  g.edges.emplace_back(5, 6);
  g.nodes.push_back({7, {-1, 0, 5}, 1.0});
  g.nodes.push_back({8, {-2, 0, 6}, 1.0});
  g.edges.emplace_back(4, 7);
  g.edges.emplace_back(7, 8);
  // root hint at the trunk end so the branch node is interior
  auto sample = extract_segments(g, 200, Vec3{0, 0, 0});
  CHECK(sample.segments.size() == 3);
  // reconstruct each segment's world start point from the stored transform
  std::map<int, Vec3> world_start;
  for (const auto& rec : sample.segments)
    world_start[rec.child] = rec.xform.apply_point(rec.canonical.front().pos);
  auto parent = sample.key_graph.parent_map();
  int anchored = 0;
  for (const auto& rec : sample.segments) {
    Vec3 start = world_start[rec.child];
    Vec3 parent_pos = sample.key_graph.nodes[rec.parent].pos;
    if (norm(start - parent_pos) < 1e-9) ++anchored;
  }
  CHECK(anchored == 3);
}

TEST_CASE("stored transforms reproduce the resampled world geometry") {
  Rng rng(404);
  for (int rep = 0; rep < 5; ++rep) {
    SkeletonGraph g;
    int n = 30;
    for (int i = 0; i < n; ++i) {
      Vec3 p{0.3 * i, std::sin(0.4 * i), std::cos(0.3 * i)};
      g.nodes.push_back({i, p + Vec3{rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01),
                                     rng.uniform(-0.01, 0.01)},
                         1.0});
      if (i > 0) g.edges.emplace_back(i - 1, i);
    }
    auto sample = extract_segments(g);
    REQUIRE(sample.segments.size() == 1);
    const auto& rec = sample.segments[0];
    // endpoints of the world-mapped canonical segment land on the key nodes
    Vec3 a = rec.xform.apply_point(rec.canonical.front().pos);
    Vec3 b = rec.xform.apply_point(rec.canonical.back().pos);
    CHECK(norm(a - sample.key_graph.nodes[rec.parent].pos) < 1e-9);
    CHECK(norm(b - sample.key_graph.nodes[rec.child].pos) < 1e-9);
    // delta consistency
    int child = rec.child;
    CHECK(sample.key_graph.nodes[child].desc.delta ==
          doctest::Approx(norm(b - a)).epsilon(1e-9));
  }
}

TEST_CASE("normalize_sample") {
  SkeletonGraph g = path_graph(11, 0.7, 1.0);
  auto sample = extract_segments(g);
  SUBCASE("root at origin, unit extent") {
    auto ns = normalize_sample(sample);
    CHECK(norm(ns.key_graph.nodes[ns.key_graph.root].pos) < 1e-12);
    double maxd = 0;
    for (const auto& n : ns.key_graph.nodes) maxd = std::max(maxd, norm(n.pos));
    CHECK(maxd == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("idempotent under uniform pre-scaling") {
    TrainingSample scaled = sample;
    for (auto& n : scaled.key_graph.nodes) {
      n.pos = 5.0 * n.pos;
      n.desc.ell *= 5.0;
      n.desc.delta *= 5.0;
      n.desc.kappa /= 5.0;
    }
    for (auto& rec : scaled.segments) {
      rec.xform.scale *= 5.0;
      rec.xform.translation = 5.0 * rec.xform.translation;
    }
    auto a = normalize_sample(sample);
    auto b = normalize_sample(scaled);
    for (int i = 0; i < a.key_graph.node_count(); ++i) {
      CHECK(norm(a.key_graph.nodes[i].pos - b.key_graph.nodes[i].pos) < 1e-9);
      CHECK(a.key_graph.nodes[i].desc.ell ==
            doctest::Approx(b.key_graph.nodes[i].desc.ell).epsilon(1e-9));
    }
  }
  SUBCASE("kappa-delta product is a normalization invariant") {
    Rng rng(405);
    SkeletonGraph wig;
    for (int i = 0; i < 25; ++i) {
      wig.nodes.push_back({i, {0.4 * i, 0.5 * std::sin(0.7 * i), 0.0}, 1.0});
      if (i > 0) wig.edges.emplace_back(i - 1, i);
    }
    auto s = extract_segments(wig);
    auto ns = normalize_sample(s);
    for (int i = 0; i < s.key_graph.node_count(); ++i) {
      double before = s.key_graph.nodes[i].desc.kappa * s.key_graph.nodes[i].desc.delta;
      double after = ns.key_graph.nodes[i].desc.kappa * ns.key_graph.nodes[i].desc.delta;
      CHECK(before == doctest::Approx(after).epsilon(1e-9));
    }
  }
  SUBCASE("degenerate graph rejected") {
    TrainingSample s;
    s.key_graph.nodes.push_back({});
    s.key_graph.children.push_back({-1, -1});
    CHECK_THROWS_AS(normalize_sample(s), PreprocessError);
  }
}

TEST_CASE("voxel raw format round trip") {
  Rng rng(406);
  auto v = make_grid(7, 5, 3, {0.5, 1.0, 2.0});
  for (auto& b : v.data) b = rng.uniform() < 0.5 ? 1 : 0;
  std::string path = "/tmp/test_voxels.raw";
  v.save_raw(path);
  auto w = VoxelGrid::load_raw(path);
  CHECK(w.dims == v.dims);
  CHECK(w.spacing[0] == doctest::Approx(0.5));
  CHECK(w.spacing[1] == doctest::Approx(1.0));
  CHECK(w.spacing[2] == doctest::Approx(2.0));
  CHECK(w.data == v.data);
  std::remove(path.c_str());
}

TEST_CASE("training sample JSON round trip") {
  SkeletonGraph g = path_graph(9, 0.9, 1.2);
  auto sample = normalize_sample(extract_segments(g));
  auto text = sample.to_json();
  auto back = TrainingSample::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.segments.size() == sample.segments.size());
  CHECK(back.normalization.scale == sample.normalization.scale);
}

TEST_CASE("full volume pipeline is deterministic") {
  auto v = make_grid(20, 14, 14);
  // a bent tube
  for (double t = 0; t <= 1.0; t += 0.02) {
    Vec3 p{3.0 + 14.0 * t, 7.0 + 3.0 * std::sin(3.0 * t), 7.0};
    fill_ball(v, p, 2.2);
  }
  auto a = preprocess_volume(v);
  auto b = preprocess_volume(v);
  CHECK(a.to_json() == b.to_json());
  CHECK(!a.segments.empty());
  CHECK(validate_key_graph(a.key_graph).empty());
}
