#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "vessel/core.hpp"
#include "vessel/rng.hpp"

using namespace vessel;

static VesselSegment make_seg(std::initializer_list<Vec3> pts, double radius = 1.0) {
  VesselSegment s;
  for (const auto& p : pts) s.points.push_back({p, radius});
  return s;
}

TEST_CASE("arc_length on collinear unit steps") {
  auto s = make_seg({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  CHECK(arc_length(s) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("arc_length 3-4-5") {
  auto s = make_seg({{0, 0, 0}, {3, 4, 0}});
  CHECK(arc_length(s) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("arc_length matches brute-force distance sum on random polyline") {
  Rng rng(42);
  VesselSegment s;
  for (int i = 0; i < 10; ++i)
    s.points.push_back({{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}, 1.0});
  double expect = 0.0;
  for (int i = 1; i < 10; ++i) {
    Vec3 d = s.points[i].pos - s.points[i - 1].pos;
    expect += std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  }
  CHECK(arc_length(s) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("arc_length rejects degenerate segment") {
  VesselSegment s;
  s.points.push_back({{0, 0, 0}, 1.0});
  CHECK_THROWS_AS(arc_length(s), InvalidSegmentError);
}

TEST_CASE("chord_length basics") {
  CHECK(chord_length(make_seg({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}})) == doctest::Approx(2.0));
  CHECK(chord_length(make_seg({{1, 2, 3}, {5, 5, 5}, {1, 2, 3}})) == doctest::Approx(0.0));
}

TEST_CASE("chord_length of sampled semicircle is the diameter") {
  VesselSegment s;
  for (int i = 0; i < 50; ++i) {
    double t = M_PI * i / 49.0;
    s.points.push_back({{std::cos(t), std::sin(t), 0.0}, 1.0});
  }
  CHECK(chord_length(s) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("mean_curvature of straight line is zero") {
  auto s = make_seg({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}});
  CHECK(mean_curvature(s) == doctest::Approx(0.0));
}

TEST_CASE("mean_curvature single right-angle turn") {
  auto s = make_seg({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}});
  CHECK(mean_curvature(s) == doctest::Approx(M_PI / 2.0 / 2.0).epsilon(1e-12));
}

TEST_CASE("mean_curvature of dense semicircle approximates 1/r") {
  for (double r : {0.5, 1.0, 3.0}) {
    VesselSegment s;
    for (int i = 0; i < 200; ++i) {
      double t = M_PI * i / 199.0;
      s.points.push_back({{r * std::cos(t), r * std::sin(t), 0.0}, 1.0});
    }
    CHECK(mean_curvature(s) == doctest::Approx(1.0 / r).epsilon(0.02));
  }
}

TEST_CASE("mean_curvature rejects zero-length steps") {
  auto s = make_seg({{0, 0, 0}, {0, 0, 0}, {1, 0, 0}});
  CHECK_THROWS_AS(mean_curvature(s), InvalidSegmentError);
}

TEST_CASE("compute_descriptor straight segment") {
  auto d = compute_descriptor(make_seg({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}), 3);
  CHECK(d.ell == doctest::Approx(2.0));
  CHECK(d.delta == doctest::Approx(2.0));
  CHECK(d.kappa == doctest::Approx(0.0));
  CHECK(d.rho == 3);
}

TEST_CASE("compute_descriptor right-angle segment at depth 0") {
  auto d = compute_descriptor(make_seg({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}}), 0);
  CHECK(d.ell == doctest::Approx(2.0));
  CHECK(d.delta == doctest::Approx(std::sqrt(2.0)));
  CHECK(d.kappa == doctest::Approx(M_PI / 4.0));
  CHECK(d.rho == 0);
}

TEST_CASE("descriptor invariant delta <= ell on random segments") {
  Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    VesselSegment s;
    int n = rng.uniform_int(2, 12);
    for (int i = 0; i < n; ++i)
      s.points.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}, 0.3});
    auto d = compute_descriptor(s, 0);
    CHECK(d.delta <= d.ell + 1e-12);
    CHECK(d.kappa >= 0.0);
  }
}

TEST_CASE("normalize_segment canonical postconditions and round trip") {
  Rng rng(11);
  for (int k = 0; k < 1000; ++k) {
    VesselSegment s;
    int n = rng.uniform_int(3, 16);
    for (int i = 0; i < n; ++i)
      s.points.push_back({{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)},
                          rng.uniform(0.05, 0.8)});
    if (chord_length(s) < 1e-3) continue;
    auto [canon, xform] = normalize_segment(s);
    // canonical anchors
    CHECK(norm(canon.front().pos) < 1e-12);
    CHECK(norm(canon.back().pos - Vec3{1, 0, 0}) < 1e-12);
    // max-deviation point in the z >= 0 half of the xz-plane
    auto dev = max_deviation_dir(canon);
    if (dev) {
      CHECK(std::abs((*dev)[1]) < 1e-9);
      CHECK((*dev)[2] >= 0.0);
    }
    // exact round trip
    VesselSegment back = xform.apply(canon);
    double max_err = 0.0;
    for (int i = 0; i < s.size(); ++i) {
      max_err = std::max(max_err, norm(back.points[i].pos - s.points[i].pos));
      max_err = std::max(max_err, std::abs(back.points[i].radius - s.points[i].radius));
    }
    CHECK(max_err < 1e-9);
  }
}

TEST_CASE("normalize_segment of already-canonical segment is identity") {
  auto s = make_seg({{0, 0, 0}, {0.5, 0, 0.2}, {1, 0, 0}}, 0.1);
  auto [canon, xform] = normalize_segment(s);
  CHECK(norm(xform.translation) < 1e-12);
  CHECK(xform.scale == doctest::Approx(1.0));
  for (int i = 0; i < 9; ++i)
    CHECK(xform.rotation[i] == doctest::Approx(mat3_identity()[i]).epsilon(1e-9));
}

TEST_CASE("normalize_segment straight +y segment") {
  auto s = make_seg({{0, 0, 0}, {0, 1, 0}, {0, 2, 0}}, 0.5);
  auto [canon, xform] = normalize_segment(s);
  CHECK(xform.scale == doctest::Approx(2.0));
  CHECK(norm(canon.points[1].pos - Vec3{0.5, 0, 0}) < 1e-12);
  CHECK(canon.points[1].radius == doctest::Approx(0.25));
  // rotation maps +x to +y
  Vec3 mapped = mat3_apply(xform.rotation, {1, 0, 0});
  CHECK(norm(mapped - Vec3{0, 1, 0}) < 1e-12);
}

TEST_CASE("normalize_segment rejects zero chord") {
  auto s = make_seg({{0, 0, 0}, {1, 0, 0}, {0, 0, 0}});
  CHECK_THROWS_AS(normalize_segment(s), DegenerateChordError);
}

TEST_CASE("rigid similarity composition preserves orthonormality") {
  Rng rng(3);
  Mat3 r = mat3_identity();
  for (int k = 0; k < 100; ++k) {
    Vec3 axis = normalized({rng.normal(), rng.normal(), rng.normal()});
    r = mat3_mul(rotation_about_axis(axis, rng.uniform(0, 2 * M_PI)), r);
  }
  Mat3 should_be_i = mat3_mul(mat3_transpose(r), r);
  Mat3 eye = mat3_identity();
  for (int i = 0; i < 9; ++i) CHECK(std::abs(should_be_i[i] - eye[i]) < 1e-9);
  CHECK(mat3_det(r) == doctest::Approx(1.0).epsilon(1e-9));
}

static KeyGraph single_node_graph() {
  KeyGraph g;
  g.nodes.push_back(KeyNode{});
  g.children.push_back({-1, -1});
  g.root = 0;
  return g;
}

TEST_CASE("validate_key_graph accepts single root") {
  CHECK(validate_key_graph(single_node_graph()).empty());
}

TEST_CASE("validate_key_graph rejects two parents") {
  KeyGraph g;
  g.nodes.resize(3);
  g.children = {{1, 2}, {2, -1}, {-1, -1}};
  g.root = 0;
  g.nodes[1].dir = {1, 0, 0};
  g.nodes[2].dir = {1, 0, 0};
  auto report = validate_key_graph(g);
  bool found = false;
  for (const auto& line : report)
    if (line.find("not a tree") != std::string::npos) found = true;
  CHECK(found);
}

TEST_CASE("validate_key_graph flags delta inconsistency") {
  KeyGraph g;
  g.nodes.resize(2);
  g.children = {{1, -1}, {-1, -1}};
  g.root = 0;
  g.nodes[1].pos = {1, 0, 0};
  g.nodes[1].dir = {1, 0, 0};
  g.nodes[1].desc = {5.0, 5.0, 0.0, 1};  // delta should be 1
  auto report = validate_key_graph(g);
  CHECK(!report.empty());
}

TEST_CASE("skeleton JSON round trip") {
  SkeletonGraph g;
  g.nodes = {{0, {0.1, 0.2, 0.3}, 1.5}, {1, {1.0 / 3.0, -2.5, 1e-7}, 0.25}};
  g.edges = {{0, 1}};
  auto g2 = skeleton_from_json(skeleton_to_json(g));
  REQUIRE(g2.nodes.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(g2.nodes[i].id == g.nodes[i].id);
    CHECK(norm(g2.nodes[i].pos - g.nodes[i].pos) == doctest::Approx(0.0));
    CHECK(g2.nodes[i].radius == g.nodes[i].radius);
  }
  CHECK(g2.edges == g.edges);
}

TEST_CASE("key graph JSON round trip") {
  KeyGraph g;
  g.nodes.resize(3);
  g.children = {{1, 2}, {-1, -1}, {-1, -1}};
  g.root = 0;
  g.nodes[1] = {{1, 0, 0}, {1, 0, 0}, {1.2, 1.0, 0.3, 1}};
  g.nodes[2] = {{0, 1, 0}, {0, 1, 0}, {1.4, 1.0, 0.9, 1}};
  auto g2 = key_graph_from_json(key_graph_to_json(g));
  CHECK(g2.root == 0);
  CHECK(g2.children == g.children);
  CHECK(g2.nodes[2].desc.kappa == g.nodes[2].desc.kappa);
  CHECK(validate_key_graph(g2).empty());
}
