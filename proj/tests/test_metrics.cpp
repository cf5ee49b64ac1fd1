#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "vessel/metrics.hpp"

using namespace vessel;

namespace {

TriangleMesh two_triangle_mesh(double big, double small) {
  // right triangles in the z=0 plane with legs (big,big) and (small,small)
  TriangleMesh m;
  m.vertices = {{0, 0, 0},  {big, 0, 0},  {0, big, 0},
                {10, 0, 0}, {10 + small, 0, 0}, {10, small, 0}};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  return m;
}

SkeletonGraph path_graph(int n, double step = 1.0) {
  SkeletonGraph g;
  for (int i = 0; i < n; ++i) g.nodes.push_back({i, {i * step, 0, 0}, 0.5});
  for (int i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1});
  return g;
}

SkeletonGraph star_graph(int arms) {
  SkeletonGraph g;
  g.nodes.push_back({0, {0, 0, 0}, 0.5});
  for (int i = 1; i <= arms; ++i) {
    double a = 2.0 * M_PI * i / arms;
    g.nodes.push_back({i, {std::cos(a), std::sin(a), 0}, 0.5});
    g.edges.push_back({0, i});
  }
  return g;
}

SkeletonGraph random_tree(int n, unsigned seed) {
  Rng rng(seed);
  SkeletonGraph g;
  g.nodes.push_back({0, {0, 0, 0}, 0.5});
  for (int i = 1; i < n; ++i) {
    g.nodes.push_back({i, {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}, 0.5});
    g.edges.push_back({rng.uniform_int(0, i - 1), i});
  }
  return g;
}

// dense normalized Laplacian as an Eigen matrix
Eigen::MatrixXd normalized_laplacian(const SkeletonGraph& g) {
  int n = static_cast<int>(g.nodes.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(n);
  for (const auto& [a, b] : g.edges) {
    A(a, b) = A(b, a) = 1.0;
    deg[a] += 1.0;
    deg[b] += 1.0;
  }
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) L(i, i) = deg[i] > 0 ? 1.0 : 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (A(i, j) > 0) L(i, j) -= 1.0 / std::sqrt(deg[i] * deg[j]);
  return L;
}

}  // namespace

TEST_CASE("mesh sampling is area-weighted, inside, and seeded") {
  TriangleMesh one;
  one.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 3, 0}};
  one.triangles = {{0, 1, 2}};
  Rng rng(5);
  PointCloud pc = sample_points_from_mesh(one, 200, rng);
  REQUIRE(pc.points.size() == 200);
  for (const Vec3& p : pc.points) {
    CHECK(p[2] == doctest::Approx(0.0));
    double u = p[0] / 2.0, v = p[1] / 3.0;  // barycentric for this triangle
    CHECK(u >= -1e-12);
    CHECK(v >= -1e-12);
    CHECK(u + v <= 1.0 + 1e-12);
  }

  // 9:1 area ratio (legs 3 vs 1 -> areas 4.5 vs 0.5)
  TriangleMesh two = two_triangle_mesh(3.0, 1.0);
  Rng rng2(6);
  PointCloud pc2 = sample_points_from_mesh(two, 10000, rng2);
  int in_big = 0;
  for (const Vec3& p : pc2.points)
    if (p[0] < 5.0) ++in_big;
  double expect = 9000.0, sigma = std::sqrt(10000.0 * 0.9 * 0.1);
  CHECK(std::abs(in_big - expect) < 3.0 * sigma);

  Rng ra(7), rb(7);
  PointCloud s1 = sample_points_from_mesh(two, 50, ra);
  PointCloud s2 = sample_points_from_mesh(two, 50, rb);
  for (std::size_t i = 0; i < s1.points.size(); ++i)
    CHECK(norm(s1.points[i] - s2.points[i]) == 0.0);

  TriangleMesh degenerate;
  degenerate.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  degenerate.triangles = {{0, 1, 2}};
  CHECK_THROWS_AS(sample_points_from_mesh(degenerate, 10, rng), MetricsError);
}

TEST_CASE("chamfer matches hand values and a brute-force oracle") {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  b.points = {{1, 0, 0}};
  CHECK(chamfer(a, a) == 0.0);
  CHECK(chamfer(a, b) == doctest::Approx(2.0));
  CHECK(chamfer(a, b) == chamfer(b, a));

  Rng rng(9);
  PointCloud x, y;
  for (int i = 0; i < 5; ++i) {
    x.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    y.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  double oracle = 0.0;
  for (const Vec3& p : x.points) {
    double best = 1e300;
    for (const Vec3& q : y.points) best = std::min(best, dot(p - q, p - q));
    oracle += best / 5.0;
  }
  for (const Vec3& q : y.points) {
    double best = 1e300;
    for (const Vec3& p : x.points) best = std::min(best, dot(p - q, p - q));
    oracle += best / 5.0;
  }
  CHECK(chamfer(x, y) == doctest::Approx(oracle).epsilon(1e-12));

  PointCloud empty;
  CHECK_THROWS_AS(chamfer(empty, a), MetricsError);
}

TEST_CASE("jsd matches closed forms") {
  PointCloud corner_a, corner_b;
  corner_a.points = {{-0.4, -0.4, -0.4}, {-0.4, -0.4, -0.4}};
  corner_b.points = {{0.4, 0.4, 0.4}, {0.4, 0.4, 0.4}};

  CHECK(jsd({corner_a}, {corner_a}) == doctest::Approx(0.0));
  CHECK(jsd({corner_a}, {corner_b}) == doctest::Approx(std::log(2.0)));

  // P = (1, 0) vs Q = (1/2, 1/2) over two occupied cells
  PointCloud q;
  q.points = {{-0.4, -0.4, -0.4}, {0.4, 0.4, 0.4}};
  double expected = 0.5 * (std::log(4.0 / 3.0)) +
                    0.5 * (0.5 * std::log(2.0 / 3.0) + 0.5 * std::log(2.0));
  CHECK(jsd({corner_a}, {q}) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.2157).epsilon(1e-3));
  CHECK(jsd({corner_a}, {q}) <= std::log(2.0));

  // clamped-point accounting
  PointCloud outside;
  outside.points = {{0.9, 0, 0}};
  long clamped = 0;
  jsd({outside}, {corner_a}, 28, &clamped);
  CHECK(clamped == 1);

  CHECK_THROWS_AS(jsd({}, {corner_a}), MetricsError);
}

TEST_CASE("degree_mmd matches a hand kernel-sum oracle") {
  std::vector<SkeletonGraph> p4 = {path_graph(4)};
  std::vector<SkeletonGraph> s4 = {star_graph(3)};  // 4 nodes, center degree 3

  CHECK(degree_mmd(p4, p4) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(degree_mmd(p4, s4) == degree_mmd(s4, p4));

  // histograms over degrees 0..3: P4 = (0, .5, .5, 0), S4 = (0, .75, 0, .25)
  // W1 = |0| + |.25 - .5| ... via cumulative sums = 0.5
  double w = 0.5;
  double expected = 2.0 - 2.0 * std::exp(-w * w / 2.0);
  CHECK(degree_mmd(p4, s4) == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(degree_mmd({}, p4), MetricsError);
}

TEST_CASE("laplacian_spectrum matches closed forms and a dense oracle") {
  std::vector<double> k2 = laplacian_spectrum(path_graph(2));
  REQUIRE(k2.size() == 2);
  CHECK(k2[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(k2[1] == doctest::Approx(2.0).epsilon(1e-12));

  std::vector<double> p3 = laplacian_spectrum(path_graph(3));
  REQUIRE(p3.size() == 3);
  CHECK(p3[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(p3[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p3[2] == doctest::Approx(2.0).epsilon(1e-9));

  for (unsigned seed : {1u, 2u, 3u, 4u, 5u}) {
    SkeletonGraph g = random_tree(10 + (int)seed, seed);
    std::vector<double> spec = laplacian_spectrum(g);
    double trace = 0.0;
    for (double v : spec) {
      trace += v;
      CHECK(v >= -1e-9);
      CHECK(v <= 2.0 + 1e-9);
    }
    CHECK(trace == doctest::Approx((double)g.nodes.size()).epsilon(1e-9));

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normalized_laplacian(g),
                                                      Eigen::EigenvaluesOnly);
    Eigen::VectorXd ref = es.eigenvalues();
    REQUIRE((int)spec.size() == ref.size());
    for (int i = 0; i < ref.size(); ++i)
      CHECK(spec[i] == doctest::Approx(std::clamp(ref[i], 0.0, 2.0)).epsilon(1e-9));
  }
}

TEST_CASE("spectral_mmd is zero on identical sets and symmetric") {
  std::vector<SkeletonGraph> a = {path_graph(5), star_graph(4)};
  std::vector<SkeletonGraph> b = {random_tree(8, 3), path_graph(3)};
  CHECK(spectral_mmd(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(spectral_mmd(a, b) == spectral_mmd(b, a));
  CHECK(spectral_mmd(a, b) > 0.0);
}

TEST_CASE("hungarian_exact_ot matches brute force") {
  CHECK(hungarian_exact_ot({{0, 1}, {1, 0}}) == doctest::Approx(0.0));
  // diagonal is the optimal matching here
  std::vector<std::vector<double>> diag = {{0.1, 5, 5}, {5, 0.2, 5}, {5, 5, 0.3}};
  CHECK(hungarian_exact_ot(diag) == doctest::Approx(0.6 / 3.0));

  Rng rng(11);
  std::vector<std::vector<double>> c(6, std::vector<double>(6));
  for (auto& row : c)
    for (double& v : row) v = rng.uniform(0, 10);
  std::vector<int> perm = {0, 1, 2, 3, 4, 5};
  double best = 1e300;
  do {
    double s = 0.0;
    for (int i = 0; i < 6; ++i) s += c[i][perm[i]];
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(hungarian_exact_ot(c) == doctest::Approx(best / 6.0).epsilon(1e-12));

  CHECK_THROWS_AS(hungarian_exact_ot({{0, 1}}), MetricsError);
}

TEST_CASE("sinkhorn divergence approaches the exact OT value") {
  Rng rng(13);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    b.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  std::vector<std::vector<double>> cost(4, std::vector<double>(4));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cost[i][j] = norm(a[i] - b[j]);
  double exact = hungarian_exact_ot(cost);
  double s = sinkhorn_divergence(a, b, 0.001, 2000);
  CHECK(std::abs(s - exact) < 0.05 * exact);

  CHECK(sinkhorn_divergence(a, a, 0.01) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sinkhorn_divergence(a, b, 0.01) == sinkhorn_divergence(b, a, 0.01));
}

TEST_CASE("sinkhorn divergence decreases toward exact OT as eps shrinks") {
  Rng rng(17);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    b.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  std::vector<std::vector<double>> cost(10, std::vector<double>(10));
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) cost[i][j] = norm(a[i] - b[j]);
  double exact = hungarian_exact_ot(cost);
  double s1 = sinkhorn_divergence(a, b, 0.1, 2000);
  double s2 = sinkhorn_divergence(a, b, 0.01, 2000);
  double s3 = sinkhorn_divergence(a, b, 0.001, 2000);
  CHECK(std::abs(s1 - exact) >= std::abs(s2 - exact) - 1e-9);
  CHECK(std::abs(s2 - exact) >= std::abs(s3 - exact) - 1e-9);
  CHECK(std::abs(s3 - exact) < 0.05 * exact + 1e-6);
}

TEST_CASE("gwd is zero on identical graphs and symmetric") {
  SkeletonGraph a = random_tree(8, 21);
  SkeletonGraph b = random_tree(8, 22);
  CHECK(gwd(a, a) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(gwd(a, b) == gwd(b, a));
  CHECK(gwd(a, b) > 0.0);

  SkeletonGraph disconnected = a;
  disconnected.edges.pop_back();
  CHECK_THROWS_AS(gwd(disconnected, b), MetricsError);
}

TEST_CASE("evaluate_sets is zero on self-comparison and reports config") {
  std::vector<EvalItem> items;
  for (int i = 0; i < 2; ++i) {
    SkeletonGraph g = path_graph(3 + i, 1.0);
    for (auto& n : g.nodes) n.radius = 0.35;
    items.push_back({g, skeleton_to_mesh(g, 0.1)});
  }
  EvalConfig cfg;
  cfg.points_per_mesh = 256;
  cfg.paired = true;
  cfg.gwd_samples = 40;
  MetricsReport r = evaluate_sets(items, items, cfg);
  CHECK(r.jsd == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.cd == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.deg_mmd == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.spec_mmd == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.gwd == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r.n_generated == 2);

  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["config"]["points_per_mesh"] == 256);
  CHECK(j["jsd_x1e3"] == doctest::Approx(r.jsd * 1e3));
  CHECK(r.to_table().find("JSD (x1e3)") != std::string::npos);

  // unpaired mode separates distinct sets
  std::vector<EvalItem> other;
  SkeletonGraph g = star_graph(3);
  for (auto& n : g.nodes) n.radius = 0.3;
  other.push_back({g, skeleton_to_mesh(g, 0.1)});
  EvalConfig un = cfg;
  un.paired = false;
  MetricsReport r2 = evaluate_sets(items, other, un);
  CHECK(r2.cd > 0.0);
  CHECK(r2.deg_mmd > 0.0);
  CHECK(r2.gwd > 0.0);

  CHECK_THROWS_AS(evaluate_sets({}, items, cfg), MetricsError);
  EvalConfig paired = cfg;
  CHECK_THROWS_AS(evaluate_sets(items, other, paired), MetricsError);
}
