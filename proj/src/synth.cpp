#include "vessel/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace vessel {

void SynthConfig::validate() const {
  if (depth_min < 1 || depth_max < depth_min) throw SynthError("bad depth range");
  if (bifurcation_prob < 0.0 || bifurcation_prob > 1.0)
    throw SynthError("bifurcation probability outside [0,1]");
  if (points_min < 2 || points_max < points_min) throw SynthError("bad points range");
  if (curvature_min < 0.0 || curvature_max < curvature_min)
    throw SynthError("bad curvature range");
  if (angle_min_deg < 0.0 || angle_max_deg < angle_min_deg) throw SynthError("bad angle range");
  if (root_radius <= 0.0) throw SynthError("root radius must be positive");
  if (gamma <= 0.0) throw SynthError("gamma must be positive");
}

namespace {

Vec3 bezier(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  double u = 1.0 - t;
  return (u * u * u) * p0 + (3 * u * u * t) * p1 + (3 * u * t * t) * p2 + (t * t * t) * p3;
}

struct Grower {
  const SynthConfig& cfg;
  Rng& rng;
  SkeletonGraph g;
  int target_depth;

  int add_node(const Vec3& pos, double radius) {
    int id = static_cast<int>(g.nodes.size());
    g.nodes.push_back({id, pos, radius});
    return id;
  }

  // grows one branch from the node `from`, returns the end node id
  int grow_branch(int from, Vec3 dir, double radius, int depth) {
    Vec3 start = g.nodes[from].pos;
    double length = radius * rng.uniform(5.0, 8.0);
    Vec3 end = start + length * dir;
    // bend the branch by offsetting the control points off-axis
    Vec3 side = normalized(cross(dir, any_orthogonal(dir)));
    double roll = rng.uniform(0.0, 2.0 * M_PI);
    side = mat3_apply(rotation_about_axis(dir, roll), side);
    double amp = rng.uniform(cfg.curvature_min, cfg.curvature_max) * length;
    Vec3 c1 = start + (length / 3.0) * dir + amp * side;
    Vec3 c2 = start + (2.0 * length / 3.0) * dir + amp * side;

    int n = rng.uniform_int(cfg.points_min, cfg.points_max);
    int prev = from;
    for (int i = 1; i < n; ++i) {
      double t = static_cast<double>(i) / (n - 1);
      int id = add_node(bezier(start, c1, c2, end, t), radius);
      g.edges.emplace_back(prev, id);
      prev = id;
    }

    if (depth >= target_depth) return prev;
    int before = (n == 2) ? from : prev - 1;
    Vec3 out_dir = normalized(g.nodes[prev].pos - g.nodes[before].pos);
    double child_radius = radius * std::pow(2.0, -1.0 / cfg.gamma);
    if (rng.uniform() < cfg.bifurcation_prob) {
      double sep = rng.uniform(cfg.angle_min_deg, cfg.angle_max_deg) * M_PI / 180.0;
      Vec3 axis = normalized(cross(out_dir, any_orthogonal(out_dir)));
      double spin = rng.uniform(0.0, 2.0 * M_PI);
      axis = mat3_apply(rotation_about_axis(out_dir, spin), axis);
      Vec3 d1 = mat3_apply(rotation_about_axis(axis, 0.5 * sep), out_dir);
      Vec3 d2 = mat3_apply(rotation_about_axis(axis, -0.5 * sep), out_dir);
      grow_branch(prev, d1, child_radius, depth + 1);
      grow_branch(prev, d2, child_radius, depth + 1);
    } else {
      // single continuation with a mild tilt
      double tilt = rng.uniform(0.0, 0.3);
      Vec3 axis = normalized(cross(out_dir, any_orthogonal(out_dir)));
      grow_branch(prev, mat3_apply(rotation_about_axis(axis, tilt), out_dir), child_radius,
                  depth + 1);
    }
    return prev;
  }
};

}  // namespace

SkeletonGraph generate_tree(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  Grower grower{cfg, rng, {}, 0};
  grower.target_depth = rng.uniform_int(cfg.depth_min, cfg.depth_max);
  double theta = rng.uniform(0.0, 0.4);
  double phi = rng.uniform(0.0, 2.0 * M_PI);
  Vec3 dir{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
  int root = grower.add_node({0, 0, 0}, cfg.root_radius);
  grower.grow_branch(root, dir, cfg.root_radius, 0);
  auto problems = grower.g.validate();
  if (!problems.empty()) throw SynthError("generated tree invalid: " + problems.front());
  return grower.g;
}

DatasetPaths generate_dataset(const std::string& out_dir, int n, const SynthConfig& cfg) {
  if (n < 1) throw SynthError("dataset size must be at least 1");
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "train", ec);
  fs::create_directories(fs::path(out_dir) / "test", ec);
  if (ec) throw SynthError("cannot create dataset directory " + out_dir);

  int n_test = n / 10;
  int n_train = n - n_test;
  DatasetPaths paths;
  for (int i = 0; i < n; ++i) {
    Rng rng(cfg.seed + static_cast<std::uint64_t>(i));
    SkeletonGraph tree = generate_tree(cfg, rng);
    TrainingSample sample = normalize_sample(extract_segments(tree, 200, Vec3{0, 0, 0}));
    bool is_test = i >= n_train;
    int local = is_test ? i - n_train : i;
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.json", local);
    fs::path p = fs::path(out_dir) / (is_test ? "test" : "train") / name;
    std::ofstream f(p);
    if (!f) throw SynthError("cannot write " + p.string());
    f << sample.to_json() << "\n";
    (is_test ? paths.test : paths.train).push_back(p.string());
  }
  return paths;
}

std::vector<TrainingSample> load_dataset(const std::vector<std::string>& paths) {
  std::vector<TrainingSample> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    std::ifstream f(p);
    if (!f) throw SynthError("cannot read " + p);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    out.push_back(TrainingSample::from_json(text));
  }
  return out;
}

}  // namespace vessel
