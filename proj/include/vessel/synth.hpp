#pragma once

#include <string>
#include <vector>

#include "vessel/preprocess.hpp"
#include "vessel/rng.hpp"

namespace vessel {

struct SynthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bezier-branch vascular tree generator. Not physiological; its job is to
// exercise the pipeline with controllable geometry statistics.
struct SynthConfig {
  int depth_min = 2;
  int depth_max = 4;
  double bifurcation_prob = 0.8;  // chance a non-terminal branch end splits
  int points_min = 8;
  int points_max = 24;
  double curvature_min = 0.0;  // control-point offset as a fraction of length
  double curvature_max = 0.35;
  double angle_min_deg = 30.0;  // separation between sibling branches
  double angle_max_deg = 90.0;
  double root_radius = 1.0;
  double gamma = 3.0;  // child radius = parent * 2^(-1/gamma)
  std::uint64_t seed = 0;

  void validate() const;
};

SkeletonGraph generate_tree(const SynthConfig& cfg, Rng& rng);

struct DatasetPaths {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// n trees with per-tree seeds cfg.seed + i, preprocessed and normalized,
// written as JSON under out_dir/{train,test}/sample_%05d.json (90/10 split).
DatasetPaths generate_dataset(const std::string& out_dir, int n, const SynthConfig& cfg);

std::vector<TrainingSample> load_dataset(const std::vector<std::string>& paths);

}  // namespace vessel
