#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vessel/core.hpp"
#include "vessel/rng.hpp"
#include "vessel/stage3.hpp"

namespace vessel {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PointCloud {
  std::vector<Vec3> points;
};

// Area-weighted triangle choice, uniform barycentric placement.
PointCloud sample_points_from_mesh(const TriangleMesh& m, int n, Rng& rng);

// Squared-distance Chamfer: mean over a of min squared distance to b, plus
// the symmetric term.
double chamfer(const PointCloud& a, const PointCloud& b);

// Jensen-Shannon divergence between pooled occupancy histograms on a
// grid_res^3 voxelization of [-0.5, 0.5]^3 (natural log, range [0, ln 2]).
// Out-of-range points are clamped; their count is added to *clamped.
double jsd(const std::vector<PointCloud>& set_a, const std::vector<PointCloud>& set_b,
           int grid_res = 28, long* clamped = nullptr);

// Biased MMD^2 with Gaussian-EMD kernel (sigma = 1) over per-graph normalized
// degree histograms.
double degree_mmd(const std::vector<SkeletonGraph>& a, const std::vector<SkeletonGraph>& b);

// Same estimator over symmetric-normalized-Laplacian spectra histogrammed
// into 200 bins on [0, 2].
double spectral_mmd(const std::vector<SkeletonGraph>& a, const std::vector<SkeletonGraph>& b);

// Householder tridiagonalization + QL iteration; ascending eigenvalues of the
// symmetric normalized Laplacian, all within 1e-9 of [0, 2].
std::vector<double> laplacian_spectrum(const SkeletonGraph& g);

// Debiased Sinkhorn divergence S(a,b) = OT_eps(a,b) - (OT_eps(a,a) +
// OT_eps(b,b)) / 2 with Euclidean cost and uniform marginals; clamped to 0.
double sinkhorn_divergence(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double eps,
                           int max_iters = 500, double tol = 1e-9);

// Graph Wasserstein distance: n_samples arc-length-stratified points per
// skeleton, each cloud centered and RMS-normalized, then Sinkhorn divergence.
double gwd(const SkeletonGraph& g_a, const SkeletonGraph& g_b, int n_samples = 100,
           double eps = 0.01);

// Uniform-marginal exact OT between equal-size sets: minimal-cost perfect
// matching total divided by n.
double hungarian_exact_ot(const std::vector<std::vector<double>>& cost);

struct EvalItem {
  SkeletonGraph skeleton;
  TriangleMesh mesh;
};

struct EvalConfig {
  int points_per_mesh = 2048;
  int jsd_grid = 28;
  bool paired = false;  // matched indices (reconstruction mode)
  int gwd_max_pairs = 64;
  int gwd_samples = 100;
  double gwd_eps = 0.01;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  double jsd = 0.0, cd = 0.0, deg_mmd = 0.0, spec_mmd = 0.0, gwd = 0.0;
  long clamped_points = 0;
  int n_generated = 0, n_reference = 0;
  EvalConfig config;

  std::string to_json() const;
  std::string to_table() const;  // JSD and CD displayed x10^3
};

MetricsReport evaluate_sets(const std::vector<EvalItem>& generated,
                            const std::vector<EvalItem>& reference, const EvalConfig& cfg = {});

}  // namespace vessel
