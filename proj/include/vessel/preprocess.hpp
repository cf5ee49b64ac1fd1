#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vessel/core.hpp"

namespace vessel {

struct PreprocessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense boolean occupancy, x-fastest order.
struct VoxelGrid {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1, 1, 1};
  std::vector<std::uint8_t> data;

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(y) +
                                                static_cast<std::size_t>(dims[1]) * z);
  }
  bool at(int x, int y, int z) const {
    if (x < 0 || y < 0 || z < 0 || x >= dims[0] || y >= dims[1] || z >= dims[2]) return false;
    return data[index(x, y, z)] != 0;
  }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }

  // Raw binary format: 24-byte header (3 x u32 LE dims, 3 x f32 LE spacings)
  // followed by one byte per voxel.
  void save_raw(const std::string& path) const;
  static VoxelGrid load_raw(const std::string& path);
};

using VoxelCoord = std::array<int, 3>;

struct NormalizationRecord {
  Vec3 translation{0, 0, 0};  // subtracted before scaling
  double scale = 1.0;         // multiplied after translation
};

// Per-edge part of a training sample: the canonical segment plus everything
// assembly needs to re-place it exactly.
struct SegmentRecord {
  int parent = 0;
  int child = 0;
  VesselSegment canonical;
  RigidSimilarity xform;                // canonical -> world (pre-normalization)
  std::optional<Vec3> roll_dir;         // world max-deviation direction
};

struct TrainingSample {
  KeyGraph key_graph;
  std::vector<SegmentRecord> segments;  // one per non-degenerate key edge
  NormalizationRecord normalization;

  const SegmentRecord* find_segment(int parent, int child) const;
  std::string to_json() const;
  static TrainingSample from_json(const std::string& text);
};

// --------------------------------------------------------------------------
// Volume operations
// --------------------------------------------------------------------------

// 6-subiteration boundary peeling that only removes simple points; preserves
// topology and leaves a 1-voxel-wide 26-connected skeleton.
std::set<VoxelCoord> thin_volume(const VoxelGrid& v);

// Euclidean distance to nearest background voxel, in physical units.
std::map<VoxelCoord, double> estimate_radius(const VoxelGrid& v,
                                             const std::set<VoxelCoord>& skeleton);

// Exact squared Euclidean distance transform of the occupancy (to background),
// anisotropic spacing. Exposed for the brute-force-oracle test.
std::vector<double> edt_sq(const VoxelGrid& v);

SkeletonGraph skeleton_to_graph(const std::set<VoxelCoord>& skeleton,
                                const std::map<VoxelCoord, double>& radii,
                                const std::array<double, 3>& spacing = {1, 1, 1});

// --------------------------------------------------------------------------
// Graph operations
// --------------------------------------------------------------------------

// Pre-binarization key tree: maximum spanning tree by mean endpoint radius,
// key vertices at degree != 2 nodes. Fan-out can exceed 2; run
// binarize_bifurcations before handing the result to stage 1.
struct ExtractedKeyGraph {
  KeyGraph graph;                                      // arbitrary fan-out tree
  std::vector<std::vector<int>> children;              // full child lists
  std::vector<std::vector<int>> chains;                // skeleton node ids per key node (path from parent)
  std::vector<int> skeleton_node;                      // key node -> skeleton node id
  std::vector<double> subtree_radius;                  // ordering key for binarization
};
ExtractedKeyGraph extract_key_graph(const SkeletonGraph& g,
                                    std::optional<Vec3> root_hint = std::nullopt);

// Collapse fan-out > 2 into right-leaning chains of co-located nodes.
// chain_of[i] = index into pre-binarization chains (-1 for inserted nodes).
struct BinarizedKeyGraph {
  KeyGraph graph;
  std::vector<int> source_node;  // binarized node -> pre-binarization node id
};
BinarizedKeyGraph binarize_bifurcations(const ExtractedKeyGraph& t);

int resample_point_count(double arc_len, double median_spacing, int max_len = 200);
VesselSegment resample_segment(const VesselSegment& seg, int n_points);

// Full graph-domain pipeline: key graph extraction, binarization, segment
// extraction and canonicalization. max_len caps the per-segment token count.
TrainingSample extract_segments(const SkeletonGraph& g, int max_len = 200,
                                std::optional<Vec3> root_hint = std::nullopt);

TrainingSample normalize_sample(const TrainingSample& s);

// Volume-domain pipeline: thin, estimate radii, graph, then extract_segments.
TrainingSample preprocess_volume(const VoxelGrid& v, int max_len = 200);

}  // namespace vessel
