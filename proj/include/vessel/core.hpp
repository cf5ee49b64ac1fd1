#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vessel/geom.hpp"

namespace vessel {

struct InvalidSegmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateChordError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct SkelNode {
  int id = 0;
  Vec3 pos{0, 0, 0};
  double radius = 1.0;
};

// Undirected spatial graph of centerline points with per-node radius.
struct SkeletonGraph {
  std::vector<SkelNode> nodes;
  std::vector<std::pair<int, int>> edges;

  // Violations of the structural invariants; empty means valid.
  std::vector<std::string> validate() const;
  bool connected() const;
  const SkelNode* find(int id) const;
};

// C = [arc length, chord length, curvature, tree depth].
struct GeometricDescriptor {
  double ell = 0.0;
  double delta = 0.0;
  double kappa = 0.0;
  int rho = 0;
};

struct KeyNode {
  Vec3 pos{0, 0, 0};
  Vec3 dir{0, 0, 0};  // unit norm; zero only at root
  GeometricDescriptor desc;
};

// Rooted binary tree over bifurcation/endpoint nodes; each edge stands for
// one vessel segment.
struct KeyGraph {
  std::vector<KeyNode> nodes;
  int root = 0;
  // children[i] = {left, right}, -1 for absent.
  std::vector<std::array<int, 2>> children;

  int node_count() const { return static_cast<int>(nodes.size()); }
  std::vector<int> parent_map() const;            // -1 for root
  std::vector<int> depth_map() const;             // root depth 0
  std::vector<int> dfs_order() const;             // preorder, left before right
  int max_depth() const;
  int leaf_count() const;
  int bifurcation_count() const;
};

struct SegPoint {
  Vec3 pos{0, 0, 0};
  double radius = 1.0;
};

// Ordered point sequence with radii connecting two key nodes.
struct VesselSegment {
  std::vector<SegPoint> points;

  int size() const { return static_cast<int>(points.size()); }
  const SegPoint& front() const { return points.front(); }
  const SegPoint& back() const { return points.back(); }
};

// x' = scale * R * x + translation; radii scale by `scale`.
struct RigidSimilarity {
  Mat3 rotation = mat3_identity();
  double scale = 1.0;
  Vec3 translation{0, 0, 0};

  Vec3 apply_point(const Vec3& p) const { return scale * mat3_apply(rotation, p) + translation; }
  double apply_radius(double r) const { return scale * r; }
  VesselSegment apply(const VesselSegment& seg) const;
  RigidSimilarity inverse() const;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

double arc_length(const VesselSegment& seg);
double chord_length(const VesselSegment& seg);

// Total turning angle divided by arc length; 0 for 2-point segments.
double mean_curvature(const VesselSegment& seg);

GeometricDescriptor compute_descriptor(const VesselSegment& seg, int depth);

// Canonical frame: first point at origin, last at (1,0,0), the point of
// maximal chord deviation in the z>=0 half of the xz-plane, radii divided by
// chord length. xform maps canonical back onto the input.
struct NormalizedSegment {
  VesselSegment canonical;
  RigidSimilarity xform;
};
NormalizedSegment normalize_segment(const VesselSegment& seg);

// World-frame direction of a segment's maximal deviation from its chord, or
// nullopt for straight segments. This is the roll reference used by assembly.
std::optional<Vec3> max_deviation_dir(const VesselSegment& seg);

// Diagnostic validator; empty report <=> valid.
std::vector<std::string> validate_key_graph(const KeyGraph& g);

// ---------------------------------------------------------------------------
// JSON serialization (schemas fixed; reals as 64-bit decimal text)
// ---------------------------------------------------------------------------

std::string skeleton_to_json(const SkeletonGraph& g);
SkeletonGraph skeleton_from_json(const std::string& text);

std::string key_graph_to_json(const KeyGraph& g);
KeyGraph key_graph_from_json(const std::string& text);

}  // namespace vessel
