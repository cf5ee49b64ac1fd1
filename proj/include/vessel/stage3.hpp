#pragma once

#include <functional>
#include <string>

#include "vessel/preprocess.hpp"
#include "vessel/rng.hpp"

namespace vessel {

struct AssemblyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MeshError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  double surface_area() const;
  double signed_volume() const;
  // every undirected edge in exactly 2 triangles, opposite winding
  bool watertight() const;
};

// Scale canonical onto the chord p_start->p_end, roll its max-deviation
// direction toward n (component orthogonal to the chord), translate.
// Radii scale with the chord length.
VesselSegment align_segment(const VesselSegment& canonical, const Vec3& p_start,
                            const Vec3& p_end, const Vec3& n);

// Part supplied to assembly for one key edge. When roll_dir is set it
// overrides the child node direction as the roll reference.
struct AssemblyPart {
  const VesselSegment* canonical = nullptr;
  std::optional<Vec3> roll_dir;
};
using PartSource = std::function<AssemblyPart(int parent, int child)>;

// DFS placement (left before right); shared endpoints are fused by index.
// Edges shorter than 1e-6 become point attachments and consume no part.
SkeletonGraph assemble(const KeyGraph& kg, const PartSource& source);

// Convenience wrapper over a training sample's stored parts.
SkeletonGraph assemble_sample(const TrainingSample& sample);

struct RvaeModel;
struct SegVaeModel;

// Full generative pipeline: sample a key graph, sample one canonical segment
// per key edge conditioned on its descriptor, assemble. Deterministic given
// the rng state.
SkeletonGraph generate_vessel(const RvaeModel& stage1, const SegVaeModel& stage2, Rng& rng);

// Implicit capsule-union surface extracted on a uniform grid.
TriangleMesh skeleton_to_mesh(const SkeletonGraph& g, double voxel_size);

enum class MeshFormat { obj, ply };
void export_mesh(const TriangleMesh& m, const std::string& path, MeshFormat format);
TriangleMesh import_mesh(const std::string& path, MeshFormat format);

}  // namespace vessel
