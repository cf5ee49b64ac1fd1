#include "vessel/stage3.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "vessel/parallel.hpp"
#include "vessel/stage1.hpp"
#include "vessel/stage2.hpp"

namespace vessel {

// ---------------------------------------------------------------------------
// Mesh helpers
// ---------------------------------------------------------------------------

double TriangleMesh::surface_area() const {
  double area = 0.0;
  for (const auto& t : triangles) {
    Vec3 a = vertices[t[1]] - vertices[t[0]];
    Vec3 b = vertices[t[2]] - vertices[t[0]];
    area += 0.5 * norm(cross(a, b));
  }
  return area;
}

double TriangleMesh::signed_volume() const {
  double vol = 0.0;
  for (const auto& t : triangles)
    vol += dot(vertices[t[0]], cross(vertices[t[1]], vertices[t[2]])) / 6.0;
  return vol;
}

bool TriangleMesh::watertight() const {
  // undirected edge -> (forward count, backward count)
  std::map<std::pair<int, int>, std::pair<int, int>> edges;
  for (const auto& t : triangles) {
    for (int i = 0; i < 3; ++i) {
      int a = t[i], b = t[(i + 1) % 3];
      if (a == b) return false;
      if (a < b)
        edges[{a, b}].first++;
      else
        edges[{b, a}].second++;
    }
  }
  for (const auto& [e, c] : edges)
    if (c.first != 1 || c.second != 1) return false;
  return !triangles.empty();
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

VesselSegment align_segment(const VesselSegment& canonical, const Vec3& p_start,
                            const Vec3& p_end, const Vec3& n) {
  Vec3 chord = p_end - p_start;
  double delta = norm(chord);
  if (delta <= 1e-9) throw DegenerateChordError("align_segment: coincident endpoints");
  Vec3 u = (1.0 / delta) * chord;

  Mat3 rot = rotation_between(Vec3{1, 0, 0}, u);
  auto dev = max_deviation_dir(canonical);
  Vec3 t = n - dot(n, u) * u;
  if (dev && norm(t) >= 1e-6) {
    Vec3 a = mat3_apply(rot, *dev);  // perpendicular to u by construction
    Vec3 th = normalized(t);
    double angle = std::atan2(dot(u, cross(a, th)), dot(a, th));
    rot = mat3_mul(rotation_about_axis(u, angle), rot);
  }

  VesselSegment out;
  out.points.reserve(canonical.points.size());
  for (const auto& p : canonical.points)
    out.points.push_back({p_start + delta * mat3_apply(rot, p.pos), delta * p.radius});
  out.points.front().pos = p_start;  // exact endpoint fusion
  out.points.back().pos = p_end;
  return out;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

SkeletonGraph assemble(const KeyGraph& kg, const PartSource& source) {
  auto problems = validate_key_graph(kg);
  if (!problems.empty()) throw AssemblyError("invalid key graph: " + problems.front());

  SkeletonGraph g;
  auto add_node = [&g](const Vec3& pos, double radius) {
    int id = static_cast<int>(g.nodes.size());
    g.nodes.push_back({id, pos, radius});
    return id;
  };
  std::vector<int> node_of(kg.node_count(), -1);
  node_of[kg.root] = add_node(kg.nodes[kg.root].pos, 0.0);

  // preorder DFS, left before right
  std::function<void(int)> visit = [&](int parent) {
    for (int side = 0; side < 2; ++side) {
      int child = kg.children[parent][side];
      if (child < 0) continue;
      Vec3 ppos = g.nodes[node_of[parent]].pos;
      Vec3 cpos = kg.nodes[child].pos;
      if (norm(cpos - ppos) < 1e-6) {
        node_of[child] = node_of[parent];  // point attachment
        visit(child);
        continue;
      }
      AssemblyPart part = source(parent, child);
      if (!part.canonical)
        throw AssemblyError("missing segment for edge " + std::to_string(parent) + "->" +
                            std::to_string(child));
      Vec3 n = part.roll_dir ? *part.roll_dir : kg.nodes[child].dir;
      VesselSegment aligned = align_segment(*part.canonical, ppos, cpos, n);
      if (g.nodes[node_of[parent]].radius <= 0.0)
        g.nodes[node_of[parent]].radius = aligned.front().radius;
      int prev = node_of[parent];
      for (int i = 1; i < aligned.size(); ++i) {
        int id = add_node(aligned.points[i].pos, aligned.points[i].radius);
        g.edges.emplace_back(prev, id);
        prev = id;
      }
      node_of[child] = prev;
      visit(child);
    }
  };
  visit(kg.root);
  for (auto& node : g.nodes)
    if (node.radius <= 0.0) node.radius = 1.0;  // isolated root fallback
  return g;
}

SkeletonGraph assemble_sample(const TrainingSample& sample) {
  return assemble(sample.key_graph, [&sample](int parent, int child) {
    AssemblyPart part;
    if (const SegmentRecord* rec = sample.find_segment(parent, child)) {
      part.canonical = &rec->canonical;
      part.roll_dir = rec->roll_dir;
    }
    return part;
  });
}

// ---------------------------------------------------------------------------
// Meshing: capsule-union SDF + marching tetrahedra
// ---------------------------------------------------------------------------

namespace {

// Kuhn decomposition of the unit cube: six tetrahedra around the main
// diagonal c0-c7 (corner bit order x + 2y + 4z). Face diagonals agree
// between neighboring cubes, which keeps the extracted surface watertight.
constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
                             {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};

}  // namespace

TriangleMesh skeleton_to_mesh(const SkeletonGraph& g, double voxel_size) {
  if (g.nodes.empty()) throw MeshError("empty skeleton");
  if (!g.connected()) throw MeshError("skeleton must be connected");
  if (voxel_size <= 0.0) throw MeshError("voxel size must be positive");
  double min_r = 1e30, max_r = 0.0;
  for (const auto& n : g.nodes) {
    if (n.radius <= 0.0) throw MeshError("non-positive radius");
    min_r = std::min(min_r, n.radius);
    max_r = std::max(max_r, n.radius);
  }
  if (voxel_size >= min_r)
    throw MeshError("voxel size " + std::to_string(voxel_size) +
                    " too coarse for minimum radius " + std::to_string(min_r));

  Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
  for (const auto& n : g.nodes)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], n.pos[k]);
      hi[k] = std::max(hi[k], n.pos[k]);
    }
  double pad = max_r + 2.0 * voxel_size;
  for (int k = 0; k < 3; ++k) {
    lo[k] -= pad;
    hi[k] += pad;
  }
  int nx = static_cast<int>(std::ceil((hi[0] - lo[0]) / voxel_size)) + 1;
  int ny = static_cast<int>(std::ceil((hi[1] - lo[1]) / voxel_size)) + 1;
  int nz = static_cast<int>(std::ceil((hi[2] - lo[2]) / voxel_size)) + 1;

  std::vector<kern::Capsule> caps;
  for (const auto& [a, b] : g.edges) {
    const SkelNode* na = g.find(a);
    const SkelNode* nb = g.find(b);
    caps.push_back({na->pos[0], na->pos[1], na->pos[2], nb->pos[0], nb->pos[1], nb->pos[2],
                    na->radius, nb->radius});
  }
  if (caps.empty()) {
    const auto& n = g.nodes[0];  // single node: sphere
    caps.push_back({n.pos[0], n.pos[1], n.pos[2], n.pos[0], n.pos[1], n.pos[2], n.radius,
                    n.radius});
  }

  auto gid = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (y + static_cast<std::size_t>(ny) * z);
  };
  std::vector<double> pts(static_cast<std::size_t>(nx) * ny * nz * 3);
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        std::size_t i = gid(x, y, z) * 3;
        pts[i] = lo[0] + x * voxel_size;
        pts[i + 1] = lo[1] + y * voxel_size;
        pts[i + 2] = lo[2] + z * voxel_size;
      }
  std::vector<double> sdf(static_cast<std::size_t>(nx) * ny * nz);
  kern::sdf_grid(pts.data(), sdf.size(), caps.data(), caps.size(), sdf.data());
  // keep the iso-surface off the lattice so no interpolated vertex collapses
  for (auto& v : sdf)
    if (std::fabs(v) < 1e-12) v = 1e-12;

  TriangleMesh mesh;
  std::map<std::pair<std::size_t, std::size_t>, int> edge_vertex;
  auto vertex_on_edge = [&](std::size_t ga, std::size_t gb) {
    auto key = std::minmax(ga, gb);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    double va = sdf[key.first], vb = sdf[key.second];
    double t = va / (va - vb);
    Vec3 pa{pts[key.first * 3], pts[key.first * 3 + 1], pts[key.first * 3 + 2]};
    Vec3 pb{pts[key.second * 3], pts[key.second * 3 + 1], pts[key.second * 3 + 2]};
    int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pa + t * (pb - pa));
    edge_vertex.emplace(key, id);
    return id;
  };
  auto emit = [&](int v0, int v1, int v2, const Vec3& inside_pos) {
    if (v0 == v1 || v1 == v2 || v0 == v2) return;
    Vec3 a = mesh.vertices[v1] - mesh.vertices[v0];
    Vec3 b = mesh.vertices[v2] - mesh.vertices[v0];
    Vec3 nrm = cross(a, b);
    Vec3 c = (1.0 / 3.0) * (mesh.vertices[v0] + mesh.vertices[v1] + mesh.vertices[v2]);
    if (dot(nrm, c - inside_pos) >= 0.0)
      mesh.triangles.push_back({v0, v1, v2});
    else
      mesh.triangles.push_back({v0, v2, v1});
  };

  for (int z = 0; z + 1 < nz; ++z)
    for (int y = 0; y + 1 < ny; ++y)
      for (int x = 0; x + 1 < nx; ++x) {
        std::size_t corner[8];
        for (int b = 0; b < 8; ++b)
          corner[b] = gid(x + (b & 1), y + ((b >> 1) & 1), z + ((b >> 2) & 1));
        for (const auto& tet : kTets) {
          int inside[4], n_in = 0;
          for (int i = 0; i < 4; ++i)
            if (sdf[corner[tet[i]]] < 0.0) inside[n_in++] = i;
          if (n_in == 0 || n_in == 4) continue;
          auto P = [&](int i) {
            std::size_t gi = corner[tet[i]];
            return Vec3{pts[gi * 3], pts[gi * 3 + 1], pts[gi * 3 + 2]};
          };
          auto E = [&](int i, int j) { return vertex_on_edge(corner[tet[i]], corner[tet[j]]); };
          if (n_in == 1) {
            int i = inside[0];
            int o[3], m = 0;
            for (int j = 0; j < 4; ++j)
              if (j != i) o[m++] = j;
            emit(E(i, o[0]), E(i, o[1]), E(i, o[2]), P(i));
          } else if (n_in == 3) {
            int o = 0;  // the single outside corner
            for (int j = 0; j < 4; ++j)
              if (sdf[corner[tet[j]]] >= 0.0) o = j;
            int in3[3], m = 0;
            for (int j = 0; j < 4; ++j)
              if (j != o) in3[m++] = j;
            emit(E(o, in3[0]), E(o, in3[1]), E(o, in3[2]), P(in3[0]));
          } else {  // n_in == 2
            int a = inside[0], b = inside[1];
            int o[2], m = 0;
            for (int j = 0; j < 4; ++j)
              if (j != a && j != b) o[m++] = j;
            int vac = E(a, o[0]), vad = E(a, o[1]);
            int vbd = E(b, o[1]), vbc = E(b, o[0]);
            emit(vac, vad, vbd, P(a));
            emit(vac, vbd, vbc, P(a));
          }
        }
      }
  return mesh;
}

// ---------------------------------------------------------------------------
// Export / import
// ---------------------------------------------------------------------------

namespace {

void write_obj(const TriangleMesh& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw MeshError("cannot write " + path);
  char line[128];
  for (const auto& v : m.vertices) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", v[0], v[1], v[2]);
    f << line;
  }
  for (const auto& t : m.triangles) f << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
}

TriangleMesh read_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MeshError("cannot read " + path);
  TriangleMesh m;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      ss >> v[0] >> v[1] >> v[2];
      m.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t;
      ss >> t[0] >> t[1] >> t[2];
      m.triangles.push_back({t[0] - 1, t[1] - 1, t[2] - 1});
    }
  }
  return m;
}

void write_ply(const TriangleMesh& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MeshError("cannot write " + path);
  f << "ply\nformat binary_little_endian 1.0\n"
    << "element vertex " << m.vertices.size() << "\n"
    << "property double x\nproperty double y\nproperty double z\n"
    << "element face " << m.triangles.size() << "\n"
    << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& v : m.vertices)
    f.write(reinterpret_cast<const char*>(v.data()), 3 * sizeof(double));
  for (const auto& t : m.triangles) {
    std::uint8_t n = 3;
    f.write(reinterpret_cast<const char*>(&n), 1);
    std::int32_t idx[3] = {t[0], t[1], t[2]};
    f.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
}

TriangleMesh read_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MeshError("cannot read " + path);
  std::string line;
  std::size_t n_vertices = 0, n_faces = 0;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "element") {
      std::string what;
      ss >> what;
      if (what == "vertex") ss >> n_vertices;
      if (what == "face") ss >> n_faces;
    } else if (tag == "end_header") {
      break;
    }
  }
  TriangleMesh m;
  m.vertices.resize(n_vertices);
  for (auto& v : m.vertices) f.read(reinterpret_cast<char*>(v.data()), 3 * sizeof(double));
  m.triangles.resize(n_faces);
  for (auto& t : m.triangles) {
    std::uint8_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 1);
    if (n != 3) throw MeshError("non-triangle face in " + path);
    std::int32_t idx[3];
    f.read(reinterpret_cast<char*>(idx), sizeof(idx));
    t = {idx[0], idx[1], idx[2]};
  }
  if (!f) throw MeshError("truncated PLY payload in " + path);
  return m;
}

}  // namespace

void export_mesh(const TriangleMesh& m, const std::string& path, MeshFormat format) {
  if (format == MeshFormat::obj)
    write_obj(m, path);
  else
    write_ply(m, path);
}

TriangleMesh import_mesh(const std::string& path, MeshFormat format) {
  return format == MeshFormat::obj ? read_obj(path) : read_ply(path);
}

SkeletonGraph generate_vessel(const RvaeModel& stage1, const SegVaeModel& stage2, Rng& rng) {
  KeyGraph kg = sample_key_graph(stage1, rng, stage1.cfg.max_depth);
  auto parent = kg.parent_map();
  std::map<std::pair<int, int>, VesselSegment> parts;
  for (int c : kg.dfs_order())
    if (c != kg.root) parts[{parent[c], c}] = sample_segment(kg.nodes[c].desc, stage2, rng);
  return assemble(kg, [&](int p, int c) {
    return AssemblyPart{&parts.at({p, c}), std::nullopt};
  });
}

}  // namespace vessel
