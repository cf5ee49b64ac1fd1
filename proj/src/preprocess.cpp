#include "vessel/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <unordered_map>

#include "json.hpp"

namespace vessel {

// ---------------------------------------------------------------------------
// VoxelGrid raw format
// ---------------------------------------------------------------------------

void VoxelGrid::save_raw(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw PreprocessError("cannot write " + path);
  for (int d : dims) {
    std::uint32_t u = static_cast<std::uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&u), 4);
  }
  for (double s : spacing) {
    float fs = static_cast<float>(s);
    f.write(reinterpret_cast<const char*>(&fs), 4);
  }
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

VoxelGrid VoxelGrid::load_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PreprocessError("cannot read " + path);
  VoxelGrid v;
  for (int i = 0; i < 3; ++i) {
    std::uint32_t u = 0;
    f.read(reinterpret_cast<char*>(&u), 4);
    v.dims[i] = static_cast<int>(u);
  }
  for (int i = 0; i < 3; ++i) {
    float fs = 0;
    f.read(reinterpret_cast<char*>(&fs), 4);
    v.spacing[i] = fs;
  }
  if (!f || v.dims[0] <= 0 || v.dims[1] <= 0 || v.dims[2] <= 0 || v.spacing[0] <= 0 ||
      v.spacing[1] <= 0 || v.spacing[2] <= 0)
    throw PreprocessError("corrupt voxel header in " + path);
  v.data.resize(v.voxel_count());
  f.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
  if (!f) throw PreprocessError("truncated voxel payload in " + path);
  for (auto& b : v.data)
    if (b > 1) throw PreprocessError("non-binary voxel value in " + path);
  return v;
}

// ---------------------------------------------------------------------------
// Thinning
// ---------------------------------------------------------------------------

namespace {

// 26-connected components over the occupied voxels of a small bitset lattice.
struct Neighborhood {
  // 3x3x3 occupancy, index (dx+1) + 3*(dy+1) + 9*(dz+1); center at 13.
  bool occ[27];
};

int count_object_components_26(const Neighborhood& nb) {
  bool seen[27] = {};
  int comps = 0;
  for (int i = 0; i < 27; ++i) {
    if (i == 13 || !nb.occ[i] || seen[i]) continue;
    ++comps;
    std::vector<int> stack{i};
    seen[i] = true;
    while (!stack.empty()) {
      int cur = stack.back();
      stack.pop_back();
      int cx = cur % 3, cy = (cur / 3) % 3, cz = cur / 9;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int nx = cx + dx, ny = cy + dy, nz = cz + dz;
            if (nx < 0 || ny < 0 || nz < 0 || nx > 2 || ny > 2 || nz > 2) continue;
            int ni = nx + 3 * ny + 9 * nz;
            if (ni == 13 || ni == cur || seen[ni] || !nb.occ[ni]) continue;
            seen[ni] = true;
            stack.push_back(ni);
          }
    }
  }
  return comps;
}

// 6-connected background components within the 18-neighborhood that touch the
// center by face adjacency.
int count_background_components_6(const Neighborhood& nb) {
  auto in18 = [](int x, int y, int z) {
    int d = std::abs(x - 1) + std::abs(y - 1) + std::abs(z - 1);
    return d >= 1 && d <= 2;
  };
  bool seen[27] = {};
  int comps = 0;
  static const int face[6] = {13 - 1, 13 + 1, 13 - 3, 13 + 3, 13 - 9, 13 + 9};
  for (int fi : face) {
    if (nb.occ[fi] || seen[fi]) continue;
    ++comps;
    std::vector<int> stack{fi};
    seen[fi] = true;
    while (!stack.empty()) {
      int cur = stack.back();
      stack.pop_back();
      int cx = cur % 3, cy = (cur / 3) % 3, cz = cur / 9;
      const int steps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      for (const auto& s : steps) {
        int nx = cx + s[0], ny = cy + s[1], nz = cz + s[2];
        if (nx < 0 || ny < 0 || nz < 0 || nx > 2 || ny > 2 || nz > 2) continue;
        if (!in18(nx, ny, nz)) continue;
        int ni = nx + 3 * ny + 9 * nz;
        if (seen[ni] || nb.occ[ni]) continue;
        seen[ni] = true;
        stack.push_back(ni);
      }
    }
  }
  return comps;
}

}  // namespace

std::set<VoxelCoord> thin_volume(const VoxelGrid& v) {
  std::set<VoxelCoord> object;
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[0]; ++x)
        if (v.at(x, y, z)) object.insert({x, y, z});
  if (object.empty()) throw PreprocessError("empty volume");

  // single 26-connected component required
  {
    std::set<VoxelCoord> seen;
    std::vector<VoxelCoord> stack{*object.begin()};
    seen.insert(*object.begin());
    while (!stack.empty()) {
      VoxelCoord c = stack.back();
      stack.pop_back();
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dx && !dy && !dz) continue;
            VoxelCoord n{c[0] + dx, c[1] + dy, c[2] + dz};
            if (object.count(n) && seen.insert(n).second) stack.push_back(n);
          }
    }
    if (seen.size() != object.size())
      throw PreprocessError("occupancy has multiple 26-connected components");
  }

  auto neighborhood = [&object](const VoxelCoord& c) {
    Neighborhood nb;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          nb.occ[(dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)] =
              object.count({c[0] + dx, c[1] + dy, c[2] + dz}) > 0;
    return nb;
  };
  auto object_neighbor_count = [&](const Neighborhood& nb) {
    int n = 0;
    for (int i = 0; i < 27; ++i)
      if (i != 13 && nb.occ[i]) ++n;
    return n;
  };
  auto simple = [&](const VoxelCoord& c) {
    Neighborhood nb = neighborhood(c);
    return count_object_components_26(nb) == 1 && count_background_components_6(nb) == 1;
  };

  static const int dirs[6][3] = {{0, 0, -1}, {0, 0, 1}, {0, -1, 0}, {0, 1, 0}, {-1, 0, 0}, {1, 0, 0}};
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& d : dirs) {
      // candidates: border voxels open in direction d, in deterministic order
      std::vector<VoxelCoord> candidates;
      for (const auto& c : object) {
        VoxelCoord n{c[0] + d[0], c[1] + d[1], c[2] + d[2]};
        if (!object.count(n)) candidates.push_back(c);
      }
      for (const auto& c : candidates) {
        if (!object.count(c)) continue;
        Neighborhood nb = neighborhood(c);
        int on = object_neighbor_count(nb);
        if (on <= 1) continue;  // curve endpoint or isolated voxel
        if (count_object_components_26(nb) == 1 && count_background_components_6(nb) == 1) {
          object.erase(c);
          changed = true;
        }
      }
    }
  }
  return object;
}

// ---------------------------------------------------------------------------
// Distance transform
// ---------------------------------------------------------------------------

namespace {

// Felzenszwalb-Huttenlocher 1D squared distance transform with sample step w.
// Parabolas at the INF sentinel are excluded from the envelope outright;
// mixing them in numerically would absorb the finite offsets.
constexpr double kEdtInf = 1e30;

void dt_1d(std::vector<double>& f, double w) {
  int n = static_cast<int>(f.size());
  std::vector<double> d(n, kEdtInf);
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] >= kEdtInf) continue;
    double s;
    while (k >= 0) {
      int p = v[k];
      s = ((f[q] + w * w * q * q) - (f[p] + w * w * p * p)) / (2.0 * w * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -std::numeric_limits<double>::infinity() : s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k >= 0) {
    int j = 0;
    for (int q = 0; q < n; ++q) {
      double wq = w * q;
      while (z[j + 1] < wq) ++j;
      double diff = wq - w * v[j];
      d[q] = diff * diff + f[v[j]];
    }
  }
  f = d;
}

}  // namespace

std::vector<double> edt_sq(const VoxelGrid& v) {
  std::vector<double> dist(v.voxel_count());
  bool has_background = false;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    dist[i] = v.data[i] ? kEdtInf : 0.0;
    if (!v.data[i]) has_background = true;
  }
  if (!has_background) throw PreprocessError("volume has no background voxels");

  std::vector<double> line;
  // x pass
  line.resize(v.dims[0]);
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y) {
      for (int x = 0; x < v.dims[0]; ++x) line[x] = dist[v.index(x, y, z)];
      dt_1d(line, v.spacing[0]);
      for (int x = 0; x < v.dims[0]; ++x) dist[v.index(x, y, z)] = line[x];
    }
  // y pass
  line.resize(v.dims[1]);
  for (int z = 0; z < v.dims[2]; ++z)
    for (int x = 0; x < v.dims[0]; ++x) {
      for (int y = 0; y < v.dims[1]; ++y) line[y] = dist[v.index(x, y, z)];
      dt_1d(line, v.spacing[1]);
      for (int y = 0; y < v.dims[1]; ++y) dist[v.index(x, y, z)] = line[y];
    }
  // z pass
  line.resize(v.dims[2]);
  for (int y = 0; y < v.dims[1]; ++y)
    for (int x = 0; x < v.dims[0]; ++x) {
      for (int z = 0; z < v.dims[2]; ++z) line[z] = dist[v.index(x, y, z)];
      dt_1d(line, v.spacing[2]);
      for (int z = 0; z < v.dims[2]; ++z) dist[v.index(x, y, z)] = line[z];
    }
  return dist;
}

std::map<VoxelCoord, double> estimate_radius(const VoxelGrid& v,
                                             const std::set<VoxelCoord>& skeleton) {
  for (const auto& c : skeleton)
    if (!v.at(c[0], c[1], c[2]))
      throw PreprocessError("skeleton voxel outside occupancy at (" + std::to_string(c[0]) + "," +
                            std::to_string(c[1]) + "," + std::to_string(c[2]) + ")");
  std::vector<double> d2 = edt_sq(v);
  std::map<VoxelCoord, double> out;
  for (const auto& c : skeleton) out[c] = std::sqrt(d2[v.index(c[0], c[1], c[2])]);
  return out;
}

// ---------------------------------------------------------------------------
// Skeleton graph construction
// ---------------------------------------------------------------------------

SkeletonGraph skeleton_to_graph(const std::set<VoxelCoord>& skeleton,
                                const std::map<VoxelCoord, double>& radii,
                                const std::array<double, 3>& spacing) {
  if (skeleton.empty()) throw PreprocessError("empty skeleton");
  std::vector<VoxelCoord> voxels(skeleton.begin(), skeleton.end());
  std::map<VoxelCoord, int> id_of;
  for (int i = 0; i < static_cast<int>(voxels.size()); ++i) id_of[voxels[i]] = i;

  SkeletonGraph g;
  for (int i = 0; i < static_cast<int>(voxels.size()); ++i) {
    const auto& c = voxels[i];
    double r = 0.5 * std::min({spacing[0], spacing[1], spacing[2]});
    auto it = radii.find(c);
    if (it != radii.end()) r = it->second;
    g.nodes.push_back({i,
                       {(c[0] + 0.5) * spacing[0], (c[1] + 0.5) * spacing[1],
                        (c[2] + 0.5) * spacing[2]},
                       r});
  }

  // 26-adjacency, but drop diagonal shortcuts that are already realized by a
  // 2-hop path through closer neighbors (keeps thin skeletons path-shaped).
  auto l1 = [](const VoxelCoord& a, const VoxelCoord& b) {
    return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
  };
  auto linf_adjacent = [](const VoxelCoord& a, const VoxelCoord& b) {
    return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])}) == 1;
  };
  for (int i = 0; i < static_cast<int>(voxels.size()); ++i) {
    const auto& a = voxels[i];
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dx && !dy && !dz) continue;
          VoxelCoord b{a[0] + dx, a[1] + dy, a[2] + dz};
          auto it = id_of.find(b);
          if (it == id_of.end() || it->second <= i) continue;
          int dab = l1(a, b);
          if (dab > 1) {
            // look for a strictly closer common neighbor
            bool shortcut = false;
            for (int ez = -1; ez <= 1 && !shortcut; ++ez)
              for (int ey = -1; ey <= 1 && !shortcut; ++ey)
                for (int ex = -1; ex <= 1 && !shortcut; ++ex) {
                  if (!ex && !ey && !ez) continue;
                  VoxelCoord c{a[0] + ex, a[1] + ey, a[2] + ez};
                  if (c == b || !id_of.count(c)) continue;
                  if (linf_adjacent(c, b) && l1(a, c) < dab && l1(c, b) < dab) shortcut = true;
                }
            if (shortcut) continue;
          }
          g.edges.emplace_back(i, it->second);
        }
  }
  if (!g.connected()) {
    // report component count
    std::vector<int> comp(g.nodes.size(), -1);
    int n_comp = 0;
    for (std::size_t s = 0; s < g.nodes.size(); ++s) {
      if (comp[s] >= 0) continue;
      std::vector<int> stack{static_cast<int>(s)};
      comp[s] = n_comp;
      while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        for (const auto& [x, y] : g.edges) {
          int other = x == cur ? y : (y == cur ? x : -1);
          if (other >= 0 && comp[other] < 0) {
            comp[other] = n_comp;
            stack.push_back(other);
          }
        }
      }
      ++n_comp;
    }
    throw PreprocessError("skeleton graph has " + std::to_string(n_comp) +
                          " connected components");
  }
  return g;
}

// ---------------------------------------------------------------------------
// Key graph extraction
// ---------------------------------------------------------------------------

namespace {

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

VesselSegment chain_to_segment(const SkeletonGraph& g, const std::vector<int>& chain) {
  VesselSegment s;
  for (int id : chain) s.points.push_back({g.nodes[id].pos, g.nodes[id].radius});
  return s;
}

}  // namespace

ExtractedKeyGraph extract_key_graph(const SkeletonGraph& g, std::optional<Vec3> root_hint) {
  int n = static_cast<int>(g.nodes.size());
  if (n < 2) throw PreprocessError("skeleton graph needs at least 2 nodes");
  if (!g.connected()) throw PreprocessError("skeleton graph must be connected");

  // Maximum spanning tree, weight = mean endpoint radius, ties by lower id pair.
  struct WEdge {
    double w;
    int a, b;
  };
  std::vector<WEdge> edges;
  edges.reserve(g.edges.size());
  for (const auto& [a, b] : g.edges) {
    auto [lo, hi] = std::minmax(a, b);
    edges.push_back({0.5 * (g.nodes[a].radius + g.nodes[b].radius), lo, hi});
  }
  std::sort(edges.begin(), edges.end(), [](const WEdge& x, const WEdge& y) {
    if (x.w != y.w) return x.w > y.w;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  DisjointSet ds(n);
  std::vector<std::vector<int>> adj(n);
  int taken = 0;
  for (const auto& e : edges) {
    if (ds.unite(e.a, e.b)) {
      adj[e.a].push_back(e.b);
      adj[e.b].push_back(e.a);
      ++taken;
    }
  }
  if (taken != n - 1) throw PreprocessError("MST construction failed (input disconnected?)");
  for (auto& a : adj) std::sort(a.begin(), a.end());

  // Key vertices: tree degree != 2.
  std::vector<int> key_vertices;
  for (int i = 0; i < n; ++i)
    if (adj[i].size() != 2) key_vertices.push_back(i);

  // Root selection.
  int root_skel = -1;
  if (root_hint) {
    double best = std::numeric_limits<double>::infinity();
    for (int kv : key_vertices) {
      double d = norm(g.nodes[kv].pos - *root_hint);
      if (d < best) {
        best = d;
        root_skel = kv;
      }
    }
  } else {
    double best = -1.0;
    for (int kv : key_vertices) {
      if (g.nodes[kv].radius > best) {
        best = g.nodes[kv].radius;
        root_skel = kv;
      }
    }
  }

  // Walk chains between key vertices.
  std::vector<bool> is_key(n, false);
  for (int kv : key_vertices) is_key[kv] = true;

  ExtractedKeyGraph out;
  std::unordered_map<int, int> key_id;  // skeleton id -> key node index
  auto add_key_node = [&](int skel) {
    int id = static_cast<int>(out.graph.nodes.size());
    KeyNode kn;
    kn.pos = g.nodes[skel].pos;
    out.graph.nodes.push_back(kn);
    out.graph.children.push_back({-1, -1});
    out.children.emplace_back();
    out.chains.emplace_back();
    out.skeleton_node.push_back(skel);
    out.subtree_radius.push_back(0.0);
    key_id[skel] = id;
    return id;
  };

  out.graph.root = add_key_node(root_skel);
  std::vector<std::pair<int, int>> frontier;  // (key node id, skeleton id)
  frontier.emplace_back(out.graph.root, root_skel);
  std::vector<bool> visited(n, false);
  visited[root_skel] = true;

  while (!frontier.empty()) {
    auto [kid, skel] = frontier.back();
    frontier.pop_back();
    for (int nb : adj[skel]) {
      if (visited[nb]) continue;
      // follow the chain until the next key vertex
      std::vector<int> chain{skel};
      int prev = skel, cur = nb;
      while (true) {
        visited[cur] = true;
        chain.push_back(cur);
        if (is_key[cur]) break;
        int next = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
        prev = cur;
        cur = next;
      }
      int child_id = add_key_node(cur);
      out.children[kid].push_back(child_id);
      out.chains[child_id] = chain;
      frontier.emplace_back(child_id, cur);
    }
  }

  // attributes from raw chains (descriptors recomputed on resampled chains later)
  for (int i = 0; i < static_cast<int>(out.graph.nodes.size()); ++i) {
    if (out.chains[i].size() < 2) continue;
    VesselSegment seg = chain_to_segment(g, out.chains[i]);
    Vec3 chord = seg.back().pos - seg.front().pos;
    double delta = norm(chord);
    out.graph.nodes[i].dir = delta > 1e-12 ? (1.0 / delta) * chord : Vec3{0, 0, 0};
    out.graph.nodes[i].desc = compute_descriptor(seg, 0);  // depth filled after binarization
  }

  // subtree radius (max skeleton radius in subtree incl. chain), bottom up
  std::function<double(int)> fill = [&](int kid) {
    double r = g.nodes[out.skeleton_node[kid]].radius;
    // chain[0] is the parent key vertex; it belongs to the parent's subtree
    for (std::size_t ci = 1; ci < out.chains[kid].size(); ++ci)
      r = std::max(r, g.nodes[out.chains[kid][ci]].radius);
    for (int c : out.children[kid]) r = std::max(r, fill(c));
    out.subtree_radius[kid] = r;
    return r;
  };
  fill(out.graph.root);

  // children table for the <=2 fan-out case (binarization fills the rest)
  for (int i = 0; i < static_cast<int>(out.graph.nodes.size()); ++i) {
    if (out.children[i].size() >= 1) out.graph.children[i][0] = out.children[i][0];
    if (out.children[i].size() >= 2) out.graph.children[i][1] = out.children[i][1];
  }
  return out;
}

BinarizedKeyGraph binarize_bifurcations(const ExtractedKeyGraph& t) {
  BinarizedKeyGraph out;
  int n = static_cast<int>(t.graph.nodes.size());

  // order children by descending subtree radius, ties by lower node index
  auto ordered_children = [&](int node) {
    std::vector<int> cs = t.children[node];
    std::stable_sort(cs.begin(), cs.end(), [&](int a, int b) {
      if (t.subtree_radius[a] != t.subtree_radius[b])
        return t.subtree_radius[a] > t.subtree_radius[b];
      return a < b;
    });
    return cs;
  };

  std::vector<int> new_id(n, -1);
  auto add_node = [&](const KeyNode& kn, int source) {
    out.graph.nodes.push_back(kn);
    out.graph.children.push_back({-1, -1});
    out.source_node.push_back(source);
    return static_cast<int>(out.graph.nodes.size()) - 1;
  };

  // copy nodes in original order
  for (int i = 0; i < n; ++i) new_id[i] = add_node(t.graph.nodes[i], i);
  out.graph.root = new_id[t.graph.root];

  for (int i = 0; i < n; ++i) {
    auto cs = ordered_children(i);
    int k = static_cast<int>(cs.size());
    if (k == 0) continue;
    if (k <= 2) {
      out.graph.children[new_id[i]][0] = new_id[cs[0]];
      if (k == 2) out.graph.children[new_id[i]][1] = new_id[cs[1]];
      continue;
    }
    // right-leaning chain of co-located nodes
    int attach = new_id[i];
    for (int j = 0; j < k - 2; ++j) {
      KeyNode chain_node;
      chain_node.pos = t.graph.nodes[i].pos;
      chain_node.dir = t.graph.nodes[i].dir;
      chain_node.desc = {0, 0, 0, 0};  // depth patched below
      int cn = add_node(chain_node, i);
      out.graph.children[attach][0] = new_id[cs[j]];
      out.graph.children[attach][1] = cn;
      attach = cn;
    }
    out.graph.children[attach][0] = new_id[cs[k - 2]];
    out.graph.children[attach][1] = new_id[cs[k - 1]];
  }

  // patch descriptor depth everywhere
  auto depth = out.graph.depth_map();
  for (int i = 0; i < out.graph.node_count(); ++i) out.graph.nodes[i].desc.rho = depth[i];
  return out;
}

// ---------------------------------------------------------------------------
// Resampling & segment extraction
// ---------------------------------------------------------------------------

int resample_point_count(double arc_len, double median_spacing, int max_len) {
  if (median_spacing <= 0.0) return 2;
  int n = static_cast<int>(std::ceil(arc_len / median_spacing)) + 1;
  return std::clamp(n, 2, max_len);
}

VesselSegment resample_segment(const VesselSegment& seg, int n_points) {
  if (seg.size() < 2) throw InvalidSegmentError("resample: segment needs 2 points");
  if (n_points < 2) throw PreprocessError("resample: n_points out of range");
  double total = arc_length(seg);
  // cumulative arc lengths
  std::vector<double> cum(seg.size(), 0.0);
  for (int i = 1; i < seg.size(); ++i)
    cum[i] = cum[i - 1] + norm(seg.points[i].pos - seg.points[i - 1].pos);

  VesselSegment out;
  out.points.reserve(n_points);
  int seg_idx = 0;
  for (int i = 0; i < n_points; ++i) {
    double target = total * i / (n_points - 1);
    if (i == 0) {
      out.points.push_back(seg.points.front());
      continue;
    }
    if (i == n_points - 1) {
      out.points.push_back(seg.points.back());
      continue;
    }
    while (seg_idx + 1 < seg.size() - 1 && cum[seg_idx + 1] < target) ++seg_idx;
    double span = cum[seg_idx + 1] - cum[seg_idx];
    double t = span > 0.0 ? (target - cum[seg_idx]) / span : 0.0;
    const auto& a = seg.points[seg_idx];
    const auto& b = seg.points[seg_idx + 1];
    out.points.push_back({a.pos + t * (b.pos - a.pos), a.radius + t * (b.radius - a.radius)});
  }
  return out;
}

TrainingSample extract_segments(const SkeletonGraph& g, int max_len,
                                std::optional<Vec3> root_hint) {
  ExtractedKeyGraph raw = extract_key_graph(g, root_hint);
  BinarizedKeyGraph bin = binarize_bifurcations(raw);

  // median inter-node spacing over the skeleton edges
  std::vector<double> lens;
  lens.reserve(g.edges.size());
  for (const auto& [a, b] : g.edges) {
    const SkelNode* na = g.find(a);
    const SkelNode* nb = g.find(b);
    lens.push_back(norm(na->pos - nb->pos));
  }
  std::sort(lens.begin(), lens.end());
  double median_spacing = lens.empty() ? 1.0 : lens[lens.size() / 2];

  TrainingSample sample;
  sample.key_graph = bin.graph;

  auto parent = bin.graph.parent_map();
  auto depth = bin.graph.depth_map();
  for (int i = 0; i < bin.graph.node_count(); ++i) {
    if (i == bin.graph.root) continue;
    int src = bin.source_node[i];
    bool inserted = false;
    // an inserted chain node shares its source with an earlier node
    for (int j = 0; j < i && !inserted; ++j)
      if (bin.source_node[j] == src) inserted = true;
    if (inserted || raw.chains[src].size() < 2) {
      // degenerate point attachment: no segment
      sample.key_graph.nodes[i].desc.rho = depth[i];
      continue;
    }
    VesselSegment chain = chain_to_segment(g, raw.chains[src]);
    double ell = arc_length(chain);
    int n_pts = resample_point_count(ell, median_spacing, max_len);
    VesselSegment resampled = resample_segment(chain, n_pts);
    GeometricDescriptor d = compute_descriptor(resampled, depth[i]);

    SegmentRecord rec;
    rec.parent = parent[i];
    rec.child = i;
    rec.roll_dir = max_deviation_dir(resampled);
    auto canon = normalize_segment(resampled);
    rec.canonical = std::move(canon.canonical);
    rec.xform = canon.xform;
    sample.segments.push_back(std::move(rec));

    sample.key_graph.nodes[i].desc = d;
    Vec3 chord = resampled.back().pos - resampled.front().pos;
    sample.key_graph.nodes[i].dir = d.delta > 1e-12 ? normalized(chord) : Vec3{0, 0, 0};
  }
  // root carries dir = 0, desc = [0,0,0,0]
  sample.key_graph.nodes[sample.key_graph.root].dir = {0, 0, 0};
  sample.key_graph.nodes[sample.key_graph.root].desc = {0, 0, 0, 0};
  return sample;
}

TrainingSample normalize_sample(const TrainingSample& s) {
  if (s.key_graph.node_count() < 2)
    throw PreprocessError("normalize_sample: degenerate single-node graph");
  TrainingSample out = s;
  Vec3 root_pos = s.key_graph.nodes[s.key_graph.root].pos;
  double max_dist = 0.0;
  for (const auto& n : s.key_graph.nodes) max_dist = std::max(max_dist, norm(n.pos - root_pos));
  if (max_dist <= 0.0) throw PreprocessError("normalize_sample: all key nodes coincide");
  double scale = 1.0 / max_dist;

  for (auto& n : out.key_graph.nodes) {
    n.pos = scale * (n.pos - root_pos);
    n.desc.ell *= scale;
    n.desc.delta *= scale;
    n.desc.kappa /= scale;
  }
  for (auto& rec : out.segments) {
    rec.xform.scale *= scale;
    rec.xform.translation = scale * (rec.xform.translation - root_pos);
  }
  out.normalization.translation = root_pos;
  out.normalization.scale = scale;
  return out;
}

TrainingSample preprocess_volume(const VoxelGrid& v, int max_len) {
  auto skeleton = thin_volume(v);
  auto radii = estimate_radius(v, skeleton);
  SkeletonGraph g = skeleton_to_graph(skeleton, radii, v.spacing);
  return normalize_sample(extract_segments(g, max_len));
}

// ---------------------------------------------------------------------------
// TrainingSample JSON
// ---------------------------------------------------------------------------

using json = nlohmann::json;

const SegmentRecord* TrainingSample::find_segment(int parent, int child) const {
  for (const auto& rec : segments)
    if (rec.parent == parent && rec.child == child) return &rec;
  return nullptr;
}

std::string TrainingSample::to_json() const {
  json j;
  j["key_graph"] = json::parse(key_graph_to_json(key_graph));
  j["segments"] = json::array();
  for (const auto& rec : segments) {
    json js;
    js["parent"] = rec.parent;
    js["child"] = rec.child;
    js["points"] = json::array();
    for (const auto& p : rec.canonical.points)
      js["points"].push_back({p.pos[0], p.pos[1], p.pos[2], p.radius});
    js["xform"] = {{"rotation", rec.xform.rotation},
                   {"scale", rec.xform.scale},
                   {"translation", rec.xform.translation}};
    js["roll_dir"] = rec.roll_dir ? json(*rec.roll_dir) : json(nullptr);
    j["segments"].push_back(js);
  }
  j["normalization"] = {{"translation", normalization.translation},
                        {"scale", normalization.scale}};
  return j.dump();
}

TrainingSample TrainingSample::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainingSample s;
  s.key_graph = key_graph_from_json(j.at("key_graph").dump());
  for (const auto& js : j.at("segments")) {
    SegmentRecord rec;
    rec.parent = js.at("parent").get<int>();
    rec.child = js.at("child").get<int>();
    for (const auto& p : js.at("points")) {
      SegPoint sp;
      sp.pos = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
      sp.radius = p.at(3).get<double>();
      rec.canonical.points.push_back(sp);
    }
    rec.xform.rotation = js.at("xform").at("rotation").get<Mat3>();
    rec.xform.scale = js.at("xform").at("scale").get<double>();
    rec.xform.translation = js.at("xform").at("translation").get<Vec3>();
    if (!js.at("roll_dir").is_null()) rec.roll_dir = js.at("roll_dir").get<Vec3>();
    s.segments.push_back(std::move(rec));
  }
  s.normalization.translation = j.at("normalization").at("translation").get<Vec3>();
  s.normalization.scale = j.at("normalization").at("scale").get<double>();
  return s;
}

}  // namespace vessel
