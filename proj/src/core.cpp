#include "vessel/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace vessel {

// ---------------------------------------------------------------------------
// SkeletonGraph
// ---------------------------------------------------------------------------

const SkelNode* SkeletonGraph::find(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

std::vector<std::string> SkeletonGraph::validate() const {
  std::vector<std::string> report;
  std::unordered_set<int> ids;
  for (const auto& n : nodes) {
    if (!ids.insert(n.id).second) report.push_back("duplicate node id " + std::to_string(n.id));
    if (!(n.radius > 0.0)) report.push_back("non-positive radius at node " + std::to_string(n.id));
    for (double c : n.pos)
      if (!std::isfinite(c)) {
        report.push_back("non-finite coordinate at node " + std::to_string(n.id));
        break;
      }
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& [a, b] : edges) {
    if (a == b) report.push_back("self-loop at node " + std::to_string(a));
    if (!ids.count(a) || !ids.count(b))
      report.push_back("edge (" + std::to_string(a) + "," + std::to_string(b) +
                       ") references missing node");
    auto key = std::minmax(a, b);
    if (!seen.insert(key).second)
      report.push_back("duplicate edge (" + std::to_string(key.first) + "," +
                       std::to_string(key.second) + ")");
  }
  if (!nodes.empty() && !connected()) report.push_back("graph is not connected");
  return report;
}

bool SkeletonGraph::connected() const {
  if (nodes.empty()) return true;
  std::unordered_map<int, std::vector<int>> adj;
  for (const auto& n : nodes) adj[n.id];
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::unordered_set<int> seen;
  std::vector<int> stack{nodes.front().id};
  seen.insert(nodes.front().id);
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (seen.insert(w).second) stack.push_back(w);
  }
  return seen.size() == nodes.size();
}

// ---------------------------------------------------------------------------
// KeyGraph
// ---------------------------------------------------------------------------

std::vector<int> KeyGraph::parent_map() const {
  std::vector<int> parent(nodes.size(), -1);
  for (int i = 0; i < node_count(); ++i)
    for (int c : children[i])
      if (c >= 0 && c < node_count()) parent[c] = i;
  return parent;
}

std::vector<int> KeyGraph::depth_map() const {
  std::vector<int> depth(nodes.size(), -1);
  std::vector<int> stack{root};
  if (root >= 0 && root < node_count()) depth[root] = 0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int c : children[v])
      if (c >= 0 && c < node_count() && depth[c] < 0) {
        depth[c] = depth[v] + 1;
        stack.push_back(c);
      }
  }
  return depth;
}

std::vector<int> KeyGraph::dfs_order() const {
  std::vector<int> order;
  order.reserve(nodes.size());
  std::vector<int> stack{root};
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    if (v < 0 || v >= node_count()) continue;
    order.push_back(v);
    // push right first so left is visited first
    if (children[v][1] >= 0) stack.push_back(children[v][1]);
    if (children[v][0] >= 0) stack.push_back(children[v][0]);
  }
  return order;
}

int KeyGraph::max_depth() const {
  auto d = depth_map();
  int m = 0;
  for (int x : d) m = std::max(m, x);
  return m;
}

int KeyGraph::leaf_count() const {
  int n = 0;
  for (const auto& c : children)
    if (c[0] < 0 && c[1] < 0) ++n;
  return n;
}

int KeyGraph::bifurcation_count() const {
  int n = 0;
  for (const auto& c : children)
    if (c[0] >= 0 && c[1] >= 0) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// RigidSimilarity
// ---------------------------------------------------------------------------

VesselSegment RigidSimilarity::apply(const VesselSegment& seg) const {
  VesselSegment out;
  out.points.reserve(seg.points.size());
  for (const auto& p : seg.points) out.points.push_back({apply_point(p.pos), apply_radius(p.radius)});
  return out;
}

RigidSimilarity RigidSimilarity::inverse() const {
  RigidSimilarity inv;
  inv.rotation = mat3_transpose(rotation);
  inv.scale = 1.0 / scale;
  inv.translation = (-1.0 / scale) * mat3_apply(inv.rotation, translation);
  return inv;
}

// ---------------------------------------------------------------------------
// Segment operations
// ---------------------------------------------------------------------------

static void require_segment(const VesselSegment& seg) {
  if (seg.size() < 2) throw InvalidSegmentError("segment needs at least 2 points");
}

double arc_length(const VesselSegment& seg) {
  require_segment(seg);
  double total = 0.0;
  for (int i = 1; i < seg.size(); ++i) total += norm(seg.points[i].pos - seg.points[i - 1].pos);
  return total;
}

double chord_length(const VesselSegment& seg) {
  require_segment(seg);
  return norm(seg.back().pos - seg.front().pos);
}

double mean_curvature(const VesselSegment& seg) {
  require_segment(seg);
  if (seg.size() == 2) return 0.0;
  double total_angle = 0.0;
  for (int i = 1; i + 1 < seg.size(); ++i) {
    Vec3 a = seg.points[i].pos - seg.points[i - 1].pos;
    Vec3 b = seg.points[i + 1].pos - seg.points[i].pos;
    double na = norm(a), nb = norm(b);
    if (na < 1e-12 || nb < 1e-12) throw InvalidSegmentError("degenerate zero-length step");
    // atan2 keeps full precision for near-zero turning angles; acos does not
    total_angle += std::atan2(norm(cross(a, b)), dot(a, b));
  }
  double len = arc_length(seg);
  return len > 0.0 ? total_angle / len : 0.0;
}

GeometricDescriptor compute_descriptor(const VesselSegment& seg, int depth) {
  GeometricDescriptor d;
  d.ell = arc_length(seg);
  d.delta = chord_length(seg);
  d.kappa = mean_curvature(seg);
  d.rho = depth;
  // guard against roundoff violating delta <= ell
  d.delta = std::min(d.delta, d.ell);
  return d;
}

std::optional<Vec3> max_deviation_dir(const VesselSegment& seg) {
  require_segment(seg);
  Vec3 origin = seg.front().pos;
  Vec3 u = normalized(seg.back().pos - origin);
  double best = 0.0;
  Vec3 best_offset{0, 0, 0};
  for (const auto& p : seg.points) {
    Vec3 rel = p.pos - origin;
    Vec3 off = rel - dot(rel, u) * u;
    double n = norm(off);
    if (n > best) {
      best = n;
      best_offset = off;
    }
  }
  double chord = norm(seg.back().pos - origin);
  if (best <= 1e-9 * std::max(1.0, chord)) return std::nullopt;
  return normalized(best_offset);
}

NormalizedSegment normalize_segment(const VesselSegment& seg) {
  require_segment(seg);
  double chord = chord_length(seg);
  if (chord <= 1e-9) throw DegenerateChordError("zero chord");

  Vec3 origin = seg.front().pos;
  Vec3 u = normalized(seg.back().pos - origin);
  auto dev = max_deviation_dir(seg);
  Vec3 w = dev ? *dev : any_orthogonal(u);

  // Frame rows: chord axis -> x, w -> z.
  Vec3 ez = w;
  Vec3 ey = normalized(cross(ez, u));
  Mat3 to_canon = mat3_from_rows(u, ey, ez);

  NormalizedSegment out;
  out.canonical.points.reserve(seg.points.size());
  double inv = 1.0 / chord;
  for (const auto& p : seg.points)
    out.canonical.points.push_back({inv * mat3_apply(to_canon, p.pos - origin), p.radius * inv});
  // Snap the endpoints exactly onto the canonical anchors.
  out.canonical.points.front().pos = {0, 0, 0};
  out.canonical.points.back().pos = {1, 0, 0};

  out.xform.rotation = mat3_transpose(to_canon);
  out.xform.scale = chord;
  out.xform.translation = origin;
  return out;
}

// ---------------------------------------------------------------------------
// Key-graph validation
// ---------------------------------------------------------------------------

std::vector<std::string> validate_key_graph(const KeyGraph& g) {
  std::vector<std::string> report;
  int n = g.node_count();
  if (n == 0) {
    report.push_back("empty graph");
    return report;
  }
  if (g.root < 0 || g.root >= n) {
    report.push_back("root id out of range");
    return report;
  }
  if (static_cast<int>(g.children.size()) != n) {
    report.push_back("children table size mismatch");
    return report;
  }
  std::vector<int> indegree(n, 0);
  for (int i = 0; i < n; ++i)
    for (int c : g.children[i]) {
      if (c < -1 || c >= n) {
        report.push_back("child id out of range at node " + std::to_string(i));
        continue;
      }
      if (c >= 0) ++indegree[c];
    }
  for (int i = 0; i < n; ++i) {
    if (i == g.root && indegree[i] != 0)
      report.push_back("root has a parent - not a tree");
    if (i != g.root && indegree[i] != 1)
      report.push_back("node " + std::to_string(i) + " has " + std::to_string(indegree[i]) +
                       " parents - not a tree");
  }
  auto depth = g.depth_map();
  for (int i = 0; i < n; ++i)
    if (depth[i] < 0) report.push_back("node " + std::to_string(i) + " unreachable from root");
  if (!report.empty()) return report;  // structural failure; skip attribute checks

  auto parent = g.parent_map();
  for (int i = 0; i < n; ++i) {
    const KeyNode& kn = g.nodes[i];
    double dn = norm(kn.dir);
    if (std::abs(dn) > 1e-6 && std::abs(dn - 1.0) > 1e-6)
      report.push_back("node " + std::to_string(i) + " dir norm " + std::to_string(dn));
    if (i == g.root && dn > 1e-6) report.push_back("root dir must be zero");
    const auto& d = kn.desc;
    if (d.ell < 0 || d.delta < 0 || d.kappa < 0 || d.rho < 0)
      report.push_back("node " + std::to_string(i) + " descriptor has negative entry");
    if (d.delta > d.ell + 1e-9)
      report.push_back("node " + std::to_string(i) + " chord exceeds arc length");
    if (std::abs(d.ell - d.delta) < 1e-9 && d.kappa > 1e-6)
      report.push_back("node " + std::to_string(i) + " straight segment with nonzero curvature");
    if (i != g.root && parent[i] >= 0) {
      double pc = norm(kn.pos - g.nodes[parent[i]].pos);
      if (std::abs(pc - d.delta) > 1e-6 * std::max(1.0, pc) + 1e-6)
        report.push_back("node " + std::to_string(i) + " delta " + std::to_string(d.delta) +
                         " inconsistent with parent distance " + std::to_string(pc));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

using json = nlohmann::json;

std::string skeleton_to_json(const SkeletonGraph& g) {
  json j;
  j["nodes"] = json::array();
  for (const auto& n : g.nodes)
    j["nodes"].push_back({{"id", n.id}, {"pos", n.pos}, {"radius", n.radius}});
  j["edges"] = json::array();
  for (const auto& [a, b] : g.edges) j["edges"].push_back({a, b});
  return j.dump();
}

SkeletonGraph skeleton_from_json(const std::string& text) {
  json j = json::parse(text);
  SkeletonGraph g;
  for (const auto& n : j.at("nodes")) {
    SkelNode sn;
    sn.id = n.at("id").get<int>();
    sn.pos = n.at("pos").get<Vec3>();
    sn.radius = n.at("radius").get<double>();
    g.nodes.push_back(sn);
  }
  for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  return g;
}

std::string key_graph_to_json(const KeyGraph& g) {
  json j;
  j["root"] = g.root;
  j["nodes"] = json::array();
  for (int i = 0; i < g.node_count(); ++i) {
    const auto& n = g.nodes[i];
    json jn{{"id", i},
            {"pos", n.pos},
            {"dir", n.dir},
            {"desc", {n.desc.ell, n.desc.delta, n.desc.kappa, static_cast<double>(n.desc.rho)}}};
    jn["left"] = g.children[i][0] >= 0 ? json(g.children[i][0]) : json(nullptr);
    jn["right"] = g.children[i][1] >= 0 ? json(g.children[i][1]) : json(nullptr);
    j["nodes"].push_back(jn);
  }
  return j.dump();
}

KeyGraph key_graph_from_json(const std::string& text) {
  json j = json::parse(text);
  KeyGraph g;
  g.root = j.at("root").get<int>();
  g.nodes.resize(j.at("nodes").size());
  g.children.assign(j.at("nodes").size(), {-1, -1});
  for (const auto& jn : j.at("nodes")) {
    int id = jn.at("id").get<int>();
    KeyNode n;
    n.pos = jn.at("pos").get<Vec3>();
    n.dir = jn.at("dir").get<Vec3>();
    auto d = jn.at("desc").get<std::array<double, 4>>();
    n.desc = {d[0], d[1], d[2], static_cast<int>(std::lround(d[3]))};
    g.nodes[id] = n;
    g.children[id][0] = jn.at("left").is_null() ? -1 : jn.at("left").get<int>();
    g.children[id][1] = jn.at("right").is_null() ? -1 : jn.at("right").get<int>();
  }
  return g;
}

}  // namespace vessel
