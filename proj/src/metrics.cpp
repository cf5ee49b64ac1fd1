#include "vessel/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "json.hpp"

namespace vessel {

namespace {

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * norm(cross(b - a, c - a));
}

}  // namespace

PointCloud sample_points_from_mesh(const TriangleMesh& m, int n, Rng& rng) {
  if (n < 1) throw MetricsError("need at least one sample");
  if (m.triangles.empty()) throw MetricsError("empty mesh");
  std::vector<double> cum(m.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    const auto& t = m.triangles[i];
    total += triangle_area(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
    cum[i] = total;
  }
  if (total <= 0.0) throw MetricsError("zero-area mesh");

  PointCloud out;
  out.points.reserve(n);
  for (int i = 0; i < n; ++i) {
    double r = rng.uniform(0.0, total);
    std::size_t idx = std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    if (idx >= m.triangles.size()) idx = m.triangles.size() - 1;
    const auto& t = m.triangles[idx];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
    out.points.push_back(a + u * (b - a) + v * (c - a));
  }
  return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty()) throw MetricsError("empty point cloud");
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::max();
      for (const Vec3& q : to) best = std::min(best, dot(p - q, p - q));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return one_way(a.points, b.points) + one_way(b.points, a.points);
}

double jsd(const std::vector<PointCloud>& set_a, const std::vector<PointCloud>& set_b,
           int grid_res, long* clamped) {
  if (set_a.empty() || set_b.empty()) throw MetricsError("empty point-cloud set");
  if (grid_res < 1) throw MetricsError("grid_res must be positive");
  const std::size_t cells = static_cast<std::size_t>(grid_res) * grid_res * grid_res;

  auto histogram = [&](const std::vector<PointCloud>& set) {
    std::vector<double> h(cells, 0.0);
    double count = 0.0;
    for (const PointCloud& pc : set)
      for (const Vec3& p : pc.points) {
        std::size_t idx = 0;
        bool clipped = false;
        for (int d = 2; d >= 0; --d) {
          double t = (p[d] + 0.5) * grid_res;
          int c = static_cast<int>(std::floor(t));
          if (c < 0) {
            c = 0;
            clipped = true;
          }
          if (c >= grid_res) {
            c = grid_res - 1;
            clipped = p[d] > 0.5;  // the upper face itself is in range
          }
          idx = idx * grid_res + c;
        }
        if (clipped && clamped) ++*clamped;
        h[idx] += 1.0;
        count += 1.0;
      }
    if (count == 0.0) throw MetricsError("point-cloud set has no points");
    for (double& v : h) v /= count;
    return h;
  };

  std::vector<double> p = histogram(set_a), q = histogram(set_b);
  double out = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) out += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) out += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(out, 0.0);
}

// ---------------------------------------------------------------------------
// MMD over histograms
// ---------------------------------------------------------------------------

namespace {

// W1 between two histograms on a shared uniform grid
double emd_1d(const std::vector<double>& p, const std::vector<double>& q, double bin_width) {
  double cum = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i] - q[i];
    total += std::abs(cum);
  }
  return total * bin_width;
}

double gaussian_emd_kernel(const std::vector<double>& p, const std::vector<double>& q,
                           double bin_width, double sigma = 1.0) {
  double w = emd_1d(p, q, bin_width);
  return std::exp(-w * w / (2.0 * sigma * sigma));
}

double mmd_sq(const std::vector<std::vector<double>>& xs,
              const std::vector<std::vector<double>>& ys, double bin_width) {
  auto mean_kernel = [&](const std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& b) {
    double sum = 0.0;
    for (const auto& x : a)
      for (const auto& y : b) sum += gaussian_emd_kernel(x, y, bin_width);
    return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  double v = mean_kernel(xs, xs) + mean_kernel(ys, ys) - 2.0 * mean_kernel(xs, ys);
  return std::max(v, 0.0);
}

std::vector<int> graph_degrees(const SkeletonGraph& g) {
  std::vector<int> deg(g.nodes.size(), 0);
  std::map<int, int> id_to_index;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) id_to_index[g.nodes[i].id] = i;
  for (const auto& [a, b] : g.edges) {
    ++deg[id_to_index.at(a)];
    ++deg[id_to_index.at(b)];
  }
  return deg;
}

}  // namespace

double degree_mmd(const std::vector<SkeletonGraph>& a, const std::vector<SkeletonGraph>& b) {
  if (a.empty() || b.empty()) throw MetricsError("empty graph set");
  int max_deg = 0;
  std::vector<std::vector<int>> deg_a, deg_b;
  for (const auto& g : a) deg_a.push_back(graph_degrees(g));
  for (const auto& g : b) deg_b.push_back(graph_degrees(g));
  for (const auto& d : deg_a)
    for (int v : d) max_deg = std::max(max_deg, v);
  for (const auto& d : deg_b)
    for (int v : d) max_deg = std::max(max_deg, v);

  auto histograms = [&](const std::vector<std::vector<int>>& degs) {
    std::vector<std::vector<double>> out;
    for (const auto& d : degs) {
      std::vector<double> h(max_deg + 1, 0.0);
      for (int v : d) h[v] += 1.0;
      for (double& x : h) x /= static_cast<double>(d.size());
      out.push_back(std::move(h));
    }
    return out;
  };
  return mmd_sq(histograms(deg_a), histograms(deg_b), 1.0);
}

// ---------------------------------------------------------------------------
// Laplacian spectrum: Householder tridiagonalization + QL with implicit shifts
// ---------------------------------------------------------------------------

namespace {

// reduce symmetric a (n x n, row-major, destroyed) to tridiagonal d/e;
// e[i] couples rows i-1 and i (e[0] = 0)
void householder_tridiag(std::vector<double>& a, int n, std::vector<double>& d,
                         std::vector<double>& e) {
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  for (int i = n - 1; i >= 1; --i) {
    int l = i - 1;
    double h = 0.0, scale = 0.0;
    if (l > 0) {
      for (int k = 0; k <= l; ++k) scale += std::abs(A(i, k));
      if (scale == 0.0) {
        e[i] = A(i, l);
      } else {
        for (int k = 0; k <= l; ++k) {
          A(i, k) /= scale;
          h += A(i, k) * A(i, k);
        }
        double f = A(i, l);
        double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
        e[i] = scale * g;
        h -= f * g;
        A(i, l) = f - g;
        f = 0.0;
        for (int j = 0; j <= l; ++j) {
          g = 0.0;
          for (int k = 0; k <= j; ++k) g += A(j, k) * A(i, k);
          for (int k = j + 1; k <= l; ++k) g += A(k, j) * A(i, k);
          e[j] = g / h;
          f += e[j] * A(i, j);
        }
        double hh = f / (h + h);
        for (int j = 0; j <= l; ++j) {
          f = A(i, j);
          e[j] = g = e[j] - hh * f;
          for (int k = 0; k <= j; ++k) A(j, k) -= f * e[k] + g * A(i, k);
        }
      }
    } else {
      e[i] = A(i, l);
    }
    d[i] = h;
  }
  e[0] = 0.0;
  for (int i = 0; i < n; ++i) d[i] = A(i, i);
}

// QL iteration with implicit shifts on tridiagonal (d, e); eigenvalues in d
void ql_implicit(std::vector<double>& d, std::vector<double>& e, int n) {
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        double dd = std::abs(d[m]) + std::abs(d[m + 1]);
        if (std::abs(e[m]) <= DBL_EPSILON * dd) break;
      }
      if (m != l) {
        if (iter++ == 50) throw MetricsError("QL iteration cap exceeded");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        int i;
        for (i = m - 1; i >= l; --i) {
          double f = s * e[i];
          double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
        }
        if (r == 0.0 && i >= l) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

}  // namespace

std::vector<double> laplacian_spectrum(const SkeletonGraph& g) {
  int n = static_cast<int>(g.nodes.size());
  if (n == 0) throw MetricsError("empty graph");
  if (n > 2000) throw MetricsError("graph too large for dense eigensolve");
  std::map<int, int> id_to_index;
  for (int i = 0; i < n; ++i) id_to_index[g.nodes[i].id] = i;
  std::vector<int> deg(n, 0);
  for (const auto& [a, b] : g.edges) {
    ++deg[id_to_index.at(a)];
    ++deg[id_to_index.at(b)];
  }
  // L = I - D^{-1/2} A D^{-1/2}; isolated vertices get diagonal 0
  std::vector<double> L(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) L[static_cast<std::size_t>(i) * n + i] = deg[i] > 0 ? 1.0 : 0.0;
  for (const auto& [a, b] : g.edges) {
    int i = id_to_index.at(a), j = id_to_index.at(b);
    double w = -1.0 / std::sqrt(static_cast<double>(deg[i]) * deg[j]);
    L[static_cast<std::size_t>(i) * n + j] += w;
    L[static_cast<std::size_t>(j) * n + i] += w;
  }

  std::vector<double> d(n, 0.0), e(n, 0.0);
  if (n == 1) {
    d[0] = L[0];
  } else {
    householder_tridiag(L, n, d, e);
    ql_implicit(d, e, n);
  }
  for (double& v : d) v = std::clamp(v, 0.0, 2.0);
  std::sort(d.begin(), d.end());
  return d;
}

double spectral_mmd(const std::vector<SkeletonGraph>& a, const std::vector<SkeletonGraph>& b) {
  if (a.empty() || b.empty()) throw MetricsError("empty graph set");
  const int bins = 200;
  const double lo = 0.0, hi = 2.0, width = (hi - lo) / bins;
  auto histograms = [&](const std::vector<SkeletonGraph>& set) {
    std::vector<std::vector<double>> out;
    for (const auto& g : set) {
      std::vector<double> h(bins, 0.0);
      std::vector<double> spec = laplacian_spectrum(g);
      for (double v : spec) {
        int c = std::min(bins - 1, static_cast<int>(std::floor((v - lo) / width)));
        h[std::max(0, c)] += 1.0;
      }
      for (double& x : h) x /= static_cast<double>(spec.size());
      out.push_back(std::move(h));
    }
    return out;
  };
  return mmd_sq(histograms(a), histograms(b), width);
}

// ---------------------------------------------------------------------------
// Optimal transport
// ---------------------------------------------------------------------------

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Entropic OT cost <P, C> with uniform marginals, log-domain Sinkhorn.
// Epsilon annealing (halving from the cost scale down to eps) warm-starts the
// potentials; the final level stops at max_iters or marginal violation < tol.
double sinkhorn_cost(const std::vector<std::vector<double>>& C, double eps, int max_iters,
                     double tol) {
  int n = static_cast<int>(C.size());
  int m = static_cast<int>(C[0].size());
  double log_a = -std::log(static_cast<double>(n));
  double log_b = -std::log(static_cast<double>(m));
  std::vector<double> f(n, 0.0), g(m, 0.0), buf;

  double max_cost = 0.0;
  for (const auto& row : C)
    for (double v : row) max_cost = std::max(max_cost, v);
  std::vector<double> levels;
  for (double e = std::max(max_cost, eps); e > eps; e *= 0.5) levels.push_back(e);
  levels.push_back(eps);

  double residual = std::numeric_limits<double>::max();
  for (std::size_t li = 0; li < levels.size(); ++li) {
    double level_eps = levels[li];
    bool final_level = li + 1 == levels.size();
    int iters = final_level ? max_iters : 10;
    for (int it = 0; it < iters; ++it) {
      buf.assign(m, 0.0);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) buf[j] = (g[j] - C[i][j]) / level_eps + log_b;
        f[i] = -level_eps * log_sum_exp(buf);
      }
      buf.assign(n, 0.0);
      for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) buf[i] = (f[i] - C[i][j]) / level_eps + log_a;
        g[j] = -level_eps * log_sum_exp(buf);
      }
      if (!final_level) continue;
      // column marginals are exact after the g update; check rows
      residual = 0.0;
      for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < m; ++j)
          row += std::exp((f[i] + g[j] - C[i][j]) / eps + log_a + log_b);
        residual = std::max(residual, std::abs(row - std::exp(log_a)));
      }
      if (residual < tol) break;
    }
  }
  if (!std::isfinite(residual))
    throw MetricsError("Sinkhorn diverged; marginal residual " + std::to_string(residual));

  double cost = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      cost += std::exp((f[i] + g[j] - C[i][j]) / eps + log_a + log_b) * C[i][j];
  if (!std::isfinite(cost)) throw MetricsError("Sinkhorn produced a non-finite cost");
  return cost;
}

std::vector<std::vector<double>> distance_matrix(const std::vector<Vec3>& a,
                                                 const std::vector<Vec3>& b) {
  std::vector<std::vector<double>> C(a.size(), std::vector<double>(b.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) C[i][j] = norm(a[i] - b[j]);
  return C;
}

}  // namespace

double sinkhorn_divergence(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double eps,
                           int max_iters, double tol) {
  if (a.empty() || b.empty()) throw MetricsError("empty point set");
  if (eps <= 0.0) throw MetricsError("eps must be positive");
  // fixed argument order for exact symmetry
  auto less = [](const std::vector<Vec3>& u, const std::vector<Vec3>& w) {
    for (std::size_t i = 0; i < std::min(u.size(), w.size()); ++i)
      for (int d = 0; d < 3; ++d) {
        if (u[i][d] < w[i][d]) return true;
        if (u[i][d] > w[i][d]) return false;
      }
    return u.size() < w.size();
  };
  const std::vector<Vec3>* x = &a;
  const std::vector<Vec3>* y = &b;
  if (less(b, a)) std::swap(x, y);
  double ab = sinkhorn_cost(distance_matrix(*x, *y), eps, max_iters, tol);
  double aa = sinkhorn_cost(distance_matrix(*x, *x), eps, max_iters, tol);
  double bb = sinkhorn_cost(distance_matrix(*y, *y), eps, max_iters, tol);
  return std::max(ab - 0.5 * (aa + bb), 0.0);
}

namespace {

// n points stratified uniformly by arc length along the edges (deterministic)
std::vector<Vec3> sample_skeleton_points(const SkeletonGraph& g, int n) {
  std::map<int, Vec3> pos;
  for (const auto& node : g.nodes) pos[node.id] = node.pos;
  std::vector<double> len(g.edges.size(), 0.0);
  double total = 0.0;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    len[e] = norm(pos.at(g.edges[e].second) - pos.at(g.edges[e].first));
    total += len[e];
  }
  std::vector<Vec3> out;
  out.reserve(n);
  if (total <= 0.0 || g.edges.empty()) {
    for (int i = 0; i < n; ++i) out.push_back(g.nodes.front().pos);
    return out;
  }
  std::size_t e = 0;
  double consumed = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = (i + 0.5) / n * total;
    while (e + 1 < g.edges.size() && consumed + len[e] < s) consumed += len[e++];
    double t = len[e] > 0.0 ? (s - consumed) / len[e] : 0.0;
    const Vec3& p0 = pos.at(g.edges[e].first);
    const Vec3& p1 = pos.at(g.edges[e].second);
    out.push_back(p0 + std::clamp(t, 0.0, 1.0) * (p1 - p0));
  }
  return out;
}

void normalize_cloud(std::vector<Vec3>& pts) {
  Vec3 c{0, 0, 0};
  for (const Vec3& p : pts) c = c + p;
  c = (1.0 / pts.size()) * c;
  double rms = 0.0;
  for (Vec3& p : pts) {
    p = p - c;
    rms += dot(p, p);
  }
  rms = std::sqrt(rms / pts.size());
  if (rms > 0.0)
    for (Vec3& p : pts) p = (1.0 / rms) * p;
}

}  // namespace

double gwd(const SkeletonGraph& g_a, const SkeletonGraph& g_b, int n_samples, double eps) {
  if (!g_a.connected() || !g_b.connected()) throw MetricsError("gwd needs connected graphs");
  std::vector<Vec3> pa = sample_skeleton_points(g_a, n_samples);
  std::vector<Vec3> pb = sample_skeleton_points(g_b, n_samples);
  normalize_cloud(pa);
  normalize_cloud(pb);
  return sinkhorn_divergence(pa, pb, eps);
}

double hungarian_exact_ot(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  if (n == 0) throw MetricsError("empty cost matrix");
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != n) throw MetricsError("cost matrix must be square");
    for (double v : row)
      if (!std::isfinite(v)) throw MetricsError("cost matrix must be finite");
  }
  const double INF = std::numeric_limits<double>::max();
  // Kuhn's algorithm with potentials, 1-based bookkeeping
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = 0;
      double delta = INF;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost[p[j] - 1][j - 1];
  return total / n;
}

// ---------------------------------------------------------------------------
// Evaluation driver
// ---------------------------------------------------------------------------

namespace {

// fit into [-0.5, 0.5]^3: bounding-box center to origin, scale by max extent
void fit_unit_cube(PointCloud& pc) {
  Vec3 lo = pc.points.front(), hi = pc.points.front();
  for (const Vec3& p : pc.points)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  Vec3 center = 0.5 * (lo + hi);
  double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  double inv = extent > 0.0 ? 1.0 / extent : 1.0;
  for (Vec3& p : pc.points) p = inv * (p - center);
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["jsd"] = jsd;
  j["cd"] = cd;
  j["deg_mmd"] = deg_mmd;
  j["spec_mmd"] = spec_mmd;
  j["gwd"] = gwd;
  j["jsd_x1e3"] = jsd * 1e3;
  j["cd_x1e3"] = cd * 1e3;
  j["clamped_points"] = clamped_points;
  j["n_generated"] = n_generated;
  j["n_reference"] = n_reference;
  j["config"] = {{"points_per_mesh", config.points_per_mesh},
                 {"jsd_grid", config.jsd_grid},
                 {"paired", config.paired},
                 {"gwd_max_pairs", config.gwd_max_pairs},
                 {"gwd_samples", config.gwd_samples},
                 {"gwd_eps", config.gwd_eps},
                 {"seed", config.seed}};
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "metric        value\n"
                "JSD (x1e3)    %.3f\n"
                "CD  (x1e3)    %.3f\n"
                "Deg.          %.3f\n"
                "Spec.         %.3f\n"
                "GWD           %.3f\n",
                jsd * 1e3, cd * 1e3, deg_mmd, spec_mmd, gwd);
  return buf;
}

MetricsReport evaluate_sets(const std::vector<EvalItem>& generated,
                            const std::vector<EvalItem>& reference, const EvalConfig& cfg) {
  if (generated.empty() || reference.empty()) throw MetricsError("empty evaluation set");
  if (cfg.paired && generated.size() != reference.size())
    throw MetricsError("paired evaluation needs equal-size sets");

  MetricsReport report;
  report.config = cfg;
  report.n_generated = static_cast<int>(generated.size());
  report.n_reference = static_cast<int>(reference.size());

  // identical items on both sides get identical clouds (index-seeded rng)
  auto sample_side = [&](const std::vector<EvalItem>& items) {
    std::vector<PointCloud> clouds;
    for (std::size_t i = 0; i < items.size(); ++i) {
      Rng rng(cfg.seed + i);
      clouds.push_back(sample_points_from_mesh(items[i].mesh, cfg.points_per_mesh, rng));
    }
    return clouds;
  };
  std::vector<PointCloud> clouds_g = sample_side(generated);
  std::vector<PointCloud> clouds_r = sample_side(reference);

  std::vector<PointCloud> unit_g = clouds_g, unit_r = clouds_r;
  for (auto& pc : unit_g) fit_unit_cube(pc);
  for (auto& pc : unit_r) fit_unit_cube(pc);
  report.jsd = jsd(unit_g, unit_r, cfg.jsd_grid, &report.clamped_points);

  if (cfg.paired) {
    double sum = 0.0;
    for (std::size_t i = 0; i < clouds_g.size(); ++i) sum += chamfer(clouds_g[i], clouds_r[i]);
    report.cd = sum / clouds_g.size();
  } else {
    double sum = 0.0;
    for (const auto& cg : clouds_g) {
      double best = std::numeric_limits<double>::max();
      for (const auto& cr : clouds_r) best = std::min(best, chamfer(cg, cr));
      sum += best;
    }
    report.cd = sum / clouds_g.size();
  }

  std::vector<SkeletonGraph> skel_g, skel_r;
  for (const auto& it : generated) skel_g.push_back(it.skeleton);
  for (const auto& it : reference) skel_r.push_back(it.skeleton);
  report.deg_mmd = degree_mmd(skel_g, skel_r);
  report.spec_mmd = spectral_mmd(skel_g, skel_r);

  std::vector<std::pair<int, int>> pairs;
  if (cfg.paired) {
    for (std::size_t i = 0; i < generated.size(); ++i) pairs.push_back({(int)i, (int)i});
  } else {
    for (std::size_t i = 0; i < generated.size(); ++i)
      for (std::size_t j = 0; j < reference.size(); ++j) pairs.push_back({(int)i, (int)j});
  }
  if (static_cast<int>(pairs.size()) > cfg.gwd_max_pairs) {
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    for (int i = static_cast<int>(pairs.size()) - 1; i > 0; --i)
      std::swap(pairs[i], pairs[rng.uniform_int(0, i)]);
    pairs.resize(cfg.gwd_max_pairs);
  }
  double sum = 0.0;
  for (const auto& [i, j] : pairs)
    sum += gwd(generated[i].skeleton, reference[j].skeleton, cfg.gwd_samples, cfg.gwd_eps);
  report.gwd = sum / pairs.size();
  return report;
}

}  // namespace vessel
