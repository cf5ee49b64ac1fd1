#include "vessel/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vessel::kern {

namespace {
#ifdef _OPENMP
bool g_parallel = true;
#else
bool g_parallel = false;
#endif
}  // namespace

bool parallel_enabled() { return g_parallel; }
void set_parallel_enabled(bool on) { g_parallel = on; }

// --------------------------------------------------------------------------
// matmul family. Row i of C is produced by exactly one thread with the same
// k-ordered accumulation as the serial kernel, so results are bit-identical.
// --------------------------------------------------------------------------

static inline void matmul_row(const double* a, const double* b, double* c, int k, int n, int i) {
  double* ci = c + static_cast<std::size_t>(i) * n;
  std::memset(ci, 0, sizeof(double) * n);
  const double* ai = a + static_cast<std::size_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    double av = ai[p];
    if (av == 0.0) continue;
    const double* bp = b + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, k, n, i);
}

void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, k, n, i);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (g_parallel && static_cast<long long>(m) * k * n > 32768)
    matmul_omp(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

static inline void matmul_nt_row(const double* a, const double* b, double* c, int k, int n, int i) {
  const double* ai = a + static_cast<std::size_t>(i) * k;
  double* ci = c + static_cast<std::size_t>(i) * n;
  for (int j = 0; j < n; ++j) {
    const double* bj = b + static_cast<std::size_t>(j) * k;
    double s = 0.0;
    for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
    ci[j] = s;
  }
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, k, n, i);
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, k, n, i);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  if (g_parallel && static_cast<long long>(m) * k * n > 32768)
    matmul_nt_omp(a, b, c, m, k, n);
  else
    matmul_nt_serial(a, b, c, m, k, n);
}

// Row r of C (length n) accumulates sum_i A[i,r] * B[i,:]; partitioned by r.
static inline void matmul_tn_acc_row(const double* a, const double* b, double* c, int m, int k,
                                     int n, int r) {
  double* cr = c + static_cast<std::size_t>(r) * n;
  for (int i = 0; i < m; ++i) {
    double av = a[static_cast<std::size_t>(i) * k + r];
    if (av == 0.0) continue;
    const double* bi = b + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) cr[j] += av * bi[j];
  }
}

void matmul_tn_acc_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int r = 0; r < k; ++r) matmul_tn_acc_row(a, b, c, m, k, n, r);
}

void matmul_tn_acc_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < k; ++r) matmul_tn_acc_row(a, b, c, m, k, n, r);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  if (g_parallel && static_cast<long long>(m) * k * n > 32768)
    matmul_tn_acc_omp(a, b, c, m, k, n);
  else
    matmul_tn_acc_serial(a, b, c, m, k, n);
}

// --------------------------------------------------------------------------
// Capsule SDF grid
// --------------------------------------------------------------------------

static inline double capsule_sdf(double px, double py, double pz, const Capsule& c) {
  double abx = c.bx - c.ax, aby = c.by - c.ay, abz = c.bz - c.az;
  double apx = px - c.ax, apy = py - c.ay, apz = pz - c.az;
  double ab2 = abx * abx + aby * aby + abz * abz;
  double t = ab2 > 0.0 ? (apx * abx + apy * aby + apz * abz) / ab2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double dx = apx - t * abx, dy = apy - t * aby, dz = apz - t * abz;
  double r = c.ra + t * (c.rb - c.ra);
  return std::sqrt(dx * dx + dy * dy + dz * dz) - r;
}

static inline double sdf_point(const double* p, const Capsule* caps, std::size_t n_caps) {
  double best = 1e300;
  for (std::size_t j = 0; j < n_caps; ++j)
    best = std::min(best, capsule_sdf(p[0], p[1], p[2], caps[j]));
  return best;
}

void sdf_grid_serial(const double* points, std::size_t n_points, const Capsule* caps,
                     std::size_t n_caps, double* out) {
  for (std::size_t i = 0; i < n_points; ++i) out[i] = sdf_point(points + 3 * i, caps, n_caps);
}

void sdf_grid_omp(const double* points, std::size_t n_points, const Capsule* caps,
                  std::size_t n_caps, double* out) {
  const long long n = static_cast<long long>(n_points);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) out[i] = sdf_point(points + 3 * i, caps, n_caps);
}

void sdf_grid(const double* points, std::size_t n_points, const Capsule* caps, std::size_t n_caps,
              double* out) {
  if (g_parallel && n_points * n_caps > 4096)
    sdf_grid_omp(points, n_points, caps, n_caps, out);
  else
    sdf_grid_serial(points, n_points, caps, n_caps, out);
}

// --------------------------------------------------------------------------
// Nearest-neighbor squared distances
// --------------------------------------------------------------------------

static inline double nn_point(const double* p, const double* b, std::size_t nb) {
  double best = 1e300;
  for (std::size_t j = 0; j < nb; ++j) {
    double dx = p[0] - b[3 * j], dy = p[1] - b[3 * j + 1], dz = p[2] - b[3 * j + 2];
    double d = dx * dx + dy * dy + dz * dz;
    if (d < best) best = d;
  }
  return best;
}

void nn_sqdist_serial(const double* a, std::size_t na, const double* b, std::size_t nb,
                      double* out) {
  for (std::size_t i = 0; i < na; ++i) out[i] = nn_point(a + 3 * i, b, nb);
}

void nn_sqdist_omp(const double* a, std::size_t na, const double* b, std::size_t nb, double* out) {
  const long long n = static_cast<long long>(na);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) out[i] = nn_point(a + 3 * i, b, nb);
}

void nn_sqdist(const double* a, std::size_t na, const double* b, std::size_t nb, double* out) {
  if (g_parallel && na * nb > 16384)
    nn_sqdist_omp(a, na, b, nb, out);
  else
    nn_sqdist_serial(a, na, b, nb, out);
}

}  // namespace vessel::kern
