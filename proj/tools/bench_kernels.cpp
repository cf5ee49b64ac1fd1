// Throughput comparison of the serial reference kernels vs their OpenMP
// versions, and a bit-identity spot check on the same inputs.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "vessel/parallel.hpp"
#include "vessel/rng.hpp"

using namespace vessel;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds(const std::function<void()>& fn, int reps) {
  auto t0 = clock_type::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(clock_type::now() - t0).count() / reps;
}

void fill(std::vector<double>& v, Rng& rng) {
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
}

void report(const char* name, double serial_s, double omp_s, bool identical) {
  std::printf("%-14s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   identical %s\n", name,
              serial_s * 1e3, omp_s * 1e3, serial_s / omp_s, identical ? "yes" : "NO");
}

}  // namespace

int main() {
  Rng rng(42);

  {
    const int m = 256, k = 256, n = 256;
    std::vector<double> a(m * k), b(k * n), c1(m * n), c2(m * n);
    fill(a, rng);
    fill(b, rng);
    double ts = seconds([&] { kern::matmul_serial(a.data(), b.data(), c1.data(), m, k, n); }, 5);
    double tp = seconds([&] { kern::matmul_omp(a.data(), b.data(), c2.data(), m, k, n); }, 5);
    report("matmul", ts, tp, std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);
  }
  {
    const int m = 256, k = 256, n = 256;
    std::vector<double> a(m * k), b(n * k), c1(m * n), c2(m * n);
    fill(a, rng);
    fill(b, rng);
    double ts =
        seconds([&] { kern::matmul_nt_serial(a.data(), b.data(), c1.data(), m, k, n); }, 5);
    double tp = seconds([&] { kern::matmul_nt_omp(a.data(), b.data(), c2.data(), m, k, n); }, 5);
    report("matmul_nt", ts, tp, std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);
  }
  {
    const int m = 256, k = 256, n = 256;
    std::vector<double> a(m * k), b(m * n), c1(k * n, 0.0), c2(k * n, 0.0);
    fill(a, rng);
    fill(b, rng);
    double ts =
        seconds([&] { kern::matmul_tn_acc_serial(a.data(), b.data(), c1.data(), m, k, n); }, 5);
    double tp =
        seconds([&] { kern::matmul_tn_acc_omp(a.data(), b.data(), c2.data(), m, k, n); }, 5);
    // accumulating kernel: compare after equal rep counts
    report("matmul_tn_acc", ts, tp, std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);
  }
  {
    const std::size_t n_points = 64 * 64 * 64, n_caps = 64;
    std::vector<double> points(n_points * 3), out1(n_points), out2(n_points);
    fill(points, rng);
    std::vector<kern::Capsule> caps(n_caps);
    for (auto& c : caps)
      c = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
           rng.uniform(-1, 1), rng.uniform(-1, 1), 0.1, 0.2};
    double ts = seconds(
        [&] { kern::sdf_grid_serial(points.data(), n_points, caps.data(), n_caps, out1.data()); },
        3);
    double tp = seconds(
        [&] { kern::sdf_grid_omp(points.data(), n_points, caps.data(), n_caps, out2.data()); },
        3);
    report("sdf_grid", ts, tp, std::memcmp(out1.data(), out2.data(), out1.size() * 8) == 0);
  }
  {
    const std::size_t na = 4096, nb = 4096;
    std::vector<double> a(na * 3), b(nb * 3), out1(na), out2(na);
    fill(a, rng);
    fill(b, rng);
    double ts =
        seconds([&] { kern::nn_sqdist_serial(a.data(), na, b.data(), nb, out1.data()); }, 5);
    double tp = seconds([&] { kern::nn_sqdist_omp(a.data(), na, b.data(), nb, out2.data()); }, 5);
    report("nn_sqdist", ts, tp, std::memcmp(out1.data(), out2.data(), out1.size() * 8) == 0);
  }
  return 0;
}
