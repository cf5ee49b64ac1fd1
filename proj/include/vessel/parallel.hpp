#pragma once

#include <cstddef>

// Data-parallel kernels used by the hot loops (dense matmul in the training
// stacks, SDF grid fill in meshing, nearest-neighbor scans in the metrics).
// Every kernel has a serial reference and an OpenMP version that partitions
// the output array by rows/elements, so both produce bit-identical results;
// tests assert that and tools/bench_kernels compares their throughput.

namespace vessel::kern {

// Global switch; defaults to on when compiled with OpenMP.
bool parallel_enabled();
void set_parallel_enabled(bool on);

// C[m,n] = A[m,k] * B[k,n]
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// C[m,n] = A[m,k] * B[n,k]^T
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);

// C[k,n] += A[m,k]^T * B[m,n]  (accumulating; used for weight gradients)
void matmul_tn_acc_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

// out[i] = min over segments j of capsule signed distance from points[i]
struct Capsule {
  double ax, ay, az, bx, by, bz, ra, rb;
};
void sdf_grid_serial(const double* points, std::size_t n_points, const Capsule* caps,
                     std::size_t n_caps, double* out);
void sdf_grid_omp(const double* points, std::size_t n_points, const Capsule* caps,
                  std::size_t n_caps, double* out);
void sdf_grid(const double* points, std::size_t n_points, const Capsule* caps,
              std::size_t n_caps, double* out);

// out[i] = min over j of squared distance from a[i] to b[j] (xyz triplets)
void nn_sqdist_serial(const double* a, std::size_t na, const double* b, std::size_t nb,
                      double* out);
void nn_sqdist_omp(const double* a, std::size_t na, const double* b, std::size_t nb, double* out);
void nn_sqdist(const double* a, std::size_t na, const double* b, std::size_t nb, double* out);

}  // namespace vessel::kern
