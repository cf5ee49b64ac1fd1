#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vessel/rng.hpp"

namespace vessel::ad {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of 64-bit reals. Rank 1 or 2 in practice; a vector
// is stored as [1, n].
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, double fill = 0.0);

  static Tensor row(std::vector<double> values);
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }
  std::size_t size() const { return data.size(); }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
  bool all_finite() const;
};

// Reverse-mode tape. Build a graph with the op methods, call backward() on a
// scalar node, then read grad(id). One backward per forward.
class Tape {
 public:
  int leaf(Tensor value, bool requires_grad = false);
  int constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const { return nodes_[id].grad; }

  void backward(int scalar_id);

  // elementwise; b may be a [1,n] row broadcast over a's rows
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double s);
  int add_scalar(int a, double s);
  int neg(int a) { return scale(a, -1.0); }

  int matmul(int a, int b);
  int transpose(int a);
  int concat(const std::vector<int>& ids, int axis);
  int slice_rows(int a, int r0, int r1);
  int slice_cols(int a, int c0, int c1);

  int tanh_(int a);
  int relu(int a);
  int softplus(int a);
  int exp_(int a);
  int log_(int a);
  int softmax(int a);                       // row-wise, numerically stable
  int layer_norm(int a, double eps = 1e-8); // row-wise normalize, no affine
  int sum(int a);                           // [1,1]
  int mean_rows(int a);                     // [1,cols]

  // mean over batch of logsumexp(logits[i]) - logits[i][label[i]]
  int cross_entropy(int logits, const std::vector<int>& labels);

  // softmax(q k^T / sqrt(d) + mask) v ; mask may be -1 for none
  int scaled_dot_attention(int q, int k, int v, int mask = -1);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;  // accumulates into input grads
  };
  std::vector<Node> nodes_;

  int push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> bw);
  void accumulate(int id, const Tensor& g);
  friend struct TapeAccess;
};

// ---------------------------------------------------------------------------
// Parameters + optimizer
// ---------------------------------------------------------------------------

class ParameterStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  // Glorot-uniform weight init; zero biases are created via create().
  Tensor& create_glorot(const std::string& name, int fan_in, int fan_out, Rng& rng);

  const std::map<std::string, Tensor>& tensors() const { return values_; }
  std::int64_t step() const { return step_; }

  void adam_step(const std::map<std::string, Tensor>& grads, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8);

  // "VFPARAMS" magic, length-prefixed JSON manifest, little-endian f64 payload.
  void save(const std::string& path) const;
  static ParameterStore load(const std::string& path);

 private:
  struct AdamState {
    Tensor m, v;
  };
  std::map<std::string, Tensor> values_;
  std::map<std::string, AdamState> adam_;
  std::map<std::string, bool> params_;  // insertion = existence
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Composite ops and utilities
// ---------------------------------------------------------------------------

namespace ops {

// y = x W + b
int dense(Tape& t, int x, int w, int b);

// mean over all elements of (pred - target)^2; target is a constant
int mse(Tape& t, int pred, const Tensor& target);

// masked mean: sum(mask * (pred-target)^2) / count
int mse_masked(Tape& t, int pred, const Tensor& target, const Tensor& mask, double count);

// z = mu + exp(logvar/2) * eps, eps ~ N(0,I) from rng; grads flow to mu/logvar
int reparameterize(Tape& t, int mu, int logvar, Rng& rng);

// KL(q || p) for diagonal Gaussians, summed over dimensions
int kl_diag_gaussian(Tape& t, int mu_q, int logvar_q, int mu_p, int logvar_p);

}  // namespace ops

// Central finite differences vs tape gradients over every parameter entry.
// loss_value re-runs the forward pass; loss_grads runs forward+backward once.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
};
GradCheckResult grad_check(
    const std::function<double(ParameterStore&)>& loss_value,
    const std::function<std::map<std::string, Tensor>(ParameterStore&)>& loss_grads,
    ParameterStore& store, double h = 1e-5);

}  // namespace vessel::ad
