#include "vessel/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vessel/parallel.hpp"

namespace vessel::ad {

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  data.assign(n, fill);
}

Tensor Tensor::row(std::vector<double> values) {
  Tensor t;
  t.shape = {1, static_cast<int>(values.size())};
  t.data = std::move(values);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

// ---------------------------------------------------------------------------
// Tape core
// ---------------------------------------------------------------------------

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> bw) {
  assert(value.all_finite() && "NaN/Inf in forward value");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
  for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
}

void Tape::backward(int scalar_id) {
  if (nodes_[scalar_id].value.size() != 1)
    throw DimensionError("backward: node is not scalar, shape " +
                         nodes_[scalar_id].value.shape_str());
  Node& out = nodes_[scalar_id];
  out.grad = Tensor(out.value.shape);
  out.grad.data[0] = 1.0;
  out.requires_grad = true;
  // Nodes are in topological order by construction.
  for (int id = scalar_id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.requires_grad && !n.grad.data.empty()) n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

struct TapeAccess {
  static bool needs_grad(const Tape& t, int id) { return t.nodes_[id].requires_grad; }
  static const Tensor& grad_of(const Tape& t, int id) { return t.nodes_[id].grad; }
};

static bool any_requires(const Tape& t, std::initializer_list<int> ids) {
  for (int id : ids)
    if (id >= 0 && TapeAccess::needs_grad(t, id)) return true;
  return false;
}

// b broadcast as a row over a's rows when b.rows()==1 and a.rows()>1
static bool row_broadcast(const Tensor& a, const Tensor& b) {
  return b.rows() == 1 && a.rows() > 1 && a.cols() == b.cols();
}

int Tape::add(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  bool bc = row_broadcast(ta, tb);
  if (!bc) check_same_shape(ta, tb, "add");
  Tensor out = ta;
  int cols = ta.cols();
  for (int r = 0; r < ta.rows(); ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) += bc ? tb.at(0, c) : tb.at(r, c);
  return push(std::move(out), any_requires(*this, {a, b}), [a, b, bc](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a, g);
    if (!bc) {
      t.accumulate(b, g);
    } else {
      Tensor gb(t.value(b).shape);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gb.at(0, c) += g.at(r, c);
      t.accumulate(b, gb);
    }
  });
}

int Tape::sub(int a, int b) { return add(a, scale(b, -1.0)); }

int Tape::mul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  bool bc = row_broadcast(ta, tb);
  if (!bc) check_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (int r = 0; r < ta.rows(); ++r)
    for (int c = 0; c < ta.cols(); ++c) out.at(r, c) *= bc ? tb.at(0, c) : tb.at(r, c);
  return push(std::move(out), any_requires(*this, {a, b}), [a, b, bc](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& ta = t.value(a);
    const Tensor& tb = t.value(b);
    Tensor ga(ta.shape);
    Tensor gb(tb.shape);
    for (int r = 0; r < ta.rows(); ++r)
      for (int c = 0; c < ta.cols(); ++c) {
        double bv = bc ? tb.at(0, c) : tb.at(r, c);
        ga.at(r, c) = g.at(r, c) * bv;
        if (bc)
          gb.at(0, c) += g.at(r, c) * ta.at(r, c);
        else
          gb.at(r, c) = g.at(r, c) * ta.at(r, c);
      }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

int Tape::scale(int a, double s) {
  Tensor out = value(a);
  for (double& v : out.data) v *= s;
  return push(std::move(out), any_requires(*this, {a}), [a, s](Tape& t, int self) {
    Tensor g = t.grad(self);
    for (double& v : g.data) v *= s;
    t.accumulate(a, g);
  });
}

int Tape::add_scalar(int a, double s) {
  Tensor out = value(a);
  for (double& v : out.data) v += s;
  return push(std::move(out), any_requires(*this, {a}),
              [a](Tape& t, int self) { t.accumulate(a, t.grad(self)); });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

int Tape::matmul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.cols() != tb.rows())
    throw DimensionError("matmul: incompatible " + ta.shape_str() + " x " + tb.shape_str());
  int m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  kern::matmul(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  return push(std::move(out), any_requires(*this, {a, b}), [a, b, m, k, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& ta = t.value(a);
    const Tensor& tb = t.value(b);
    if (TapeAccess::needs_grad(t, a)) {
      Tensor ga({m, k});
      kern::matmul_nt(g.data.data(), tb.data.data(), ga.data.data(), m, n, k);
      t.accumulate(a, ga);
    }
    if (TapeAccess::needs_grad(t, b)) {
      Tensor gb({k, n});
      kern::matmul_tn_acc(ta.data.data(), g.data.data(), gb.data.data(), m, k, n);
      t.accumulate(b, gb);
    }
  });
}

int Tape::transpose(int a) {
  const Tensor& ta = value(a);
  Tensor out({ta.cols(), ta.rows()});
  for (int r = 0; r < ta.rows(); ++r)
    for (int c = 0; c < ta.cols(); ++c) out.at(c, r) = ta.at(r, c);
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor ga(t.value(a).shape);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) ga.at(c, r) = g.at(r, c);
    t.accumulate(a, ga);
  });
}

int Tape::concat(const std::vector<int>& ids, int axis) {
  if (ids.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  int rows = value(ids[0]).rows(), cols = value(ids[0]).cols();
  int total = 0;
  for (int id : ids) {
    const Tensor& t = value(id);
    if (axis == 0 && t.cols() != cols)
      throw DimensionError("concat axis 0: column mismatch " + t.shape_str());
    if (axis == 1 && t.rows() != rows)
      throw DimensionError("concat axis 1: row mismatch " + t.shape_str());
    total += axis == 0 ? t.rows() : t.cols();
  }
  Tensor out(axis == 0 ? std::vector<int>{total, cols} : std::vector<int>{rows, total});
  int off = 0;
  for (int id : ids) {
    const Tensor& t = value(id);
    for (int r = 0; r < t.rows(); ++r)
      for (int c = 0; c < t.cols(); ++c) {
        if (axis == 0)
          out.at(off + r, c) = t.at(r, c);
        else
          out.at(r, off + c) = t.at(r, c);
      }
    off += axis == 0 ? t.rows() : t.cols();
  }
  bool rg = false;
  for (int id : ids) rg = rg || TapeAccess::needs_grad(*this, id);
  std::vector<int> captured = ids;
  return push(std::move(out), rg, [captured, axis](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    int off = 0;
    for (int id : captured) {
      const Tensor& tv = t.value(id);
      Tensor gi(tv.shape);
      for (int r = 0; r < tv.rows(); ++r)
        for (int c = 0; c < tv.cols(); ++c)
          gi.at(r, c) = axis == 0 ? g.at(off + r, c) : g.at(r, off + c);
      t.accumulate(id, gi);
      off += axis == 0 ? tv.rows() : tv.cols();
    }
  });
}

int Tape::slice_rows(int a, int r0, int r1) {
  const Tensor& ta = value(a);
  if (r0 < 0 || r1 > ta.rows() || r0 >= r1)
    throw DimensionError("slice_rows: bad range on " + ta.shape_str());
  Tensor out({r1 - r0, ta.cols()});
  for (int r = r0; r < r1; ++r)
    for (int c = 0; c < ta.cols(); ++c) out.at(r - r0, c) = ta.at(r, c);
  return push(std::move(out), any_requires(*this, {a}), [a, r0, r1](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor ga(t.value(a).shape);
    for (int r = r0; r < r1; ++r)
      for (int c = 0; c < ga.cols(); ++c) ga.at(r, c) = g.at(r - r0, c);
    t.accumulate(a, ga);
  });
}

int Tape::slice_cols(int a, int c0, int c1) {
  const Tensor& ta = value(a);
  if (c0 < 0 || c1 > ta.cols() || c0 >= c1)
    throw DimensionError("slice_cols: bad range on " + ta.shape_str());
  Tensor out({ta.rows(), c1 - c0});
  for (int r = 0; r < ta.rows(); ++r)
    for (int c = c0; c < c1; ++c) out.at(r, c - c0) = ta.at(r, c);
  return push(std::move(out), any_requires(*this, {a}), [a, c0, c1](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor ga(t.value(a).shape);
    for (int r = 0; r < ga.rows(); ++r)
      for (int c = c0; c < c1; ++c) ga.at(r, c) = g.at(r, c - c0);
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

int Tape::tanh_(int a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::tanh(v);
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    const Tensor& y = t.value(self);
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= 1.0 - y.data[i] * y.data[i];
    t.accumulate(a, g);
  });
}

int Tape::relu(int a) {
  Tensor out = value(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    const Tensor& x = t.value(a);
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (x.data[i] <= 0.0) g.data[i] = 0.0;
    t.accumulate(a, g);
  });
}

static double softplus_val(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}
static double sigmoid_val(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

int Tape::softplus(int a) {
  Tensor out = value(a);
  for (double& v : out.data) v = softplus_val(v);
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    const Tensor& x = t.value(a);
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= sigmoid_val(x.data[i]);
    t.accumulate(a, g);
  });
}

int Tape::exp_(int a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::exp(v);
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    const Tensor& y = t.value(self);
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= y.data[i];
    t.accumulate(a, g);
  });
}

int Tape::log_(int a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::log(v);
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    const Tensor& x = t.value(a);
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] /= x.data[i];
    t.accumulate(a, g);
  });
}

int Tape::softmax(int a) {
  const Tensor& ta = value(a);
  Tensor out = ta;
  for (int r = 0; r < ta.rows(); ++r) {
    double mx = -1e300;
    for (int c = 0; c < ta.cols(); ++c) mx = std::max(mx, ta.at(r, c));
    double s = 0.0;
    for (int c = 0; c < ta.cols(); ++c) {
      out.at(r, c) = std::exp(ta.at(r, c) - mx);
      s += out.at(r, c);
    }
    for (int c = 0; c < ta.cols(); ++c) out.at(r, c) /= s;
  }
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor ga(y.shape);
    for (int r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (int c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
      for (int c = 0; c < y.cols(); ++c) ga.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
    }
    t.accumulate(a, ga);
  });
}

int Tape::layer_norm(int a, double eps) {
  const Tensor& ta = value(a);
  int n = ta.cols();
  Tensor out(ta.shape);
  Tensor inv_std({ta.rows(), 1});
  for (int r = 0; r < ta.rows(); ++r) {
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += ta.at(r, c);
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      double d = ta.at(r, c) - mean;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(r, 0) = is;
    for (int c = 0; c < n; ++c) out.at(r, c) = (ta.at(r, c) - mean) * is;
  }
  return push(std::move(out), any_requires(*this, {a}),
              [a, n, inv_std](Tape& t, int self) {
                const Tensor& y = t.value(self);
                const Tensor& g = t.grad(self);
                Tensor ga(y.shape);
                for (int r = 0; r < y.rows(); ++r) {
                  double gmean = 0.0, gymean = 0.0;
                  for (int c = 0; c < n; ++c) {
                    gmean += g.at(r, c);
                    gymean += g.at(r, c) * y.at(r, c);
                  }
                  gmean /= n;
                  gymean /= n;
                  double is = inv_std.at(r, 0);
                  for (int c = 0; c < n; ++c)
                    ga.at(r, c) = is * (g.at(r, c) - gmean - y.at(r, c) * gymean);
                }
                t.accumulate(a, ga);
              });
}

int Tape::sum(int a) {
  const Tensor& ta = value(a);
  Tensor out({1, 1});
  for (double v : ta.data) out.data[0] += v;
  return push(std::move(out), any_requires(*this, {a}), [a](Tape& t, int self) {
    double g = t.grad(self).data[0];
    Tensor ga(t.value(a).shape, g);
    t.accumulate(a, ga);
  });
}

int Tape::mean_rows(int a) {
  const Tensor& ta = value(a);
  Tensor out({1, ta.cols()});
  for (int r = 0; r < ta.rows(); ++r)
    for (int c = 0; c < ta.cols(); ++c) out.at(0, c) += ta.at(r, c);
  for (double& v : out.data) v /= ta.rows();
  int rows = ta.rows();
  return push(std::move(out), any_requires(*this, {a}), [a, rows](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor ga(t.value(a).shape);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < g.cols(); ++c) ga.at(r, c) = g.at(0, c) / rows;
    t.accumulate(a, ga);
  });
}

int Tape::cross_entropy(int logits, const std::vector<int>& labels) {
  const Tensor& x = value(logits);
  int batch = x.rows(), k = x.cols();
  if (static_cast<int>(labels.size()) != batch)
    throw DimensionError("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw DimensionError("cross_entropy: label out of range");
  Tensor out({1, 1});
  double total = 0.0;
  for (int r = 0; r < batch; ++r) {
    double mx = -1e300;
    for (int c = 0; c < k; ++c) mx = std::max(mx, x.at(r, c));
    double s = 0.0;
    for (int c = 0; c < k; ++c) s += std::exp(x.at(r, c) - mx);
    total += mx + std::log(s) - x.at(r, labels[r]);
  }
  out.data[0] = total / batch;
  return push(std::move(out), any_requires(*this, {logits}),
              [logits, labels, batch, k](Tape& t, int self) {
                double g = t.grad(self).data[0] / batch;
                const Tensor& x = t.value(logits);
                Tensor ga(x.shape);
                for (int r = 0; r < batch; ++r) {
                  double mx = -1e300;
                  for (int c = 0; c < k; ++c) mx = std::max(mx, x.at(r, c));
                  double s = 0.0;
                  for (int c = 0; c < k; ++c) s += std::exp(x.at(r, c) - mx);
                  for (int c = 0; c < k; ++c)
                    ga.at(r, c) = g * (std::exp(x.at(r, c) - mx) / s - (c == labels[r] ? 1.0 : 0.0));
                }
                t.accumulate(logits, ga);
              });
}

int Tape::scaled_dot_attention(int q, int k, int v, int mask) {
  int d = value(q).cols();
  int scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  if (mask >= 0) scores = add(scores, mask);
  return matmul(softmax(scores), v);
}

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

Tensor& ParameterStore::create(const std::string& name, std::vector<int> shape) {
  if (params_.count(name)) throw std::runtime_error("parameter exists: " + name);
  params_[name] = true;
  values_[name] = Tensor(shape);
  adam_[name] = {Tensor(shape), Tensor(shape)};
  return values_[name];
}

Tensor& ParameterStore::create_glorot(const std::string& name, int fan_in, int fan_out, Rng& rng) {
  Tensor& t = create(name, {fan_in, fan_out});
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::runtime_error("no parameter: " + name);
  return it->second;
}
const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::runtime_error("no parameter: " + name);
  return it->second;
}

void ParameterStore::adam_step(const std::map<std::string, Tensor>& grads, double lr, double beta1,
                               double beta2, double eps) {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& [name, g] : grads) {
    Tensor& theta = get(name);
    if (!theta.same_shape(g))
      throw DimensionError("adam_step: gradient shape mismatch for " + name);
    AdamState& st = adam_[name];
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      st.m.data[i] = beta1 * st.m.data[i] + (1.0 - beta1) * g.data[i];
      st.v.data[i] = beta2 * st.v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
      double mhat = st.m.data[i] / bc1;
      double vhat = st.v.data[i] / bc2;
      theta.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void ParameterStore::save(const std::string& path) const {
  nlohmann::json manifest;
  manifest["step"] = step_;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const std::string& kind, const Tensor& t) {
    manifest["tensors"].push_back(
        {{"name", name}, {"kind", kind}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size() * sizeof(double);
  };
  for (const auto& [name, t] : values_) add_entry(name, "value", t);
  for (const auto& [name, st] : adam_) {
    add_entry(name, "adam_m", st.m);
    add_entry(name, "adam_v", st.v);
  }
  std::string mtext = manifest.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write("VFPARAMS", 8);
  std::uint64_t mlen = mtext.size();
  f.write(reinterpret_cast<const char*>(&mlen), 8);
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  auto write_payload = [&](const Tensor& t) {
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  };
  for (const auto& [name, t] : values_) write_payload(t);
  for (const auto& [name, st] : adam_) {
    write_payload(st.m);
    write_payload(st.v);
  }
}

ParameterStore ParameterStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "VFPARAMS", 8) != 0)
    throw std::runtime_error("bad parameter file magic in " + path);
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(mlen));
  nlohmann::json manifest = nlohmann::json::parse(mtext);

  ParameterStore store;
  store.step_ = manifest.at("step").get<std::int64_t>();
  std::streampos payload_start = f.tellg();
  for (const auto& e : manifest.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    std::string kind = e.at("kind").get<std::string>();
    Tensor t(e.at("shape").get<std::vector<int>>());
    f.seekg(payload_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("truncated parameter file " + path);
    if (kind == "value") {
      store.params_[name] = true;
      store.values_[name] = std::move(t);
    } else if (kind == "adam_m") {
      store.adam_[name].m = std::move(t);
    } else {
      store.adam_[name].v = std::move(t);
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// Composite ops
// ---------------------------------------------------------------------------

namespace ops {

int dense(Tape& t, int x, int w, int b) { return t.add(t.matmul(x, w), b); }

int mse(Tape& t, int pred, const Tensor& target) {
  int tgt = t.constant(target);
  int d = t.sub(pred, tgt);
  int sq = t.mul(d, d);
  return t.scale(t.sum(sq), 1.0 / static_cast<double>(target.size()));
}

int mse_masked(Tape& t, int pred, const Tensor& target, const Tensor& mask, double count) {
  int tgt = t.constant(target);
  int d = t.sub(pred, tgt);
  int sq = t.mul(d, d);
  int masked = t.mul(sq, t.constant(mask));
  return t.scale(t.sum(masked), 1.0 / count);
}

int reparameterize(Tape& t, int mu, int logvar, Rng& rng) {
  const Tensor& m = t.value(mu);
  check_same_shape(m, t.value(logvar), "reparameterize");
  Tensor eps(m.shape);
  for (double& v : eps.data) v = rng.normal();
  int sigma = t.exp_(t.scale(logvar, 0.5));
  return t.add(mu, t.mul(sigma, t.constant(eps)));
}

int kl_diag_gaussian(Tape& t, int mu_q, int logvar_q, int mu_p, int logvar_p) {
  check_same_shape(t.value(mu_q), t.value(logvar_q), "kl_diag_gaussian");
  check_same_shape(t.value(mu_q), t.value(mu_p), "kl_diag_gaussian");
  check_same_shape(t.value(mu_q), t.value(logvar_p), "kl_diag_gaussian");
  int d = t.sub(mu_q, mu_p);
  int t1 = t.sub(logvar_p, logvar_q);
  int t2 = t.exp_(t.sub(logvar_q, logvar_p));
  int t3 = t.mul(t.mul(d, d), t.exp_(t.neg(logvar_p)));
  int per_dim = t.add_scalar(t.add(t.add(t1, t2), t3), -1.0);
  return t.scale(t.sum(per_dim), 0.5);
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

GradCheckResult grad_check(
    const std::function<double(ParameterStore&)>& loss_value,
    const std::function<std::map<std::string, Tensor>(ParameterStore&)>& loss_grads,
    ParameterStore& store, double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
  std::map<std::string, Tensor> grads = loss_grads(store);
  GradCheckResult result;
  for (const auto& [name, tv] : store.tensors()) {
    const Tensor* g = nullptr;
    auto it = grads.find(name);
    if (it != grads.end()) g = &it->second;
    Tensor& theta = store.get(name);
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      double saved = theta.data[i];
      theta.data[i] = saved + h;
      double up = loss_value(store);
      theta.data[i] = saved - h;
      double down = loss_value(store);
      theta.data[i] = saved;
      double fd = (up - down) / (2.0 * h);
      double gt = g ? g->data[i] : 0.0;
      // the floor absorbs finite-difference rounding noise (~eps/h) for
      // parameters whose true gradient is zero
      double rel = std::abs(gt - fd) / std::max(1e-6, std::abs(gt) + std::abs(fd));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
      }
    }
  }
  return result;
}

}  // namespace vessel::ad
