#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vessel/autodiff.hpp"
#include "vessel/core.hpp"
#include "vessel/rng.hpp"

namespace vessel {

struct Stage1Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Recursive VAE over binary key graphs. Node attributes are the 10-vector
// [pos, dir, ell, delta, kappa, rho].
struct RvaeConfig {
  int attr_dim = 10;
  int hidden_dim = 64;
  int latent_dim = 64;  // 512 at full scale
  int max_depth = 12;
  double w_attr = 1.0;
  double w_cls = 1.0;
  double w_kl = 1.0;
  double lr = 1e-3;
  double lr_decay = 0.8;  // multiplied in every lr_decay_every epochs
  int lr_decay_every = 100;
  int epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static RvaeConfig from_json(const std::string& text);
};

struct RvaeModel {
  RvaeConfig cfg;
  ad::ParameterStore store;

  static RvaeModel init(const RvaeConfig& cfg, Rng& rng);
  void save(const std::string& params_path, const std::string& config_path) const;
  static RvaeModel load(const std::string& params_path, const std::string& config_path);
};

struct EncodedLatent {
  ad::Tensor mu, logvar;  // [1, latent]
};
EncodedLatent encode_tree(const KeyGraph& kg, const RvaeModel& model);

struct DecodedTree {
  KeyGraph graph;  // raw decoded attributes, no projections applied
  std::vector<std::array<double, 4>> logits;  // {leaf, left, right, both} per node
};
DecodedTree decode_tree(const ad::Tensor& z, const RvaeModel& model, int max_depth);

struct RvaeLoss {
  double total = 0.0, attr_mse = 0.0, cls_ce = 0.0, kl = 0.0;
};
// Teacher-forced loss. When grads is non-null, accumulates d(total)/d(param)
// into it (created on first use), enabling batch accumulation.
RvaeLoss rvae_loss(const KeyGraph& kg, const RvaeModel& model, Rng& rng,
                   std::map<std::string, ad::Tensor>* grads = nullptr);

struct TrainLogRow {
  int epoch = 0;
  double total = 0.0, attr_mse = 0.0, cls_ce = 0.0, kl = 0.0, lr = 0.0;
};
std::vector<TrainLogRow> train_stage1(const std::vector<KeyGraph>& dataset, RvaeModel& model);
void write_training_log(const std::string& path, const std::vector<TrainLogRow>& rows);

// z ~ N(0, I); decoded graph with attributes projected to a valid key graph
// (dir renormalized, delta <= ell, kappa >= 0, positions re-derived from
// delta * dir so the validator's consistency checks hold).
KeyGraph sample_key_graph(const RvaeModel& model, Rng& rng, int max_depth);

// true topology classes {0 leaf, 1 left, 2 right, 3 both} in dfs order
std::vector<int> topology_classes(const KeyGraph& kg);

}  // namespace vessel
