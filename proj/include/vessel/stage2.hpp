#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vessel/autodiff.hpp"
#include "vessel/core.hpp"
#include "vessel/preprocess.hpp"
#include "vessel/rng.hpp"

namespace vessel {

struct Stage2Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Conditional transformer VAE over canonical vessel segments. Each point
// [x, y, z, r] is one token; the latent is read off an aggregation token and
// regularized towards a learned conditional prior p(z | C).
struct SegVaeConfig {
  int token_dim = 4;
  int model_dim = 128;
  int n_layers = 4;
  int n_heads = 4;
  int latent_dim = 64;
  int max_len = 200;
  double w_recon = 1.0;
  double w_len = 1.0;
  double w_kl = 1.0;
  double lr = 2e-4;
  int epochs = 2000;
  int batch_size = 512;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SegVaeConfig from_json(const std::string& text);
};

struct SegVaeModel {
  SegVaeConfig cfg;
  ad::ParameterStore store;

  static SegVaeModel init(const SegVaeConfig& cfg, Rng& rng);
  void save(const std::string& params_path, const std::string& config_path) const;
  static SegVaeModel load(const std::string& params_path, const std::string& config_path);
};

// One supervised pair: a canonical segment and its edge descriptor.
struct SegmentExample {
  VesselSegment seg;
  GeometricDescriptor desc;
};
std::vector<SegmentExample> segment_examples(const std::vector<TrainingSample>& samples);

struct SegLatent {
  ad::Tensor mu, logvar;  // [1, latent]
};

// Tokens padded to pad_to (default: no padding) with `pad_value`; padded key
// positions carry an additive -1e9 attention mask, so outputs must not depend
// on pad_to or pad_value.
SegLatent encode_segment(const VesselSegment& seg, const GeometricDescriptor& C,
                         const SegVaeModel& model, int pad_to = -1, double pad_value = 0.0);

SegLatent prior_net(const GeometricDescriptor& C, const SegVaeModel& model);

struct DecodedSegment {
  ad::Tensor points;         // [max_len, 4], radius channel > 0
  ad::Tensor length_logits;  // [1, max_len - 1], classes are lengths 2..max_len
  int predicted_length = 2;  // argmax of length_logits, in [2, max_len]
};
// First point forced to (0, 0, 0, r0); the point at the predicted final index
// forced to (1, 0, 0) (canonical-frame guarantee).
DecodedSegment decode_segment(const ad::Tensor& z, const GeometricDescriptor& C,
                              const SegVaeModel& model);

struct SegVaeLoss {
  double total = 0.0, recon_mse = 0.0, len_ce = 0.0, kl = 0.0;
};
// Teacher-forced loss: masked reconstruction over the true length, length
// cross-entropy, KL(q(z|x,C) || p(z|C)). Accumulates grads when non-null.
SegVaeLoss segvae_loss(const SegmentExample& ex, const SegVaeModel& model, Rng& rng,
                       std::map<std::string, ad::Tensor>* grads = nullptr);

struct Stage2LogRow {
  int epoch = 0;
  double total = 0.0, recon_mse = 0.0, len_ce = 0.0, kl = 0.0, lr = 0.0;
};
std::vector<Stage2LogRow> train_stage2(const std::vector<SegmentExample>& dataset,
                                       SegVaeModel& model);
void write_stage2_log(const std::string& path, const std::vector<Stage2LogRow>& rows);

// z ~ p(z|C) via reparameterization; decoded points truncated to the
// predicted length. Output is canonical: origin start, (1,0,0) end.
VesselSegment sample_segment(const GeometricDescriptor& C, const SegVaeModel& model, Rng& rng);

}  // namespace vessel
