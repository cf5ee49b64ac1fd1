#include "vessel/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace vessel {

using ad::Tape;
using ad::Tensor;

void SegVaeConfig::validate() const {
  if (token_dim != 4) throw Stage2Error("token_dim must be 4");
  if (model_dim <= 0 || n_layers <= 0 || n_heads <= 0 || latent_dim <= 0)
    throw Stage2Error("dimensions must be positive");
  if (model_dim % n_heads != 0) throw Stage2Error("model_dim must be divisible by n_heads");
  if (max_len < 2) throw Stage2Error("max_len must be >= 2");
  if (w_recon < 0 || w_len < 0 || w_kl < 0) throw Stage2Error("loss weights must be >= 0");
  if (lr <= 0) throw Stage2Error("lr must be positive");
  if (epochs < 0 || batch_size <= 0) throw Stage2Error("bad training budget");
}

std::string SegVaeConfig::to_json() const {
  nlohmann::json j;
  j["token_dim"] = token_dim;
  j["model_dim"] = model_dim;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["latent_dim"] = latent_dim;
  j["max_len"] = max_len;
  j["w_recon"] = w_recon;
  j["w_len"] = w_len;
  j["w_kl"] = w_kl;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  return j.dump(2);
}

SegVaeConfig SegVaeConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SegVaeConfig c;
  c.token_dim = j.value("token_dim", c.token_dim);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.w_recon = j.value("w_recon", c.w_recon);
  c.w_len = j.value("w_len", c.w_len);
  c.w_kl = j.value("w_kl", c.w_kl);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

SegVaeModel SegVaeModel::init(const SegVaeConfig& cfg, Rng& rng) {
  cfg.validate();
  SegVaeModel m;
  m.cfg = cfg;
  auto& s = m.store;
  int D = cfg.model_dim, L = cfg.latent_dim, F = 2 * cfg.model_dim;
  auto dense_params = [&](const std::string& name, int in, int out) {
    s.create_glorot(name + ".w", in, out, rng);
    s.create(name + ".b", {1, out});
  };
  auto stack = [&](const std::string& prefix, int n) {
    for (int i = 0; i < n; ++i) {
      std::string p = prefix + std::to_string(i);
      dense_params(p + ".attn.q", D, D);
      dense_params(p + ".attn.k", D, D);
      dense_params(p + ".attn.v", D, D);
      dense_params(p + ".attn.o", D, D);
      dense_params(p + ".ff1", D, F);
      dense_params(p + ".ff2", F, D);
    }
  };
  dense_params("s2.embed", cfg.token_dim, D);
  dense_params("s2.cond", 4, D);
  s.create_glorot("s2.agg", 1, D, rng);
  stack("s2.enc", cfg.n_layers);
  dense_params("s2.mu", D, L);
  dense_params("s2.logvar", D, L);
  dense_params("s2.prior1", 4, D);
  dense_params("s2.prior2", D, 2 * L);
  s.create_glorot("s2.query", cfg.max_len, D, rng);
  dense_params("s2.zdec", L, D);
  stack("s2.dec", cfg.n_layers);
  dense_params("s2.out", D, 4);
  dense_params("s2.len", D, cfg.max_len - 1);
  return m;
}

void SegVaeModel::save(const std::string& params_path, const std::string& config_path) const {
  store.save(params_path);
  std::ofstream f(config_path);
  if (!f) throw Stage2Error("cannot write " + config_path);
  f << cfg.to_json() << "\n";
}

SegVaeModel SegVaeModel::load(const std::string& params_path, const std::string& config_path) {
  std::ifstream f(config_path);
  if (!f) throw Stage2Error("cannot read " + config_path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  SegVaeModel m;
  m.cfg = SegVaeConfig::from_json(text);
  m.store = ad::ParameterStore::load(params_path);
  return m;
}

std::vector<SegmentExample> segment_examples(const std::vector<TrainingSample>& samples) {
  std::vector<SegmentExample> out;
  for (const auto& s : samples)
    for (const auto& rec : s.segments)
      out.push_back({rec.canonical, s.key_graph.nodes[rec.child].desc});
  return out;
}

namespace {

// tape leaves for all parameters, keyed by name
struct Bound {
  Tape& tape;
  std::map<std::string, int> id;

  Bound(Tape& t, const ad::ParameterStore& store) : tape(t) {
    for (const auto& [name, tensor] : store.tensors()) id[name] = t.leaf(tensor, true);
  }
  int dense(int x, const std::string& name) {
    return ad::ops::dense(tape, x, id.at(name + ".w"), id.at(name + ".b"));
  }
};

Tensor sinusoidal_table(int rows, int dim) {
  Tensor t({rows, dim});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < dim; ++j) {
      double angle = i * std::exp(-std::log(10000.0) * (2.0 * (j / 2)) / dim);
      t.at(i, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return t;
}

int multi_head_attention(Bound& b, int x, const std::string& prefix, int n_heads, int mask) {
  Tape& t = b.tape;
  int q = b.dense(x, prefix + ".q");
  int k = b.dense(x, prefix + ".k");
  int v = b.dense(x, prefix + ".v");
  int head_dim = t.value(q).cols() / n_heads;
  std::vector<int> heads;
  for (int h = 0; h < n_heads; ++h) {
    int c0 = h * head_dim, c1 = c0 + head_dim;
    heads.push_back(t.scaled_dot_attention(t.slice_cols(q, c0, c1), t.slice_cols(k, c0, c1),
                                           t.slice_cols(v, c0, c1), mask));
  }
  return b.dense(t.concat(heads, 1), prefix + ".o");
}

// pre-norm transformer block; mask = -1 for none
int transformer_block(Bound& b, int x, const std::string& prefix, int n_heads, int mask) {
  Tape& t = b.tape;
  x = t.add(x, multi_head_attention(b, t.layer_norm(x), prefix + ".attn", n_heads, mask));
  int f = b.dense(t.relu(b.dense(t.layer_norm(x), prefix + ".ff1")), prefix + ".ff2");
  return t.add(x, f);
}

int descriptor_row(Tape& t, const GeometricDescriptor& C) {
  return t.constant(Tensor::row({C.ell, C.delta, C.kappa, static_cast<double>(C.rho)}));
}

// encoder forward; returns {mu_id, logvar_id}
std::pair<int, int> encode_on_tape(Bound& b, const VesselSegment& seg,
                                   const GeometricDescriptor& C, const SegVaeConfig& cfg,
                                   int pad_to, double pad_value) {
  Tape& t = b.tape;
  int n = seg.size();
  if (n < 2) throw Stage2Error("segment needs at least 2 points");
  if (n > cfg.max_len) throw Stage2Error("segment length " + std::to_string(n) +
                                         " exceeds max_len " + std::to_string(cfg.max_len));
  int padded = pad_to < 0 ? n : pad_to;
  if (padded < n || padded > cfg.max_len) throw Stage2Error("invalid pad_to");
  Tensor tok({padded, 4}, pad_value);
  for (int i = 0; i < n; ++i) {
    tok.at(i, 0) = seg.points[i].pos[0];
    tok.at(i, 1) = seg.points[i].pos[1];
    tok.at(i, 2) = seg.points[i].pos[2];
    tok.at(i, 3) = seg.points[i].radius;
  }
  int tokens = b.dense(t.constant(tok), "s2.embed");
  Tensor pos = sinusoidal_table(padded, cfg.model_dim);
  tokens = t.add(tokens, t.constant(pos));
  int cond = b.dense(descriptor_row(t, C), "s2.cond");
  int x = t.concat({b.id.at("s2.agg"), cond, tokens}, 0);  // [padded + 2, D]

  int mask = -1;
  if (padded > n) {
    Tensor m({1, padded + 2});
    for (int j = 2 + n; j < padded + 2; ++j) m.at(0, j) = -1e9;
    mask = t.constant(m);
  }
  for (int i = 0; i < cfg.n_layers; ++i)
    x = transformer_block(b, x, "s2.enc" + std::to_string(i), cfg.n_heads, mask);
  int agg = t.slice_rows(t.layer_norm(x), 0, 1);
  return {b.dense(agg, "s2.mu"), b.dense(agg, "s2.logvar")};
}

std::pair<int, int> prior_on_tape(Bound& b, const GeometricDescriptor& C,
                                  const SegVaeConfig& cfg) {
  Tape& t = b.tape;
  int h = b.dense(t.tanh_(b.dense(descriptor_row(t, C), "s2.prior1")), "s2.prior2");
  return {t.slice_cols(h, 0, cfg.latent_dim), t.slice_cols(h, cfg.latent_dim, 2 * cfg.latent_dim)};
}

// decoder forward with endpoint forcing at force_index; returns {points, len_logits}
std::pair<int, int> decode_on_tape(Bound& b, int z, const GeometricDescriptor& C,
                                   const SegVaeConfig& cfg, int force_index) {
  Tape& t = b.tape;
  int x = t.add(t.add(b.id.at("s2.query"), b.dense(z, "s2.zdec")),
                b.dense(descriptor_row(t, C), "s2.cond"));
  for (int i = 0; i < cfg.n_layers; ++i)
    x = transformer_block(b, x, "s2.dec" + std::to_string(i), cfg.n_heads, -1);
  int h = t.layer_norm(x);
  int out = b.dense(h, "s2.out");  // [max_len, 4]
  int pos = t.slice_cols(out, 0, 3);
  int radius = t.softplus(t.slice_cols(out, 3, 4));
  // canonical-frame forcing: zero out the endpoints and add back (1,0,0)
  Tensor keep({cfg.max_len, 3}, 1.0), endpoint({cfg.max_len, 3});
  for (int c = 0; c < 3; ++c) keep.at(0, c) = keep.at(force_index, c) = 0.0;
  endpoint.at(force_index, 0) = 1.0;
  pos = t.add(t.mul(pos, t.constant(keep)), t.constant(endpoint));
  int points = t.concat({pos, radius}, 1);
  int len_logits = b.dense(t.mean_rows(h), "s2.len");
  return {points, len_logits};
}

int argmax_row(const Tensor& t) {
  int best = 0;
  for (int j = 1; j < t.cols(); ++j)
    if (t.at(0, j) > t.at(0, best)) best = j;
  return best;
}

}  // namespace

SegLatent encode_segment(const VesselSegment& seg, const GeometricDescriptor& C,
                         const SegVaeModel& model, int pad_to, double pad_value) {
  Tape tape;
  Bound b(tape, model.store);
  auto [mu, logvar] = encode_on_tape(b, seg, C, model.cfg, pad_to, pad_value);
  return {tape.value(mu), tape.value(logvar)};
}

SegLatent prior_net(const GeometricDescriptor& C, const SegVaeModel& model) {
  Tape tape;
  Bound b(tape, model.store);
  auto [mu, logvar] = prior_on_tape(b, C, model.cfg);
  return {tape.value(mu), tape.value(logvar)};
}

DecodedSegment decode_segment(const ad::Tensor& z, const GeometricDescriptor& C,
                              const SegVaeModel& model) {
  const auto& cfg = model.cfg;
  Tape tape;
  Bound b(tape, model.store);
  int zc = tape.constant(z);
  // first pass only to read the predicted length, then force that endpoint
  auto probe = decode_on_tape(b, zc, C, cfg, cfg.max_len - 1);
  int length = argmax_row(tape.value(probe.second)) + 2;

  Tape tape2;
  Bound b2(tape2, model.store);
  auto [points, len_logits] = decode_on_tape(b2, tape2.constant(z), C, cfg, length - 1);
  DecodedSegment out;
  out.points = tape2.value(points);
  out.length_logits = tape2.value(len_logits);
  out.predicted_length = length;
  return out;
}

SegVaeLoss segvae_loss(const SegmentExample& ex, const SegVaeModel& model, Rng& rng,
                       std::map<std::string, Tensor>* grads) {
  const auto& cfg = model.cfg;
  int n = ex.seg.size();

  Tape tape;
  Bound b(tape, model.store);
  auto [mu, logvar] = encode_on_tape(b, ex.seg, ex.desc, cfg, -1, 0.0);
  auto [mu_p, logvar_p] = prior_on_tape(b, ex.desc, cfg);
  int z = ad::ops::reparameterize(tape, mu, logvar, rng);
  auto [points, len_logits] = decode_on_tape(b, z, ex.desc, cfg, n - 1);

  Tensor target({cfg.max_len, 4}), mask({cfg.max_len, 4});
  for (int i = 0; i < n; ++i) {
    target.at(i, 0) = ex.seg.points[i].pos[0];
    target.at(i, 1) = ex.seg.points[i].pos[1];
    target.at(i, 2) = ex.seg.points[i].pos[2];
    target.at(i, 3) = ex.seg.points[i].radius;
    for (int c = 0; c < 4; ++c) mask.at(i, c) = 1.0;
  }
  int recon = ad::ops::mse_masked(tape, points, target, mask, 4.0 * n);
  int len_ce = tape.cross_entropy(len_logits, {n - 2});
  int kl = ad::ops::kl_diag_gaussian(tape, mu, logvar, mu_p, logvar_p);
  int total = tape.add(tape.add(tape.scale(recon, cfg.w_recon), tape.scale(len_ce, cfg.w_len)),
                       tape.scale(kl, cfg.w_kl));

  SegVaeLoss out;
  out.recon_mse = tape.value(recon).data[0];
  out.len_ce = tape.value(len_ce).data[0];
  out.kl = tape.value(kl).data[0];
  out.total = tape.value(total).data[0];
  if (grads) {
    tape.backward(total);
    for (const auto& [name, id] : b.id) {
      const Tensor& g = tape.grad(id);
      if (g.data.empty()) continue;
      auto it = grads->find(name);
      if (it == grads->end()) {
        (*grads)[name] = g;
      } else {
        for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
      }
    }
  }
  return out;
}

std::vector<Stage2LogRow> train_stage2(const std::vector<SegmentExample>& dataset,
                                       SegVaeModel& model) {
  if (dataset.empty()) throw Stage2Error("empty dataset");
  const auto& cfg = model.cfg;
  Rng rng(cfg.seed);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Stage2LogRow> log;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic Fisher-Yates shuffle
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);

    Stage2LogRow row;
    row.epoch = epoch;
    row.lr = cfg.lr;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::map<std::string, Tensor> grads;
      SegVaeLoss batch;
      for (std::size_t i = start; i < end; ++i) {
        SegVaeLoss l = segvae_loss(dataset[order[i]], model, rng, &grads);
        batch.total += l.total;
        batch.recon_mse += l.recon_mse;
        batch.len_ce += l.len_ce;
        batch.kl += l.kl;
      }
      double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [name, g] : grads)
        for (double& x : g.data) x *= inv;
      model.store.adam_step(grads, cfg.lr);
      row.total += batch.total * inv;
      row.recon_mse += batch.recon_mse * inv;
      row.len_ce += batch.len_ce * inv;
      row.kl += batch.kl * inv;
      ++n_batches;
    }
    row.total /= n_batches;
    row.recon_mse /= n_batches;
    row.len_ce /= n_batches;
    row.kl /= n_batches;
    log.push_back(row);
  }
  return log;
}

void write_stage2_log(const std::string& path, const std::vector<Stage2LogRow>& rows) {
  std::ofstream f(path);
  if (!f) throw Stage2Error("cannot write " + path);
  f << "epoch,total,recon_mse,len_ce,kl,lr\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.epoch, r.total,
                  r.recon_mse, r.len_ce, r.kl, r.lr);
    f << line;
  }
}

VesselSegment sample_segment(const GeometricDescriptor& C, const SegVaeModel& model, Rng& rng) {
  Tape tape;
  Bound b(tape, model.store);
  auto [mu_p, logvar_p] = prior_on_tape(b, C, model.cfg);
  int z = ad::ops::reparameterize(tape, mu_p, logvar_p, rng);
  DecodedSegment d = decode_segment(tape.value(z), C, model);

  VesselSegment seg;
  for (int i = 0; i < d.predicted_length; ++i) {
    SegPoint p;
    p.pos = {d.points.at(i, 0), d.points.at(i, 1), d.points.at(i, 2)};
    p.radius = d.points.at(i, 3);
    seg.points.push_back(p);
  }
  return seg;
}

}  // namespace vessel
