#include "vessel/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "json.hpp"

namespace vessel {

using ad::Tape;
using ad::Tensor;

void RvaeConfig::validate() const {
  if (attr_dim != 10) throw Stage1Error("attr_dim must be 10");
  if (hidden_dim <= 0 || latent_dim <= 0 || max_depth <= 0)
    throw Stage1Error("dimensions must be positive");
  if (w_attr < 0 || w_cls < 0 || w_kl < 0) throw Stage1Error("loss weights must be >= 0");
  if (lr <= 0 || lr_decay <= 0 || lr_decay_every <= 0) throw Stage1Error("bad lr schedule");
  if (epochs < 0 || batch_size <= 0) throw Stage1Error("bad training budget");
}

std::string RvaeConfig::to_json() const {
  nlohmann::json j;
  j["attr_dim"] = attr_dim;
  j["hidden_dim"] = hidden_dim;
  j["latent_dim"] = latent_dim;
  j["max_depth"] = max_depth;
  j["w_attr"] = w_attr;
  j["w_cls"] = w_cls;
  j["w_kl"] = w_kl;
  j["lr"] = lr;
  j["lr_decay"] = lr_decay;
  j["lr_decay_every"] = lr_decay_every;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  return j.dump(2);
}

RvaeConfig RvaeConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RvaeConfig c;
  c.attr_dim = j.value("attr_dim", c.attr_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.w_attr = j.value("w_attr", c.w_attr);
  c.w_cls = j.value("w_cls", c.w_cls);
  c.w_kl = j.value("w_kl", c.w_kl);
  c.lr = j.value("lr", c.lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

RvaeModel RvaeModel::init(const RvaeConfig& cfg, Rng& rng) {
  cfg.validate();
  RvaeModel m;
  m.cfg = cfg;
  auto& s = m.store;
  int A = cfg.attr_dim, H = cfg.hidden_dim, L = cfg.latent_dim;
  auto dense_params = [&](const std::string& name, int in, int out) {
    s.create_glorot(name + ".w", in, out, rng);
    s.create(name + ".b", {1, out});
  };
  dense_params("s1.enc1", A + 2 * H, H);
  dense_params("s1.enc2", H, H);
  dense_params("s1.mu", H, L);
  dense_params("s1.logvar", H, L);
  dense_params("s1.root", L, H);
  dense_params("s1.cls", H, 4);
  dense_params("s1.left1", H, H);
  dense_params("s1.left2", H, A);
  dense_params("s1.right1", H, H);
  dense_params("s1.right2", H, A);
  dense_params("s1.child1", H + A, H);
  dense_params("s1.child2", H, H);
  return m;
}

void RvaeModel::save(const std::string& params_path, const std::string& config_path) const {
  store.save(params_path);
  std::ofstream f(config_path);
  if (!f) throw Stage1Error("cannot write " + config_path);
  f << cfg.to_json() << "\n";
}

RvaeModel RvaeModel::load(const std::string& params_path, const std::string& config_path) {
  std::ifstream f(config_path);
  if (!f) throw Stage1Error("cannot read " + config_path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  RvaeModel m;
  m.cfg = RvaeConfig::from_json(text);
  m.store = ad::ParameterStore::load(params_path);
  return m;
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
  int mlp_tanh(int x, const std::string& l1, const std::string& l2) {
    return tape.tanh_(dense(tape.tanh_(dense(x, l1)), l2));
  }
  int mlp_linear(int x, const std::string& l1, const std::string& l2) {
    return dense(tape.tanh_(dense(x, l1)), l2);
  }
};

std::vector<double> node_attr(const KeyNode& n) {
  return {n.pos[0],  n.pos[1],   n.pos[2],     n.dir[0],     n.dir[1],
          n.dir[2],  n.desc.ell, n.desc.delta, n.desc.kappa, static_cast<double>(n.desc.rho)};
}

// bottom-up hidden state, Eq. 1
int encode_node(const KeyGraph& kg, int node, Bound& b, int hidden_dim, int depth,
                int max_depth) {
  if (depth > max_depth) throw Stage1Error("tree depth exceeds max_depth");
  int zero = -1;
  auto child_hidden = [&](int c) {
    if (c < 0) {
      if (zero < 0) zero = b.tape.constant(Tensor({1, hidden_dim}));
      return zero;
    }
    return encode_node(kg, c, b, hidden_dim, depth + 1, max_depth);
  };
  int hl = child_hidden(kg.children[node][0]);
  int hr = child_hidden(kg.children[node][1]);
  int v = b.tape.constant(Tensor::row(node_attr(kg.nodes[node])));
  int cat = b.tape.concat({v, hl, hr}, 1);
  return b.mlp_tanh(cat, "s1.enc1", "s1.enc2");
}

}  // namespace

std::vector<int> topology_classes(const KeyGraph& kg) {
  std::vector<int> out;
  for (int i : kg.dfs_order()) {
    bool l = kg.children[i][0] >= 0, r = kg.children[i][1] >= 0;
    out.push_back(l && r ? 3 : (r ? 2 : (l ? 1 : 0)));
  }
  return out;
}

EncodedLatent encode_tree(const KeyGraph& kg, const RvaeModel& model) {
  auto problems = validate_key_graph(kg);
  if (!problems.empty()) throw Stage1Error("invalid key graph: " + problems.front());
  Tape tape;
  Bound b(tape, model.store);
  int h_root = encode_node(kg, kg.root, b, model.cfg.hidden_dim, 0, model.cfg.max_depth);
  int mu = b.dense(h_root, "s1.mu");
  int logvar = b.dense(h_root, "s1.logvar");
  return {tape.value(mu), tape.value(logvar)};
}

DecodedTree decode_tree(const Tensor& z, const RvaeModel& model, int max_depth) {
  Tape tape;
  Bound b(tape, model.store);
  int zc = tape.constant(z);
  int h_root = tape.tanh_(b.dense(zc, "s1.root"));

  DecodedTree out;
  auto read_attr = [&](int attr_id) {
    const Tensor& t = tape.value(attr_id);
    KeyNode n;
    n.pos = {t.at(0, 0), t.at(0, 1), t.at(0, 2)};
    n.dir = {t.at(0, 3), t.at(0, 4), t.at(0, 5)};
    n.desc.ell = t.at(0, 6);
    n.desc.delta = t.at(0, 7);
    n.desc.kappa = t.at(0, 8);
    n.desc.rho = static_cast<int>(std::lround(t.at(0, 9)));
    return n;
  };
  auto add_node = [&](const KeyNode& n, const Tensor& logits) {
    out.graph.nodes.push_back(n);
    out.graph.children.push_back({-1, -1});
    out.logits.push_back({logits.at(0, 0), logits.at(0, 1), logits.at(0, 2), logits.at(0, 3)});
    return static_cast<int>(out.graph.nodes.size()) - 1;
  };

  std::function<void(int, int, int)> expand = [&](int h, int node, int depth) {
    int cls = b.dense(h, "s1.cls");
    const Tensor& lg = tape.value(cls);
    out.logits[node] = {lg.at(0, 0), lg.at(0, 1), lg.at(0, 2), lg.at(0, 3)};
    int best = 0;
    for (int k = 1; k < 4; ++k)
      if (lg.at(0, k) > lg.at(0, best)) best = k;
    if (depth >= max_depth) best = 0;  // forced leaf at the depth cap
    bool want_left = best == 1 || best == 3;
    bool want_right = best == 2 || best == 3;
    auto grow = [&](bool right) {
      int attr = right ? b.mlp_linear(h, "s1.right1", "s1.right2")
                       : b.mlp_linear(h, "s1.left1", "s1.left2");
      int h_child = b.mlp_tanh(tape.concat({h, attr}, 1), "s1.child1", "s1.child2");
      int child = add_node(read_attr(attr), Tensor({1, 4}));
      out.graph.children[node][right ? 1 : 0] = child;
      expand(h_child, child, depth + 1);
    };
    if (want_left) grow(false);
    if (want_right) grow(true);
  };

  int root_attr = b.mlp_linear(h_root, "s1.left1", "s1.left2");
  int root = add_node(read_attr(root_attr), Tensor({1, 4}));
  out.graph.root = root;
  expand(h_root, root, 0);
  return out;
}

RvaeLoss rvae_loss(const KeyGraph& kg, const RvaeModel& model, Rng& rng,
                   std::map<std::string, Tensor>* grads) {
  auto problems = validate_key_graph(kg);
  if (!problems.empty()) throw Stage1Error("invalid key graph: " + problems.front());
  const auto& cfg = model.cfg;

  Tape tape;
  Bound b(tape, model.store);
  int h_root_enc = encode_node(kg, kg.root, b, cfg.hidden_dim, 0, cfg.max_depth);
  int mu = b.dense(h_root_enc, "s1.mu");
  int logvar = b.dense(h_root_enc, "s1.logvar");
  int z = ad::ops::reparameterize(tape, mu, logvar, rng);
  int h_root = tape.tanh_(b.dense(z, "s1.root"));

  // teacher-forced decoding over the ground-truth topology
  std::vector<int> attr_preds, cls_preds;
  std::vector<double> attr_targets;
  std::vector<int> cls_labels;
  std::function<void(int, int)> walk = [&](int h, int node) {
    cls_preds.push_back(b.dense(h, "s1.cls"));
    bool l = kg.children[node][0] >= 0, r = kg.children[node][1] >= 0;
    cls_labels.push_back(l && r ? 3 : (r ? 2 : (l ? 1 : 0)));
    auto descend = [&](int child, bool right) {
      int attr = right ? b.mlp_linear(h, "s1.right1", "s1.right2")
                       : b.mlp_linear(h, "s1.left1", "s1.left2");
      attr_preds.push_back(attr);
      auto t = node_attr(kg.nodes[child]);
      attr_targets.insert(attr_targets.end(), t.begin(), t.end());
      int h_child = b.mlp_tanh(tape.concat({h, attr}, 1), "s1.child1", "s1.child2");
      walk(h_child, child);
    };
    if (l) descend(kg.children[node][0], false);
    if (r) descend(kg.children[node][1], true);
  };
  // The root's attributes are representation constants (origin, null
  // direction, zero descriptor) fixed by dataset normalization and restored
  // by the sampling projection; they are not scored. Scoring them would pit
  // MLP_left(h_root) against two incompatible targets (the root constants
  // and the root's left-child attributes), putting a floor under attr_mse.
  walk(h_root, kg.root);

  int attr_mse;
  if (attr_preds.empty()) {  // single-node graph: nothing to regress
    attr_mse = tape.constant(Tensor({1, 1}));
  } else {
    int attr_cat = tape.concat(attr_preds, 0);
    Tensor target({static_cast<int>(attr_preds.size()), cfg.attr_dim});
    target.data = attr_targets;
    attr_mse = ad::ops::mse(tape, attr_cat, target);
  }
  int cls_cat = tape.concat(cls_preds, 0);
  int cls_ce = tape.cross_entropy(cls_cat, cls_labels);
  int zero_mu = tape.constant(Tensor({1, cfg.latent_dim}));
  int zero_lv = tape.constant(Tensor({1, cfg.latent_dim}));
  int kl = ad::ops::kl_diag_gaussian(tape, mu, logvar, zero_mu, zero_lv);
  int total = tape.add(tape.add(tape.scale(attr_mse, cfg.w_attr), tape.scale(cls_ce, cfg.w_cls)),
                       tape.scale(kl, cfg.w_kl));

  RvaeLoss out;
  out.attr_mse = tape.value(attr_mse).data[0];
  out.cls_ce = tape.value(cls_ce).data[0];
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

std::vector<TrainLogRow> train_stage1(const std::vector<KeyGraph>& dataset, RvaeModel& model) {
  if (dataset.empty()) throw Stage1Error("empty dataset");
  const auto& cfg = model.cfg;
  Rng rng(cfg.seed);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainLogRow> log;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.lr_decay_every);
    // deterministic Fisher-Yates shuffle
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);

    TrainLogRow row;
    row.epoch = epoch;
    row.lr = lr;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::map<std::string, Tensor> grads;
      RvaeLoss batch;
      for (std::size_t i = start; i < end; ++i) {
        RvaeLoss l = rvae_loss(dataset[order[i]], model, rng, &grads);
        batch.total += l.total;
        batch.attr_mse += l.attr_mse;
        batch.cls_ce += l.cls_ce;
        batch.kl += l.kl;
      }
      double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [name, g] : grads)
        for (double& x : g.data) x *= inv;
      model.store.adam_step(grads, lr);
      row.total += batch.total * inv;
      row.attr_mse += batch.attr_mse * inv;
      row.cls_ce += batch.cls_ce * inv;
      row.kl += batch.kl * inv;
      ++n_batches;
    }
    row.total /= n_batches;
    row.attr_mse /= n_batches;
    row.cls_ce /= n_batches;
    row.kl /= n_batches;
    log.push_back(row);
  }
  return log;
}

void write_training_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream f(path);
  if (!f) throw Stage1Error("cannot write " + path);
  f << "epoch,total,attr_mse,cls_ce,kl,lr\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.epoch, r.total,
                  r.attr_mse, r.cls_ce, r.kl, r.lr);
    f << line;
  }
}

KeyGraph sample_key_graph(const RvaeModel& model, Rng& rng, int max_depth) {
  Tensor z({1, model.cfg.latent_dim});
  for (double& x : z.data) x = rng.normal();
  DecodedTree decoded = decode_tree(z, model, max_depth);
  KeyGraph g = decoded.graph;

  // project attributes onto the validator's constraints
  auto parent = g.parent_map();
  auto depth = g.depth_map();
  for (int i : g.dfs_order()) {
    KeyNode& n = g.nodes[i];
    if (i == g.root) {
      n.pos = {0, 0, 0};
      n.dir = {0, 0, 0};
      n.desc = {0, 0, 0, 0};
      continue;
    }
    double dn = norm(n.dir);
    n.dir = dn > 1e-9 ? (1.0 / dn) * n.dir : Vec3{1, 0, 0};
    n.desc.ell = std::max(n.desc.ell, 0.0);
    n.desc.delta = std::clamp(n.desc.delta, 0.0, n.desc.ell);
    n.desc.kappa = std::max(n.desc.kappa, 0.0);
    if (std::abs(n.desc.ell - n.desc.delta) < 1e-9) n.desc.kappa = 0.0;
    n.desc.rho = depth[i];
    // re-derive position from the chord so delta stays consistent
    n.pos = g.nodes[parent[i]].pos + n.desc.delta * n.dir;
  }
  return g;
}

}  // namespace vessel
