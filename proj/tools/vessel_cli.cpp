// vesselgen: hierarchical part-based vessel generation pipeline.
// Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 I/O error.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vessel/metrics.hpp"
#include "vessel/stage1.hpp"
#include "vessel/stage2.hpp"
#include "vessel/stage3.hpp"
#include "vessel/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vessel;

namespace {

constexpr int kExitOk = 0, kExitCheckFail = 1, kExitUsage = 2, kExitIo = 3;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file " + path);
  return json::parse(f);
}

json section(const json& cfg, const std::string& name) {
  return cfg.contains(name) ? cfg.at(name) : json::object();
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
  std::vector<std::string> out;
  if (!fs::exists(dir)) throw std::runtime_error("no such directory: " + dir);
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      out.push_back(entry.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

SynthConfig synth_config_from(const json& j) {
  SynthConfig c;
  c.depth_min = j.value("depth_min", c.depth_min);
  c.depth_max = j.value("depth_max", c.depth_max);
  c.bifurcation_prob = j.value("bifurcation_prob", c.bifurcation_prob);
  c.points_min = j.value("points_min", c.points_min);
  c.points_max = j.value("points_max", c.points_max);
  c.curvature_min = j.value("curvature_min", c.curvature_min);
  c.curvature_max = j.value("curvature_max", c.curvature_max);
  c.angle_min_deg = j.value("angle_min_deg", c.angle_min_deg);
  c.angle_max_deg = j.value("angle_max_deg", c.angle_max_deg);
  c.root_radius = j.value("root_radius", c.root_radius);
  c.gamma = j.value("gamma", c.gamma);
  c.seed = j.value("seed", c.seed);
  return c;
}

int cmd_synth(const json& cfg, int n, std::uint64_t seed, bool seed_set,
              const std::string& out) {
  SynthConfig sc;
  try {
    sc = synth_config_from(section(cfg, "synth"));
    if (seed_set) sc.seed = seed;
    sc.validate();
    if (n < 1) throw SynthError("--n must be >= 1");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    DatasetPaths paths = generate_dataset(out, n, sc);
    std::cout << "wrote " << paths.train.size() << " train + " << paths.test.size()
              << " test samples to " << out << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

int cmd_preprocess(const std::vector<std::string>& volumes, const std::string& out,
                   int max_len) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    std::cerr << "error: cannot create " << out << "\n";
    return kExitIo;
  }
  int ok = 0;
  std::vector<std::string> failures;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    try {
      VoxelGrid v = VoxelGrid::load_raw(volumes[i]);
      TrainingSample sample = preprocess_volume(v, max_len);
      char name[64];
      std::snprintf(name, sizeof(name), "sample_%05zu.json", i);
      std::ofstream f(fs::path(out) / name);
      if (!f) throw std::runtime_error("cannot write output file");
      f << sample.to_json() << "\n";
      ++ok;
    } catch (const std::exception& e) {
      failures.push_back(volumes[i] + ": " + e.what());
    }
  }
  std::cout << "preprocessed " << ok << "/" << volumes.size() << " volumes\n";
  for (const auto& f : failures) std::cout << "failed: " << f << "\n";
  return ok > 0 ? kExitOk : kExitIo;
}

int cmd_train(const json& cfg, int stage, const std::string& data_dir, const std::string& out,
              const std::string& init, int epochs, bool epochs_set, std::uint64_t seed,
              bool seed_set) {
  std::vector<TrainingSample> samples;
  try {
    samples = load_dataset(sorted_files(data_dir, ".json"));
    if (samples.empty()) throw std::runtime_error("no samples in " + data_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  fs::path ckpt(out);

  try {
    if (stage == 1) {
      RvaeConfig rc = RvaeConfig::from_json(section(cfg, "stage1").dump());
      if (epochs_set) rc.epochs = epochs;
      if (seed_set) rc.seed = seed;
      rc.validate();
      Rng rng(rc.seed);
      RvaeModel model = RvaeModel::init(rc, rng);
      if (!init.empty()) model = RvaeModel::load(init + ".params", init + ".config.json");
      std::vector<KeyGraph> graphs;
      for (const auto& s : samples) graphs.push_back(s.key_graph);
      auto log = train_stage1(graphs, model);
      model.save((ckpt / "stage1.params").string(), (ckpt / "stage1.config.json").string());
      write_training_log((ckpt / "stage1.log.csv").string(), log);
      if (!log.empty()) std::cout << "final loss " << log.back().total << "\n";
    } else {
      SegVaeConfig sc = SegVaeConfig::from_json(section(cfg, "stage2").dump());
      if (epochs_set) sc.epochs = epochs;
      if (seed_set) sc.seed = seed;
      sc.validate();
      Rng rng(sc.seed);
      SegVaeModel model = SegVaeModel::init(sc, rng);
      if (!init.empty()) model = SegVaeModel::load(init + ".params", init + ".config.json");
      auto examples = segment_examples(samples);
      auto log = train_stage2(examples, model);
      model.save((ckpt / "stage2.params").string(), (ckpt / "stage2.config.json").string());
      write_stage2_log((ckpt / "stage2.log.csv").string(), log);
      if (!log.empty()) std::cout << "final loss " << log.back().total << "\n";
    }
  } catch (const Stage1Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Stage2Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

int cmd_generate(const std::string& ckpt_dir, int n, std::uint64_t seed, const std::string& out,
                 double voxel) {
  try {
    fs::path ckpt(ckpt_dir);
    RvaeModel m1 = RvaeModel::load((ckpt / "stage1.params").string(),
                                   (ckpt / "stage1.config.json").string());
    SegVaeModel m2 = SegVaeModel::load((ckpt / "stage2.params").string(),
                                       (ckpt / "stage2.config.json").string());
    fs::create_directories(out);
    for (int i = 0; i < n; ++i) {
      Rng rng(seed + static_cast<std::uint64_t>(i));
      SkeletonGraph g = generate_vessel(m1, m2, rng);
      char base[64];
      std::snprintf(base, sizeof(base), "vessel_%03d", i);
      std::ofstream f(fs::path(out) / (std::string(base) + ".json"));
      if (!f) throw std::runtime_error("cannot write skeleton json");
      f << skeleton_to_json(g) << "\n";

      double min_r = std::numeric_limits<double>::max();
      for (const auto& node : g.nodes) min_r = std::min(min_r, node.radius);
      double h = voxel > 0.0 ? voxel : 0.4 * min_r;
      TriangleMesh mesh = skeleton_to_mesh(g, h);
      export_mesh(mesh, (fs::path(out) / (std::string(base) + ".obj")).string(),
                  MeshFormat::obj);
    }
    std::cout << "generated " << n << " vessels in " << out << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

std::vector<EvalItem> load_eval_dir(const std::string& dir) {
  std::vector<EvalItem> items;
  for (const std::string& jpath : sorted_files(dir, ".json")) {
    fs::path obj = fs::path(jpath).replace_extension(".obj");
    if (!fs::exists(obj)) continue;
    EvalItem item;
    item.skeleton = skeleton_from_json(read_file(jpath));
    item.mesh = import_mesh(obj.string(), MeshFormat::obj);
    items.push_back(std::move(item));
  }
  if (items.empty()) throw std::runtime_error("no skeleton+mesh pairs in " + dir);
  return items;
}

int cmd_evaluate(const json& cfg, const std::string& gen_dir, const std::string& ref_dir,
                 bool paired, int points, std::uint64_t seed, const std::string& out) {
  EvalConfig ec;
  try {
    json j = section(cfg, "evaluate");
    ec.points_per_mesh = j.value("points_per_mesh", points);
    ec.jsd_grid = j.value("jsd_grid", ec.jsd_grid);
    ec.gwd_max_pairs = j.value("gwd_max_pairs", ec.gwd_max_pairs);
    ec.gwd_samples = j.value("gwd_samples", ec.gwd_samples);
    ec.gwd_eps = j.value("gwd_eps", ec.gwd_eps);
    ec.paired = paired;
    ec.seed = seed;
    if (ec.points_per_mesh < 1) throw std::runtime_error("points_per_mesh must be >= 1");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    MetricsReport report = evaluate_sets(load_eval_dir(gen_dir), load_eval_dir(ref_dir), ec);
    std::cout << report.to_table();
    if (!out.empty()) {
      std::ofstream f(out);
      if (!f) throw std::runtime_error("cannot write " + out);
      f << report.to_json() << "\n";
    }
    return kExitOk;
  } catch (const MetricsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

KeyGraph tiny_key_graph() {
  KeyGraph g;
  auto add = [&](Vec3 pos, Vec3 dir, GeometricDescriptor d) {
    g.nodes.push_back({pos, dir, d});
    g.children.push_back({-1, -1});
    return static_cast<int>(g.nodes.size()) - 1;
  };
  int root = add({0, 0, 0}, {0, 0, 0}, {0, 0, 0, 0});
  int a = add({1, 0, 0}, {1, 0, 0}, {1.2, 1.0, 0.3, 1});
  int b = add({1, 1, 0}, {0, 1, 0}, {1.1, 1.0, 0.2, 2});
  int c = add({1.8, 0.6, 0}, {0.8, 0.6, 0}, {1.3, 1.0, 0.1, 2});
  g.nodes[c].dir = normalized(g.nodes[c].dir);
  g.root = root;
  g.children[root] = {a, -1};
  g.children[a] = {b, c};
  return g;
}

int cmd_gradcheck(int stage) {
  double worst = 0.0;
  bool pass = true;
  auto report = [&](const std::string& name, const ad::GradCheckResult& r) {
    bool ok = r.max_rel_error < 1e-4;
    pass = pass && ok;
    worst = std::max(worst, r.max_rel_error);
    std::cout << name << ": max rel error " << r.max_rel_error << " (worst parameter "
              << r.worst_param << ") -> " << (ok ? "pass" : "FAIL") << "\n";
  };

  if (stage == 0 || stage == 1) {
    RvaeConfig rc;
    rc.hidden_dim = 8;
    rc.latent_dim = 4;
    rc.max_depth = 6;
    Rng rng(1);
    RvaeModel model = RvaeModel::init(rc, rng);
    KeyGraph g = tiny_key_graph();
    auto value = [&](ad::ParameterStore& store) {
      RvaeModel probe;
      probe.cfg = rc;
      probe.store = store;
      Rng noise(42);
      return rvae_loss(g, probe, noise).total;
    };
    auto grads = [&](ad::ParameterStore& store) {
      RvaeModel probe;
      probe.cfg = rc;
      probe.store = store;
      Rng noise(42);
      std::map<std::string, ad::Tensor> gmap;
      rvae_loss(g, probe, noise, &gmap);
      return gmap;
    };
    report("stage 1", ad::grad_check(value, grads, model.store));
  }
  if (stage == 0 || stage == 2) {
    SegVaeConfig sc;
    sc.model_dim = 8;
    sc.n_layers = 1;
    sc.n_heads = 2;
    sc.latent_dim = 4;
    sc.max_len = 8;
    Rng rng(2);
    SegVaeModel model = SegVaeModel::init(sc, rng);
    VesselSegment seg;
    for (int i = 0; i < 5; ++i) {
      double t = i / 4.0;
      seg.points.push_back({{t, 0.2 * std::sin(3.0 * t), 0.1 * t * (1 - t)}, 0.1 + 0.02 * t});
    }
    seg = normalize_segment(seg).canonical;
    SegmentExample ex{seg, compute_descriptor(seg, 2)};
    auto value = [&](ad::ParameterStore& store) {
      SegVaeModel probe;
      probe.cfg = sc;
      probe.store = store;
      Rng noise(42);
      return segvae_loss(ex, probe, noise).total;
    };
    auto grads = [&](ad::ParameterStore& store) {
      SegVaeModel probe;
      probe.cfg = sc;
      probe.store = store;
      Rng noise(42);
      std::map<std::string, ad::Tensor> gmap;
      segvae_loss(ex, probe, noise, &gmap);
      return gmap;
    };
    report("stage 2", ad::grad_check(value, grads, model.store));
  }
  return pass ? kExitOk : kExitCheckFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vesselgen: hierarchical part-based generative model for 3D blood vessels"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic training dataset");
  synth->fallthrough();
  int synth_n = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--n", synth_n, "number of trees")->required();
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "rng seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* prep = app.add_subcommand("preprocess", "raw voxel volumes -> training samples");
  prep->fallthrough();
  std::vector<std::string> prep_volumes;
  std::string prep_out;
  int prep_max_len = 200;
  prep->add_option("volumes", prep_volumes, "raw volume files")->required();
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_option("--max-len", prep_max_len, "max resampled segment length");

  auto* train = app.add_subcommand("train", "train stage 1 or stage 2");
  train->fallthrough();
  int train_stage = 0, train_epochs = 0;
  std::uint64_t train_seed = 0;
  std::string train_data, train_out, train_init;
  train->add_option("--stage", train_stage, "1 or 2")->required()->check(CLI::Range(1, 2));
  train->add_option("--data", train_data, "sample JSON directory")->required();
  train->add_option("--out", train_out, "checkpoint directory")->required();
  train->add_option("--init", train_init, "checkpoint prefix to resume from");
  auto* train_epochs_opt = train->add_option("--epochs", train_epochs, "override epochs");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "override seed");

  auto* gen = app.add_subcommand("generate", "sample vessels from trained checkpoints");
  gen->fallthrough();
  std::string gen_ckpt, gen_out;
  int gen_n = 4;
  std::uint64_t gen_seed = 0;
  double gen_voxel = 0.0;
  gen->add_option("--ckpt", gen_ckpt, "checkpoint directory")->required();
  gen->add_option("--n", gen_n, "vessel count");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--voxel", gen_voxel, "mesh voxel size (0 = auto)");

  auto* eval = app.add_subcommand("evaluate", "metrics between two vessel sets");
  eval->fallthrough();
  std::string eval_gen, eval_ref, eval_out;
  bool eval_paired = false;
  int eval_points = 2048;
  std::uint64_t eval_seed = 0;
  eval->add_option("--generated", eval_gen, "generated set directory")->required();
  eval->add_option("--reference", eval_ref, "reference set directory")->required();
  eval->add_flag("--paired", eval_paired, "matched-index reconstruction mode");
  eval->add_option("--points", eval_points, "points sampled per mesh");
  eval->add_option("--seed", eval_seed, "sampling seed");
  eval->add_option("--out", eval_out, "write JSON report here");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc->fallthrough();
  int gc_stage = 0;
  gc->add_option("--stage", gc_stage, "1, 2, or 0 for both")->check(CLI::Range(0, 2));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  json cfg;
  try {
    cfg = load_config_file(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (app.got_subcommand(synth))
    return cmd_synth(cfg, synth_n, synth_seed, synth_seed_opt->count() > 0, synth_out);
  if (app.got_subcommand(prep)) return cmd_preprocess(prep_volumes, prep_out, prep_max_len);
  if (app.got_subcommand(train))
    return cmd_train(cfg, train_stage, train_data, train_out, train_init, train_epochs,
                     train_epochs_opt->count() > 0, train_seed, train_seed_opt->count() > 0);
  if (app.got_subcommand(gen)) return cmd_generate(gen_ckpt, gen_n, gen_seed, gen_out, gen_voxel);
  if (app.got_subcommand(eval))
    return cmd_evaluate(cfg, eval_gen, eval_ref, eval_paired, eval_points, eval_seed, eval_out);
  if (app.got_subcommand(gc)) return cmd_gradcheck(gc_stage);
  return kExitUsage;
}
