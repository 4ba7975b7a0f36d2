// Command-line front end: trains IB-INN models on the synthetic benchmarks,
// evaluates metrics, runs OoD detection, sampling, interpolation, gradient
// checks, and the sigma/gamma sweeps. Batch tool: everything is emitted as
// CSV/JSON files under --out, plus a manifest describing the run.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ibinn/checkpoint.hpp"
#include "ibinn/datasets.hpp"
#include "ibinn/grad.hpp"
#include "ibinn/loss.hpp"
#include "ibinn/metrics.hpp"
#include "ibinn/model.hpp"
#include "ibinn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ibinn;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing file " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char c = 0;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) values.push_back(std::stod(item));
  }
  return values;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> values;
  for (double v : parse_list(csv)) values.push_back(static_cast<int>(v));
  return values;
}

// ---------------------------------------------------------------------------
// configuration: flat key-value file, flags override

struct Options {
  TrainConfig train;
  std::string config_path;
  std::string out_dir = "out";
  std::string checkpoint;
  std::string data_path;
  std::string data_format = "csv";
  bool have_imageseen = false;
};

const std::map<std::string, std::string>& config_key_docs() {
  static const std::map<std::string, std::string> docs = {
      {"seed", "master seed (all randomness derives from it)"},
      {"gamma", "IB trade-off parameter, >= 0"},
      {"only_ly", "1: optimize the posterior loss alone (gamma -> infinity)"},
      {"sigma", "dequantization noise std"},
      {"smoothing", "label smoothing factor"},
      {"lr", "base learning rate"},
      {"momentum", "SGD momentum"},
      {"batch_size", "minibatch size"},
      {"epochs", "epoch count"},
      {"milestones", "comma-separated decay epochs"},
      {"decay_factor", "learning-rate decay at each milestone"},
      {"grad_clip", "global gradient-norm clip, 0 disables"},
      {"generator", "blobs | moons | rings | gauss"},
      {"classes", "class count K"},
      {"dim", "feature dimension d"},
      {"n_train", "training samples"},
      {"n_test", "test samples"},
      {"levels", "quantization levels F"},
      {"spread", "generator jitter (-1: generator default)"},
      {"separation", "blobs: minimum center distance"},
      {"data_seed", "dataset seed (defaults to seed)"},
      {"blocks", "coupling blocks (vector mode)"},
      {"subnet_hidden", "comma-separated subnet hidden widths"},
      {"clamp", "coupling clamp amplitude alpha"},
      {"learnable_phi", "1: learn class log-priors from the density loss"},
      {"hypersphere", "1: fix ||mu_y|| on a sphere (class-NLL baseline)"},
      {"hypersphere_radius", "sphere radius, 0 -> sqrt(d)"},
      {"channels", "image mode: input channels"},
      {"height", "image mode: input height"},
      {"width", "image mode: input width"},
      {"stage_blocks", "image mode: comma-separated blocks per stage"},
      {"tail_blocks", "image mode: blocks after the DCT"},
  };
  return docs;
}

void apply_key(Options& opt, const std::string& key, const std::string& value) {
  TrainConfig& t = opt.train;
  if (key == "seed") {
    t.seed = std::stoull(value);
  } else if (key == "gamma") {
    t.gamma = std::stod(value);
  } else if (key == "only_ly") {
    t.only_ly = std::stoi(value) != 0;
  } else if (key == "sigma") {
    t.sigma = std::stod(value);
  } else if (key == "smoothing") {
    t.smoothing = std::stod(value);
  } else if (key == "lr") {
    t.learning_rate = std::stod(value);
  } else if (key == "momentum") {
    t.momentum = std::stod(value);
  } else if (key == "batch_size") {
    t.batch_size = std::stoi(value);
  } else if (key == "epochs") {
    t.epochs = std::stoi(value);
  } else if (key == "milestones") {
    t.milestones = parse_int_list(value);
  } else if (key == "decay_factor") {
    t.decay_factor = std::stod(value);
  } else if (key == "grad_clip") {
    t.grad_clip = std::stod(value);
  } else if (key == "generator") {
    t.data.generator = value;
  } else if (key == "classes") {
    t.data.classes = std::stoi(value);
  } else if (key == "dim") {
    t.data.dim = std::stoi(value);
  } else if (key == "n_train") {
    t.data.n_train = std::stoi(value);
  } else if (key == "n_test") {
    t.data.n_test = std::stoi(value);
  } else if (key == "levels") {
    t.data.levels = std::stoi(value);
  } else if (key == "spread") {
    t.data.spread = std::stod(value);
  } else if (key == "separation") {
    t.data.separation = std::stod(value);
  } else if (key == "data_seed") {
    t.data.seed = std::stoull(value);
  } else if (key == "blocks") {
    t.model.flow.blocks = std::stoi(value);
  } else if (key == "subnet_hidden") {
    t.model.flow.subnet_hidden = parse_int_list(value);
  } else if (key == "clamp") {
    t.model.flow.clamp = std::stod(value);
  } else if (key == "learnable_phi") {
    t.model.learnable_phi = std::stoi(value) != 0;
  } else if (key == "hypersphere") {
    t.model.hypersphere = std::stoi(value) != 0;
  } else if (key == "hypersphere_radius") {
    t.model.hypersphere_radius = std::stod(value);
  } else if (key == "channels" || key == "height" || key == "width") {
    TensorShape& s = t.model.flow.input;
    if (s.kind != TensorShape::Kind::Image) s = TensorShape::image(1, 2, 2);
    if (key == "channels") s.channels = std::stoi(value);
    if (key == "height") s.height = std::stoi(value);
    if (key == "width") s.width = std::stoi(value);
  } else if (key == "stage_blocks") {
    t.model.flow.stage_blocks = parse_int_list(value);
  } else if (key == "tail_blocks") {
    t.model.flow.tail_blocks = std::stoi(value);
  } else {
    throw std::runtime_error("unknown config key '" + key + "'");
  }
}

void load_config_file(Options& opt, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::string line;
  int line_no = 0;
  bool data_seed_set = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected 'key = value'");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty key");
    }
    try {
      apply_key(opt, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (key == "data_seed") data_seed_set = true;
  }
  if (!data_seed_set) opt.train.data.seed = opt.train.seed;
}

json config_to_json(const TrainConfig& t) {
  json j;
  j["seed"] = t.seed;
  j["gamma"] = t.gamma;
  j["only_ly"] = t.only_ly;
  j["sigma"] = t.sigma;
  j["smoothing"] = t.smoothing;
  j["lr"] = t.learning_rate;
  j["momentum"] = t.momentum;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["milestones"] = t.milestones;
  j["decay_factor"] = t.decay_factor;
  j["grad_clip"] = t.grad_clip;
  j["data"] = {{"generator", t.data.generator}, {"classes", t.data.classes},
               {"dim", t.data.dim},             {"n_train", t.data.n_train},
               {"n_test", t.data.n_test},       {"levels", t.data.levels},
               {"spread", t.data.spread},       {"separation", t.data.separation},
               {"seed", t.data.seed}};
  j["model"] = {{"blocks", t.model.flow.blocks},
                {"subnet_hidden", t.model.flow.subnet_hidden},
                {"clamp", t.model.flow.clamp},
                {"stage_blocks", t.model.flow.stage_blocks},
                {"tail_blocks", t.model.flow.tail_blocks},
                {"learnable_phi", t.model.learnable_phi},
                {"hypersphere", t.model.hypersphere},
                {"hypersphere_radius", t.model.hypersphere_radius}};
  if (t.model.flow.input.kind == TensorShape::Kind::Image) {
    j["model"]["image"] = {{"channels", t.model.flow.input.channels},
                           {"height", t.model.flow.input.height},
                           {"width", t.model.flow.input.width}};
  }
  return j;
}

void write_manifest(const Options& opt, const std::string& command,
                    const std::vector<std::string>& input_files) {
  fs::create_directories(opt.out_dir);
  json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = opt.train.seed;
  j["config"] = config_to_json(opt.train);
  json inputs = json::object();
  for (const std::string& path : input_files) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(file_hash(path)));
    inputs[path] = buf;
  }
  j["inputs"] = inputs;
  std::ofstream out(fs::path(opt.out_dir) / "manifest.json", std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + opt.out_dir);
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path);
}

Dataset load_or_generate_test(const Options& opt) {
  if (!opt.data_path.empty()) return load_external(opt.data_path, opt.data_format);
  return make_inlier(opt.train.data).test;
}

EvalConfig eval_config(const TrainConfig& t) {
  EvalConfig ec;
  ec.noise = t.data.noise_spec(t.sigma);
  ec.smoothing = t.smoothing;
  ec.seed = t.seed;
  ec.bpd_applicable = !t.only_ly;
  return ec;
}

std::string reliability_csv(const CalibrationBins& bins) {
  std::string csv = "bin_lo,bin_hi,confidence,accuracy,count\n";
  for (std::size_t i = 0; i < bins.size(); ++i) {
    csv += fmt(bins.edges[i]) + "," + fmt(bins.edges[i + 1]) + "," + fmt(bins.confidence(i)) +
           "," + (bins.count[i] == 0 ? "" : fmt(bins.accuracy(i))) + "," +
           std::to_string(bins.count[i]) + "\n";
  }
  return csv;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_train(const Options& opt) {
  write_manifest(opt, "train", opt.config_path.empty()
                                   ? std::vector<std::string>{}
                                   : std::vector<std::string>{opt.config_path});
  TrainConfig cfg = opt.train;
  cfg.out_dir = opt.out_dir;
  const TrainResult result = train(cfg, opt.checkpoint);

  const MetricsReport metrics = evaluate_model(result.model, result.data.test, eval_config(cfg));
  json summary;
  summary["epochs_done"] = result.epochs_done;
  summary["final_lr"] = result.final_lr;
  summary["train_lx"] = result.last_batch.lx;
  summary["train_ly"] = result.last_batch.ly;
  summary["checkpoint"] = result.checkpoint_path;
  summary["metrics"] = json::parse(metrics_to_json(metrics));
  write_text((fs::path(opt.out_dir) / "summary.json").string(), summary.dump(2) + "\n");
  write_text((fs::path(opt.out_dir) / "reliability.csv").string(),
             reliability_csv(metrics.reliability));
  std::cout << "trained " << result.epochs_done << " epochs; checkpoint at "
            << result.checkpoint_path << "\n"
            << metrics_to_json(metrics) << "\n";
  return 0;
}

int cmd_eval(const Options& opt) {
  if (opt.checkpoint.empty()) throw std::runtime_error("eval: --checkpoint required");
  std::vector<std::string> inputs = {opt.checkpoint};
  if (!opt.data_path.empty()) inputs.push_back(opt.data_path);
  write_manifest(opt, "eval", inputs);

  Model model = load_checkpoint(opt.checkpoint);
  const Dataset test = load_or_generate_test(opt);
  const MetricsReport metrics = evaluate_model(model, test, eval_config(opt.train));
  write_text((fs::path(opt.out_dir) / "metrics.json").string(), metrics_to_json(metrics) + "\n");
  write_text((fs::path(opt.out_dir) / "reliability.csv").string(),
             reliability_csv(metrics.reliability));
  std::cout << metrics_to_json(metrics) << "\n";
  return 0;
}

int cmd_ood(const Options& opt, const std::string& kinds_csv, double strength) {
  if (opt.checkpoint.empty()) throw std::runtime_error("ood: --checkpoint required");
  write_manifest(opt, "ood", {opt.checkpoint});

  Model model = load_checkpoint(opt.checkpoint);
  const TrainTest data = make_inlier(opt.train.data);
  const double h_hat = mean_nll(model, data.train);

  std::vector<std::string> kinds;
  {
    std::stringstream ss(kinds_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) kinds.push_back(item);
    }
  }

  MetricsReport report = evaluate_model(model, data.test, eval_config(opt.train));
  dvec scores_in = nll_scores(model, data.test);
  for (double& s : scores_in) s = typicality_score(s, h_hat);

  for (const std::string& kind : kinds) {
    const Dataset ood = make_ood(opt.train.data, kind, strength);
    report.ood.push_back(evaluate_ood_set(model, data.test, ood, h_hat, kind));

    dvec scores_ood = nll_scores(model, ood);
    for (double& s : scores_ood) s = typicality_score(s, h_hat);
    std::string roc = "fpr,tpr\n";
    for (const auto& [fpr, tpr] : roc_points(scores_in, scores_ood)) {
      roc += fmt(fpr) + "," + fmt(tpr) + "\n";
    }
    write_text((fs::path(opt.out_dir) / ("roc_" + kind + ".csv")).string(), roc);
  }

  write_text((fs::path(opt.out_dir) / "ood.json").string(), metrics_to_json(report) + "\n");
  std::cout << metrics_to_json(report) << "\n";
  return 0;
}

int cmd_sample(const Options& opt, int class_1based, int count, double temperature,
               const std::string& format) {
  if (opt.checkpoint.empty()) throw std::runtime_error("sample: --checkpoint required");
  write_manifest(opt, "sample", {opt.checkpoint});

  Model model = load_checkpoint(opt.checkpoint);
  if (class_1based < 1 || class_1based > model.classes()) {
    throw std::runtime_error("sample: class must be in {1.." + std::to_string(model.classes()) +
                             "}");
  }
  Rng rng = derive_rng(opt.train.seed, "sample");
  Dataset out;
  out.dim = model.dim();
  out.classes = model.classes();
  out.levels = opt.train.data.levels;
  dvec z, x;
  for (int i = 0; i < count; ++i) {
    model.gmm.sample_latent(class_1based - 1, temperature, rng, z);
    model.net.inverse(z, x);
    out.x.push_back(x);
    out.y.push_back(class_1based - 1);
  }
  const std::string path =
      (fs::path(opt.out_dir) / (format == "binary" ? "samples.ibds" : "samples.csv")).string();
  if (format == "binary") {
    save_binary(out, path);
  } else {
    save_csv(out, path);
  }
  std::cout << "wrote " << count << " samples to " << path << "\n";
  return 0;
}

int cmd_interpolate(const Options& opt, const std::string& xa_csv, const std::string& xb_csv,
                    int steps) {
  if (opt.checkpoint.empty()) throw std::runtime_error("interpolate: --checkpoint required");
  if (steps < 2) throw std::runtime_error("interpolate: steps must be >= 2");
  write_manifest(opt, "interpolate", {opt.checkpoint});

  Model model = load_checkpoint(opt.checkpoint);
  const dvec xa = parse_list(xa_csv);
  const dvec xb = parse_list(xb_csv);
  if (static_cast<int>(xa.size()) != model.dim() || static_cast<int>(xb.size()) != model.dim()) {
    throw std::runtime_error("interpolate: endpoints must have dimension " +
                             std::to_string(model.dim()));
  }

  dvec za, zb;
  double ld = 0.0;
  model.net.forward(xa, za, ld);
  model.net.forward(xb, zb, ld);

  std::string csv = "step,t";
  for (int j = 0; j < model.dim(); ++j) csv += ",x" + std::to_string(j + 1);
  csv += "\n";
  dvec z(model.dim()), x;
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / (steps - 1);
    for (int j = 0; j < model.dim(); ++j) z[j] = (1.0 - t) * za[j] + t * zb[j];
    model.net.inverse(z, x);
    csv += std::to_string(s) + "," + fmt(t);
    for (int j = 0; j < model.dim(); ++j) csv += "," + fmt(x[j]);
    csv += "\n";
  }
  const std::string path = (fs::path(opt.out_dir) / "interpolation.csv").string();
  write_text(path, csv);
  std::cout << "wrote " << steps << "-step trajectory to " << path << "\n";
  return 0;
}

int cmd_gradcheck(const Options& opt, int coords, double step, double tol) {
  std::vector<std::string> inputs;
  if (!opt.checkpoint.empty()) inputs.push_back(opt.checkpoint);
  write_manifest(opt, "gradcheck", inputs);

  Model model;
  if (!opt.checkpoint.empty()) {
    model = load_checkpoint(opt.checkpoint);
  } else {
    TrainConfig cfg = opt.train;
    ModelConfig mc = cfg.model;
    if (mc.flow.input.kind == TensorShape::Kind::Vector) {
      mc.flow.input = TensorShape::vector(cfg.data.dim);
    }
    mc.classes = cfg.data.generator == "gauss" ? 1 : cfg.data.classes;
    model = build_model(mc, cfg.seed);
    // identity-initialized couplings have structurally zero gradients in the
    // hidden layers; perturb so every coordinate is informative
    Rng prng = derive_rng(cfg.seed, "gradcheck-perturb");
    for (ParamRef& p : model.params()) {
      for (double& v : *p.data) v += 0.1 * prng.normal();
    }
  }

  const TrainTest data = make_inlier(opt.train.data);
  Batch batch;
  batch.noise = opt.train.data.noise_spec(opt.train.sigma);
  Rng nrng = derive_rng(opt.train.seed, "gradcheck-noise");
  const std::size_t n = std::min<std::size_t>(32, data.train.size());
  for (std::size_t i = 0; i < n; ++i) {
    batch.x.push_back(data.train.x[i]);
    batch.y.push_back(data.train.y[i]);
    dvec eps;
    fill_noise(batch.noise, batch.x.back().size(), nrng, eps);
    batch.eps.push_back(std::move(eps));
  }

  Rng rng = derive_rng(opt.train.seed, "gradcheck");
  const GradCheckReport report =
      grad_check(model, batch, opt.train.loss_config(), coords, step, tol, rng);

  json j;
  j["max_rel_error"] = report.max_rel_error;
  j["tolerance"] = report.tolerance;
  j["step"] = report.step;
  j["coordinates"] = report.probes.size();
  j["passed"] = report.passed;
  json blocks = json::object();
  for (const auto& [name, err] : report.per_block_max) blocks[name] = err;
  j["per_block_max"] = blocks;
  write_text((fs::path(opt.out_dir) / "gradcheck.json").string(), j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return report.passed ? 0 : 1;
}

int cmd_sigma_sweep(const Options& opt, const std::string& sigmas_csv) {
  write_manifest(opt, "sigma-sweep", {});
  const std::vector<double> sigmas = parse_list(sigmas_csv);
  TrainConfig base = opt.train;
  base.out_dir = (fs::path(opt.out_dir) / "runs").string();
  const auto rows = sigma_sweep(base, sigmas);

  std::string csv = "sigma,lx,ly,bits_per_dim,classif_err_pct,ece,mce,ice,cal_geo_mean,ci_xz,failed\n";
  bool all_ok = true;
  for (const auto& row : rows) {
    if (row.failed) {
      all_ok = false;
      csv += fmt(row.sigma) + ",,,,,,,,,,1\n";
      std::cerr << "sigma " << row.sigma << " failed: " << row.error << "\n";
      continue;
    }
    csv += fmt(row.sigma) + "," + fmt(row.metrics.test_lx) + "," + fmt(row.metrics.test_ly) +
           "," + fmt(row.metrics.bits_per_dim) + "," + fmt(row.metrics.classification_error_pct) +
           "," + fmt(row.metrics.ece) + "," + fmt(row.metrics.mce) + "," + fmt(row.metrics.ice) +
           "," + fmt(row.metrics.cal_geo_mean) + "," + fmt(row.ci_xz_estimate) + ",0\n";
  }
  const std::string path = (fs::path(opt.out_dir) / "sigma_sweep.csv").string();
  write_text(path, csv);
  std::cout << csv;
  return all_ok ? 0 : 1;
}

int cmd_gamma_sweep(const Options& opt, const std::string& gammas_csv, bool include_ood) {
  write_manifest(opt, "gamma-sweep", {});
  const std::vector<double> gammas = parse_list(gammas_csv);
  TrainConfig base = opt.train;
  base.out_dir = (fs::path(opt.out_dir) / "runs").string();
  const auto rows = gamma_sweep(base, gammas, include_ood);

  std::string csv =
      "gamma,classif_err_pct,bits_per_dim,ece,mce,ice,cal_geo_mean,"
      "ood_entropy_increase_mean,ood_auc_mean,failed\n";
  bool all_ok = true;
  for (const auto& row : rows) {
    if (row.failed) {
      all_ok = false;
      csv += fmt(row.gamma) + ",,,,,,,,,1\n";
      std::cerr << "gamma " << row.gamma << " failed: " << row.error << "\n";
      continue;
    }
    double ent = 0.0;
    double auc = 0.0;
    for (const OodReport& o : row.metrics.ood) {
      ent += o.entropy_increase;
      auc += o.auc_percent;
    }
    const double n_ood = row.metrics.ood.empty() ? 1.0 : static_cast<double>(row.metrics.ood.size());
    csv += fmt(row.gamma) + "," + fmt(row.metrics.classification_error_pct) + "," +
           fmt(row.metrics.bits_per_dim) + "," + fmt(row.metrics.ece) + "," +
           fmt(row.metrics.mce) + "," + fmt(row.metrics.ice) + "," +
           fmt(row.metrics.cal_geo_mean) + "," + fmt(ent / n_ood) + "," + fmt(auc / n_ood) + ",0\n";
  }
  const std::string path = (fs::path(opt.out_dir) / "gamma_sweep.csv").string();
  write_text(path, csv);
  std::cout << csv;
  return all_ok ? 0 : 1;
}

int cmd_bound_check(const Options& opt, int levels, const std::string& sigmas_csv, int trials) {
  write_manifest(opt, "bound-check", {});
  const std::vector<double> sigma_fracs = parse_list(sigmas_csv);
  const double delta = 1.0 / levels;
  Rng rng = derive_rng(opt.train.seed, "bound-check");

  std::string csv = "trial,sigma_over_delta,measured_max,bound,within\n";
  bool all_ok = true;
  for (int t = 0; t < trials; ++t) {
    dvec probs(levels);
    double total = 0.0;
    for (double& p : probs) {
      p = rng.uniform();
      total += p;
    }
    for (double& p : probs) p /= total;
    for (double frac : sigma_fracs) {
      const QuantBoundResult r = quantization_bound_check(probs, delta, frac * delta);
      all_ok = all_ok && r.within_bound;
      csv += std::to_string(t) + "," + fmt(frac) + "," + fmt(r.measured_max) + "," +
             fmt(r.bound) + "," + (r.within_bound ? "1" : "0") + "\n";
    }
  }
  write_text((fs::path(opt.out_dir) / "bound_check.csv").string(), csv);
  std::cout << csv;
  std::cout << (all_ok ? "all distributions within the analytic bound\n"
                       : "BOUND VIOLATION detected\n");
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IB-INN: invertible networks trained with the Information Bottleneck"};
  app.require_subcommand(1);

  Options opt;
  bool seed_set = false;
  std::uint64_t seed_flag = 0;
  double gamma_flag = -1.0;
  double sigma_flag = -1.0;

  app.add_option("--config", opt.config_path, "flat key = value config file");
  app.add_option("--seed", seed_flag, "master seed (overrides config)");
  app.add_option("--gamma", gamma_flag, "IB trade-off (overrides config)");
  app.add_option("--sigma", sigma_flag, "noise std (overrides config)");
  app.add_option("--out", opt.out_dir, "output directory");
  app.add_option("--checkpoint", opt.checkpoint, "checkpoint file");
  app.add_option("--data", opt.data_path, "dataset file instead of a generated set");
  app.add_option("--data-format", opt.data_format, "csv | binary");

  auto* train_cmd = app.add_subcommand("train", "train a model, emit checkpoint + logs");
  bool only_ly_flag = false;
  train_cmd->add_flag("--only-ly", only_ly_flag, "gamma -> infinity mode");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test set");

  auto* ood_cmd = app.add_subcommand("ood", "OoD entropy increase and typicality AUC");
  std::string kinds = "rotate,noise,holdout,shift";
  double strength = -1.0;
  ood_cmd->add_option("--kinds", kinds, "comma list of rotate|noise|holdout|shift");
  ood_cmd->add_option("--strength", strength, "rotation angle / noise amplitude (-1: default)");

  auto* sample_cmd = app.add_subcommand("sample", "draw class-conditional samples");
  int sample_class = 1;
  int sample_count = 100;
  double temperature = 1.0;
  std::string sample_format = "csv";
  sample_cmd->add_option("--class", sample_class, "class label in {1..K}");
  sample_cmd->add_option("--count", sample_count, "number of samples");
  sample_cmd->add_option("--temperature", temperature, "latent temperature, >= 0");
  sample_cmd->add_option("--format", sample_format, "csv | binary");

  auto* interp_cmd = app.add_subcommand("interpolate", "latent-space interpolation");
  std::string xa, xb;
  int steps = 8;
  interp_cmd->add_option("--xa", xa, "first endpoint, comma-separated")->required();
  interp_cmd->add_option("--xb", xb, "second endpoint, comma-separated")->required();
  interp_cmd->add_option("--steps", steps, "trajectory length, >= 2");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  int gc_coords = 30;
  double gc_step = 1e-5;
  double gc_tol = 1e-4;
  gradcheck_cmd->add_option("--coords", gc_coords, "sampled parameter coordinates");
  gradcheck_cmd->add_option("--step", gc_step, "central-difference step");
  gradcheck_cmd->add_option("--tol", gc_tol, "max relative error to pass");

  auto* ssweep_cmd = app.add_subcommand("sigma-sweep", "train per sigma, emit CSV");
  std::string sweep_sigmas = "1e-4,2.5e-4,1e-3,4e-3,1.6e-2,6.3e-2,0.25";
  ssweep_cmd->add_option("--sigmas", sweep_sigmas, "comma list, >= 3 values");

  auto* gsweep_cmd = app.add_subcommand("gamma-sweep", "train per gamma, emit CSV");
  std::string sweep_gammas = "0.02,1,10";
  bool sweep_ood = false;
  gsweep_cmd->add_option("--gammas", sweep_gammas, "comma list, >= 2 values");
  gsweep_cmd->add_flag("--ood", sweep_ood, "include OoD metrics per gamma");

  auto* bound_cmd = app.add_subcommand("bound-check", "dequantization error vs analytic bound");
  int bound_levels = 16;
  std::string bound_sigmas = "0.1,0.25,0.5,1.0";
  int bound_trials = 20;
  bound_cmd->add_option("--levels", bound_levels, "quantization levels F");
  bound_cmd->add_option("--sigma-fractions", bound_sigmas, "sigma as fractions of delta_x");
  bound_cmd->add_option("--trials", bound_trials, "random distributions to test");

  auto* keys_cmd = app.add_subcommand("config-keys", "list config file keys");

  CLI11_PARSE(app, argc, argv);
  seed_set = app.count("--seed") > 0;

  try {
    if (!opt.config_path.empty()) load_config_file(opt, opt.config_path);
    if (seed_set) {
      opt.train.seed = seed_flag;
      opt.train.data.seed = seed_flag;
    }
    if (gamma_flag >= 0.0) opt.train.gamma = gamma_flag;
    if (sigma_flag > 0.0) opt.train.sigma = sigma_flag;
    if (only_ly_flag) opt.train.only_ly = true;

    if (keys_cmd->parsed()) {
      for (const auto& [key, doc] : config_key_docs()) {
        std::cout << key << "  -  " << doc << "\n";
      }
      return 0;
    }
    if (train_cmd->parsed()) return cmd_train(opt);
    if (eval_cmd->parsed()) return cmd_eval(opt);
    if (ood_cmd->parsed()) return cmd_ood(opt, kinds, strength);
    if (sample_cmd->parsed()) return cmd_sample(opt, sample_class, sample_count, temperature,
                                                sample_format);
    if (interp_cmd->parsed()) return cmd_interpolate(opt, xa, xb, steps);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(opt, gc_coords, gc_step, gc_tol);
    if (ssweep_cmd->parsed()) return cmd_sigma_sweep(opt, sweep_sigmas);
    if (gsweep_cmd->parsed()) return cmd_gamma_sweep(opt, sweep_gammas, sweep_ood);
    if (bound_cmd->parsed()) return cmd_bound_check(opt, bound_levels, bound_sigmas, bound_trials);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
