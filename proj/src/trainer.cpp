#include "ibinn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace ibinn {

void TrainConfig::validate() const {
  data.validate();
  if (!only_ly && gamma < 0.0) throw std::invalid_argument("TrainConfig: gamma must be >= 0");
  if (!(sigma > 0.0)) throw std::invalid_argument("TrainConfig: sigma must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  }
  if (!(decay_factor > 0.0)) throw std::invalid_argument("TrainConfig: decay factor must be > 0");
  int prev = 0;
  for (int m : milestones) {
    if (m <= prev || m >= epochs) {
      throw std::invalid_argument(
          "TrainConfig: milestones must be strictly increasing and < epochs");
    }
    prev = m;
  }
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.gamma = gamma;
  c.only_ly = only_ly;
  c.smoothing = smoothing;
  return c;
}

double TrainConfig::lr_at_epoch(int epoch) const {
  double lr = learning_rate;
  for (int m : milestones) {
    if (m <= epoch) lr *= decay_factor;
  }
  return lr;
}

void sgd_step(const std::vector<ParamRef>& params, const GradientSet& grads,
              std::vector<dvec>& velocity, double lr, double momentum) {
  if (grads.blocks.size() != params.size()) {
    throw std::invalid_argument("sgd_step: gradient/parameter block mismatch");
  }
  if (velocity.size() != params.size()) {
    velocity.assign(params.size(), {});
    for (std::size_t b = 0; b < params.size(); ++b) velocity[b].assign(params[b].data->size(), 0.0);
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    dvec& p = *params[b].data;
    dvec& v = velocity[b];
    const dvec& g = grads.blocks[b];
    if (p.size() != g.size() || p.size() != v.size()) {
      throw std::invalid_argument("sgd_step: shape mismatch in block " + params[b].name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
    if (!all_finite(p)) throw NonFiniteError("parameter block " + params[b].name, "update");
  }
}

void data_dependent_init(FlowNetwork& net, std::span<const dvec> samples) {
  if (samples.empty()) throw std::invalid_argument("data_dependent_init: no samples");
  std::vector<dvec> acts(samples.begin(), samples.end());
  dvec out;
  double ld = 0.0;
  for (std::size_t li = 0; li < net.layer_count(); ++li) {
    auto* scaling = dynamic_cast<FixedScaling*>(&net.layer(li));
    if (scaling && scaling->needs_init()) {
      const std::size_t d = acts[0].size();
      dvec mean(d, 0.0);
      dvec sq(d, 0.0);
      for (const dvec& a : acts) {
        for (std::size_t j = 0; j < d; ++j) {
          mean[j] += a[j];
          sq[j] += a[j] * a[j];
        }
      }
      dvec scale(d);
      const double n = static_cast<double>(acts.size());
      for (std::size_t j = 0; j < d; ++j) {
        mean[j] /= n;
        const double var = std::max(sq[j] / n - mean[j] * mean[j], 0.0);
        scale[j] = 1.0 / std::clamp(std::sqrt(var), 1e-6, 1e6);
      }
      scaling->set_scale(std::move(scale));
    }
    for (dvec& a : acts) {
      net.layer(li).forward(a, out, ld, nullptr);
      a = out;
    }
  }
}

namespace {

std::string checkpoint_file(const std::string& out_dir, const char* name) {
  return (std::filesystem::path(out_dir) / name).string();
}

void log_row(std::ofstream& log, long step, const LossBreakdown& bd, double sigma, double lr) {
  if (!log.is_open()) return;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step, bd.lx, bd.ly,
                bd.total, bd.gamma, sigma, lr);
  log << buf;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::string& resume_checkpoint) {
  config.validate();

  TrainResult result;
  result.data = make_inlier(config.data);
  const Dataset& train_set = result.data.train;
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");

  ModelConfig mc = config.model;
  if (mc.flow.input.kind == TensorShape::Kind::Vector) {
    mc.flow.input = TensorShape::vector(train_set.dim);
  } else if (mc.flow.input.dim() != train_set.dim) {
    throw std::invalid_argument("train: image shape does not match the dataset dimension");
  }
  mc.classes = train_set.classes;

  int start_epoch = 0;
  std::vector<dvec> velocity;
  if (resume_checkpoint.empty()) {
    result.model = build_model(mc, config.seed);
    const std::size_t init_n = std::min<std::size_t>(config.batch_size, train_set.size());
    data_dependent_init(result.model.net,
                        std::span<const dvec>(train_set.x.data(), init_n));
  } else {
    std::optional<TrainerState> state;
    result.model = load_checkpoint(resume_checkpoint, &state);
    if (!state) throw std::runtime_error("train: checkpoint has no trainer state to resume from");
    start_epoch = static_cast<int>(state->epochs_done);
    velocity = std::move(state->velocity);
    if (start_epoch > config.epochs) {
      throw std::runtime_error("train: checkpoint is past the configured epoch count");
    }
  }

  Model& model = result.model;
  const auto params = model.params();
  GradientSet grads = GradientSet::zeros_like(params);
  const LossConfig loss_cfg = config.loss_config();
  const NoiseSpec noise = config.data.noise_spec(config.sigma);

  std::ofstream log;
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    result.loss_log_path = checkpoint_file(config.out_dir, "loss_log.csv");
    log.open(result.loss_log_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open " + result.loss_log_path);
    if (start_epoch == 0) log << "step,lx,ly,total,gamma,sigma,lr\n";
  }

  const long steps_per_epoch =
      (static_cast<long>(train_set.size()) + config.batch_size - 1) / config.batch_size;
  long step = start_epoch * steps_per_epoch;

  auto save_with_state = [&](const char* name, int epochs_done, double lr) {
    if (config.out_dir.empty()) return std::string{};
    TrainerState state;
    state.epochs_done = static_cast<std::uint32_t>(epochs_done);
    state.learning_rate = lr;
    state.velocity = velocity;
    const std::string path = checkpoint_file(config.out_dir, name);
    save_checkpoint(path, model, &state);
    return path;
  };

  std::vector<std::size_t> order(train_set.size());
  Batch batch;
  batch.noise = noise;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at_epoch(epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = derive_rng(config.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    Rng noise_rng = derive_rng(config.seed, "noise", static_cast<std::uint64_t>(epoch));

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      batch.x.clear();
      batch.y.clear();
      batch.eps.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch.x.push_back(train_set.x[order[i]]);
        batch.y.push_back(train_set.y[order[i]]);
        dvec eps;
        fill_noise(noise, batch.x.back().size(), noise_rng, eps);
        batch.eps.push_back(std::move(eps));
      }

      grads.zero();
      LossBreakdown bd;
      try {
        bd = backward(model, batch, loss_cfg, grads);
      } catch (const NonFiniteError& e) {
        throw std::runtime_error("train: aborted at step " + std::to_string(step) + ": " +
                                 e.what() + " (last checkpoint retained)");
      }
      if (!std::isfinite(bd.total) || std::abs(bd.total) > 1e6) {
        throw std::runtime_error("train: divergence at step " + std::to_string(step) +
                                 " (total=" + std::to_string(bd.total) +
                                 "); last checkpoint retained");
      }

      if (config.grad_clip > 0.0) {
        const double norm = grads.l2_norm();
        if (norm > config.grad_clip) grads.scale(config.grad_clip / norm);
      }
      try {
        sgd_step(params, grads, velocity, lr, config.momentum);
      } catch (const NonFiniteError& e) {
        throw std::runtime_error("train: aborted at step " + std::to_string(step) + ": " +
                                 e.what() + " (last checkpoint retained)");
      }
      if (model.gmm.hypersphere()) model.gmm.project_means();

      ++step;
      log_row(log, step, bd, config.sigma, lr);
      result.last_batch = bd;
    }

    const int done = epoch + 1;
    if (std::find(config.milestones.begin(), config.milestones.end(), done) !=
        config.milestones.end()) {
      save_with_state(("checkpoint_epoch" + std::to_string(done) + ".ibinn").c_str(), done,
                      config.lr_at_epoch(done));
    }
    result.epochs_done = done;
    result.final_lr = lr;
  }

  result.checkpoint_path = save_with_state("checkpoint.ibinn", result.epochs_done,
                                           config.lr_at_epoch(result.epochs_done));
  return result;
}

std::vector<GammaSweepRow> gamma_sweep(const TrainConfig& base, const std::vector<double>& gammas,
                                       bool include_ood) {
  if (gammas.size() < 2) throw std::invalid_argument("gamma_sweep: need at least 2 gamma values");
  std::vector<GammaSweepRow> rows;
  for (double g : gammas) {
    GammaSweepRow row;
    row.gamma = g;
    TrainConfig cfg = base;
    cfg.gamma = g;
    cfg.only_ly = false;
    if (!base.out_dir.empty()) {
      char sub[64];
      std::snprintf(sub, sizeof(sub), "gamma_%g", g);
      cfg.out_dir = (std::filesystem::path(base.out_dir) / sub).string();
    }
    try {
      TrainResult res = train(cfg);
      EvalConfig ec;
      ec.noise = cfg.data.noise_spec(cfg.sigma);
      ec.smoothing = cfg.smoothing;
      ec.seed = cfg.seed;
      row.metrics = evaluate_model(res.model, res.data.test, ec);
      if (include_ood) {
        const double h_hat = mean_nll(res.model, res.data.train);
        for (const char* kind : {"rotate", "noise", "holdout", "shift"}) {
          row.metrics.ood.push_back(evaluate_ood_set(res.model, res.data.test,
                                                     make_ood(cfg.data, kind, -1.0), h_hat, kind));
        }
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SigmaSweepRow> sigma_sweep(const TrainConfig& base, const std::vector<double>& sigmas) {
  if (sigmas.size() < 3) throw std::invalid_argument("sigma_sweep: need at least 3 sigma values");
  std::vector<SigmaSweepRow> rows;
  for (double s : sigmas) {
    SigmaSweepRow row;
    row.sigma = s;
    TrainConfig cfg = base;
    cfg.sigma = s;
    if (!base.out_dir.empty()) {
      char sub[64];
      std::snprintf(sub, sizeof(sub), "sigma_%g", s);
      cfg.out_dir = (std::filesystem::path(base.out_dir) / sub).string();
    }
    try {
      TrainResult res = train(cfg);
      EvalConfig ec;
      ec.noise = cfg.data.noise_spec(s);
      ec.smoothing = cfg.smoothing;
      ec.seed = cfg.seed;
      row.metrics = evaluate_model(res.model, res.data.test, ec);
      row.ci_xz_estimate = estimate_ci_xz(row.metrics.test_lx, res.model.dim(), s);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ibinn
