#ifndef IBINN_TRAINER_HPP
#define IBINN_TRAINER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ibinn/checkpoint.hpp"
#include "ibinn/datasets.hpp"
#include "ibinn/grad.hpp"
#include "ibinn/metrics.hpp"
#include "ibinn/model.hpp"

namespace ibinn {

struct TrainConfig {
  ModelConfig model;
  DatasetSpec data;

  double gamma = 1.0;
  bool only_ly = false;
  double sigma = 1e-3;
  double smoothing = 0.05;

  // Schedule shape follows the large-scale recipe (SGD + momentum 0.9,
  // batch 128, decay 10x at 40/70/90 of 100 epochs). The base rate is scaled
  // down for low-dimensional data: the loss normalizes L_X by dim(X), so at
  // d ~ 2 the raw 0.07 of the image-scale setup sits far above the momentum
  // stability limit and diverges within a few steps.
  double learning_rate = 0.005;
  double momentum = 0.9;
  int batch_size = 128;
  int epochs = 100;
  std::vector<int> milestones = {40, 70, 90};  // 1-based epoch counts
  double decay_factor = 0.1;
  double grad_clip = 50.0;  // global gradient norm; 0 disables
  std::uint64_t seed = 0;

  std::string out_dir;  // empty: no checkpoint/log files

  void validate() const;
  LossConfig loss_config() const;
  // lr during (0-based) epoch e: lr0 * factor^|{m in milestones : m <= e}|
  double lr_at_epoch(int epoch) const;
};

struct TrainResult {
  Model model;
  TrainTest data;
  LossBreakdown last_batch;
  int epochs_done = 0;
  double final_lr = 0.0;
  std::string checkpoint_path;  // empty when out_dir is empty
  std::string loss_log_path;
};

// Classical momentum: v <- momentum v + g; p <- p - lr v. Throws (keeping
// parameters untouched is not possible mid-update, but the last checkpoint
// on disk survives) when an update stops being finite.
void sgd_step(const std::vector<ParamRef>& params, const GradientSet& grads,
              std::vector<dvec>& velocity, double lr, double momentum);

// ActNorm-style initialization: walks the stack with the given samples and
// sets every pending FixedScaling so its output has unit variance per
// dimension, freezing it afterwards.
void data_dependent_init(FlowNetwork& net, std::span<const dvec> samples);

// Deterministic given the config: the checkpoint bytes are identical across
// runs. resume_checkpoint continues a partial run and reproduces the
// uninterrupted result exactly (checkpoints are cut at epoch boundaries).
TrainResult train(const TrainConfig& config, const std::string& resume_checkpoint = "");

struct GammaSweepRow {
  double gamma = 0.0;
  bool only_ly = false;
  bool failed = false;
  std::string error;
  MetricsReport metrics;
};

// One model per gamma with shared seed and data; per-gamma failures are
// recorded and the sweep continues.
std::vector<GammaSweepRow> gamma_sweep(const TrainConfig& base, const std::vector<double>& gammas,
                                       bool include_ood = false);

struct SigmaSweepRow {
  double sigma = 0.0;
  bool failed = false;
  std::string error;
  MetricsReport metrics;
  double ci_xz_estimate = 0.0;
};

std::vector<SigmaSweepRow> sigma_sweep(const TrainConfig& base, const std::vector<double>& sigmas);

}  // namespace ibinn

#endif  // IBINN_TRAINER_HPP
