#ifndef IBINN_LOSS_HPP
#define IBINN_LOSS_HPP

#include <vector>

#include "ibinn/common.hpp"
#include "ibinn/model.hpp"
#include "ibinn/rng.hpp"

namespace ibinn {

// Dequantization noise: sigma in data units, with the quantization step and
// level count the data was produced with. The small-noise regime the loss
// derivation assumes holds for sigma <~ 0.25 * delta_x.
struct NoiseSpec {
  double sigma = 1e-3;
  double delta_x = 1.0 / 256.0;
  int levels = 256;

  void validate() const;
};

// One training batch: clean inputs, labels, and the noise realizations
// actually used, so a loss evaluation is a pure function of the batch.
struct Batch {
  std::vector<dvec> x;
  std::vector<int> y;
  std::vector<dvec> eps;  // empty: no dequantization noise
  NoiseSpec noise;

  std::size_t size() const { return x.size(); }
  dvec noisy(std::size_t i) const;
};

struct LossConfig {
  double gamma = 1.0;
  bool only_ly = false;  // the gamma -> infinity row: optimize -2 * L_Y alone
  double smoothing = 0.05;

  void validate() const;
};

struct LossBreakdown {
  double lx = 0.0;
  double ly = 0.0;
  double total = 0.0;
  double gamma = 0.0;
  bool only_ly = false;
  dvec per_sample_lx;
  dvec per_sample_ly;
};

dvec add_noise(const dvec& x, const NoiseSpec& spec, Rng& rng);
void fill_noise(const NoiseSpec& spec, std::size_t dim, Rng& rng, dvec& eps);

// L_X: mean of -log q(g(x+eps)) - log|det J|, the exact NLL of the perturbed
// data (constants kept so bits/dim follows directly).
double loss_lx(const Batch& batch, const Model& model, dvec* per_sample = nullptr);

// L_Y: mean smoothed log-posterior, in nats; <= 0 always. Maximized by the
// training objective. Target weights are (1 - s) on the true class plus s/K
// spread over all classes.
double loss_ly(const Batch& batch, const Model& model, double smoothing,
               dvec* per_sample = nullptr);

// Rebalanced objective: total = (2 / (1 + gamma)) * (L_X / d - gamma * L_Y);
// the only-L_Y mode uses the gamma -> infinity limit, total = -2 * L_Y.
double rebalanced_total(double lx, double ly, int dim, const LossConfig& config);

LossBreakdown loss_total(const Batch& batch, const Model& model, const LossConfig& config);

// CI(X, Z_eps) estimate: L_X - d * log sqrt(2 pi e sigma^2). Slope diagnostic
// only; diverges as sigma -> 0 by design.
double estimate_ci_xz(double lx, int dim, double sigma);

// CI(Y, Z_eps) estimate: H(Y) + unsmoothed L_Y, with the model-independent
// entropy of the prior reinstated.
double estimate_ci_yz(double ly_unsmoothed, const dvec& prior);

// Density error introduced by Gaussian dequantization of a discrete 1-D
// distribution on the grid {0, delta_x, ..., (F-1) delta_x}: recovers
// Q~_j = p(X_eps = w_j) / r(0) by exact convolution and compares the worst
// deviation from P against the analytic bound exp(-delta_x^2 / (2 sigma^2)).
struct QuantBoundResult {
  double measured_max = 0.0;
  double bound = 0.0;
  bool within_bound = false;
  dvec per_level;  // |Q~_j - P_j| for each level
};
QuantBoundResult quantization_bound_check(const dvec& probs, double delta_x, double sigma);

}  // namespace ibinn

#endif  // IBINN_LOSS_HPP
