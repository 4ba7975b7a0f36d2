#include "ibinn/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace ibinn {

void NoiseSpec::validate() const {
  if (!(sigma > 0.0)) throw std::invalid_argument("NoiseSpec: sigma must be > 0");
  if (!(delta_x > 0.0)) throw std::invalid_argument("NoiseSpec: delta_x must be > 0");
  // levels == 0 marks continuous (unquantized) data
  if (levels != 0 && levels < 2) throw std::invalid_argument("NoiseSpec: at least 2 quantization levels");
}

dvec Batch::noisy(std::size_t i) const {
  dvec out = x[i];
  if (!eps.empty()) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += eps[i][k];
  }
  return out;
}

void LossConfig::validate() const {
  if (!only_ly && gamma < 0.0) throw std::invalid_argument("LossConfig: gamma must be >= 0");
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw std::invalid_argument("LossConfig: smoothing must be in [0, 1)");
  }
}

dvec add_noise(const dvec& x, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  dvec out = x;
  for (double& v : out) v += spec.sigma * rng.normal();
  return out;
}

void fill_noise(const NoiseSpec& spec, std::size_t dim, Rng& rng, dvec& eps) {
  spec.validate();
  eps.resize(dim);
  for (double& v : eps) v = spec.sigma * rng.normal();
}

namespace {

// Shared forward core: both losses use the same exponents
// a_y = w_y - 0.5 ||z - mu_y||^2 and the same logsumexp.
struct SampleLosses {
  double lx;
  double ly;
};

SampleLosses per_sample_losses(const Model& model, const dvec& x_noisy, int label,
                               double smoothing) {
  dvec z;
  double logdet = 0.0;
  model.net.forward(x_noisy, z, logdet);

  dvec a;
  model.gmm.exponents(z, a);
  const double lse = log_sum_exp(a);
  const int k = model.gmm.classes();
  const int d = model.gmm.dim();

  SampleLosses out{};
  out.lx = -(lse - 0.5 * d * kLog2Pi) - logdet;
  if (label >= 0) {
    if (label >= k) throw std::out_of_range("loss_LY: label outside [0, K)");
    const double spread = smoothing / k;
    double ly = 0.0;
    for (int y = 0; y < k; ++y) {
      double weight = spread;
      if (y == label) weight += 1.0 - smoothing;
      ly += weight * (a[y] - lse);
    }
    out.ly = ly;
  } else {
    out.ly = 0.0;
  }
  if (!std::isfinite(out.lx) || !std::isfinite(out.ly)) {
    throw NonFiniteError("loss evaluation (latent mixture term)", "loss");
  }
  return out;
}

}  // namespace

double loss_lx(const Batch& batch, const Model& model, dvec* per_sample) {
  if (batch.size() == 0) throw std::invalid_argument("loss_LX: empty batch");
  if (per_sample) per_sample->resize(batch.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lx = per_sample_losses(model, batch.noisy(i), -1, 0.0).lx;
    if (per_sample) (*per_sample)[i] = lx;
    sum += lx;
  }
  return sum / static_cast<double>(batch.size());
}

double loss_ly(const Batch& batch, const Model& model, double smoothing, dvec* per_sample) {
  if (batch.size() == 0) throw std::invalid_argument("loss_LY: empty batch");
  if (batch.y.size() != batch.size()) throw std::invalid_argument("loss_LY: missing labels");
  if (per_sample) per_sample->resize(batch.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double ly = per_sample_losses(model, batch.noisy(i), batch.y[i], smoothing).ly;
    if (per_sample) (*per_sample)[i] = ly;
    sum += ly;
  }
  return sum / static_cast<double>(batch.size());
}

double rebalanced_total(double lx, double ly, int dim, const LossConfig& config) {
  config.validate();
  if (config.only_ly) return -2.0 * ly;
  return 2.0 / (1.0 + config.gamma) * (lx / dim - config.gamma * ly);
}

LossBreakdown loss_total(const Batch& batch, const Model& model, const LossConfig& config) {
  config.validate();
  if (batch.size() == 0) throw std::invalid_argument("loss_total: empty batch");
  if (batch.y.size() != batch.size()) throw std::invalid_argument("loss_total: missing labels");

  LossBreakdown out;
  out.gamma = config.gamma;
  out.only_ly = config.only_ly;
  out.per_sample_lx.resize(batch.size());
  out.per_sample_ly.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SampleLosses s = per_sample_losses(model, batch.noisy(i), batch.y[i], config.smoothing);
    out.per_sample_lx[i] = s.lx;
    out.per_sample_ly[i] = s.ly;
    out.lx += s.lx;
    out.ly += s.ly;
  }
  out.lx /= static_cast<double>(batch.size());
  out.ly /= static_cast<double>(batch.size());
  out.total = rebalanced_total(out.lx, out.ly, model.dim(), config);
  return out;
}

double estimate_ci_xz(double lx, int dim, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("estimate_ci_xz: sigma must be > 0");
  const double e = std::exp(1.0);
  return lx - dim * std::log(std::sqrt(2.0 * std::acos(-1.0) * e * sigma * sigma));
}

double estimate_ci_yz(double ly_unsmoothed, const dvec& prior) {
  double h = 0.0;
  for (double p : prior) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h + ly_unsmoothed;
}

QuantBoundResult quantization_bound_check(const dvec& probs, double delta_x, double sigma) {
  if (probs.empty()) throw std::invalid_argument("quantization_bound_check: empty distribution");
  if (!(sigma > 0.0) || !(delta_x > 0.0)) {
    throw std::invalid_argument("quantization_bound_check: sigma and delta_x must be > 0");
  }
  double total = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("quantization_bound_check: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("quantization_bound_check: probabilities must sum to 1");
  }

  const int f = static_cast<int>(probs.size());
  QuantBoundResult out;
  out.bound = std::exp(-delta_x * delta_x / (2.0 * sigma * sigma));
  // Q~_j = p(X_eps = w_j) / r(0) = sum_i P_i exp(-(w_j - w_i)^2 / 2 sigma^2);
  // the i = j term contributes exactly P_j, the rest is the error Delta P_j.
  out.per_level.resize(f);
  for (int j = 0; j < f; ++j) {
    double err = 0.0;
    for (int i = 0; i < f; ++i) {
      if (i == j) continue;
      const double gap = (j - i) * delta_x;
      err += probs[i] * std::exp(-gap * gap / (2.0 * sigma * sigma));
    }
    out.per_level[j] = std::abs(err);
    out.measured_max = std::max(out.measured_max, out.per_level[j]);
  }
  out.within_bound = out.measured_max <= out.bound;
  return out;
}

}  // namespace ibinn
