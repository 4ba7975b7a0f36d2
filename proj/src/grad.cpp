#include "ibinn/grad.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ibinn {

GradientSet GradientSet::zeros_like(const std::vector<ParamRef>& params) {
  GradientSet g;
  g.blocks.reserve(params.size());
  for (const ParamRef& p : params) g.blocks.emplace_back(p.data->size(), 0.0);
  return g;
}

void GradientSet::zero() {
  for (dvec& b : blocks) std::fill(b.begin(), b.end(), 0.0);
}

double GradientSet::l2_norm() const {
  double s = 0.0;
  for (const dvec& b : blocks) {
    for (double x : b) s += x * x;
  }
  return std::sqrt(s);
}

void GradientSet::scale(double factor) {
  for (dvec& b : blocks) {
    for (double& x : b) x *= factor;
  }
}

void GradientSet::check_finite(const std::vector<ParamRef>& params) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!all_finite(blocks[i])) {
      throw NonFiniteError("gradient block " + params[i].name, "gradient");
    }
  }
}

LossBreakdown backward(Model& model, const Batch& batch, const LossConfig& config,
                       GradientSet& grads) {
  config.validate();
  if (batch.size() == 0) throw std::invalid_argument("backward: empty batch");
  if (batch.y.size() != batch.size()) throw std::invalid_argument("backward: missing labels");

  const auto params = model.params();
  if (grads.blocks.size() != params.size()) grads = GradientSet::zeros_like(params);

  const int d = model.dim();
  const int k = model.classes();
  const double n = static_cast<double>(batch.size());
  // chain weights of the rebalanced total w.r.t. the two mean losses
  const double c_lx = config.only_ly ? 0.0 : 2.0 / ((1.0 + config.gamma) * d);
  const double c_ly = config.only_ly ? -2.0 : -2.0 * config.gamma / (1.0 + config.gamma);

  const std::size_t net_blocks = model.net.params().size();
  auto net_grads = std::span<dvec>(grads.blocks.data(), net_blocks);
  // mean blocks follow the network blocks; phi (if present) is last
  const bool has_phi = model.gmm.learnable_phi();

  LossBreakdown out;
  out.gamma = config.gamma;
  out.only_ly = config.only_ly;
  out.per_sample_lx.resize(batch.size());
  out.per_sample_ly.resize(batch.size());

  FlowNetwork::ForwardCache cache = model.net.make_cache();
  const dvec w = model.gmm.log_weights();
  const double spread = config.smoothing / k;

  dvec z, a, resp, dz, dx;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const dvec x_noisy = batch.noisy(i);
    const int label = batch.y[i];
    if (label < 0 || label >= k) throw std::out_of_range("backward: label outside [0, K)");

    double logdet = 0.0;
    model.net.forward(x_noisy, z, logdet, &cache);
    model.gmm.exponents(z, a);
    const double lse = log_sum_exp(a);

    const double lx = -(lse - 0.5 * d * kLog2Pi) - logdet;
    double ly = 0.0;
    resp.resize(k);
    for (int y = 0; y < k; ++y) {
      resp[y] = std::exp(a[y] - lse);
      double weight = spread;
      if (y == label) weight += 1.0 - config.smoothing;
      ly += weight * (a[y] - lse);
    }
    out.per_sample_lx[i] = lx;
    out.per_sample_ly[i] = ly;
    out.lx += lx;
    out.ly += ly;

    // dT/da_y for this sample; both losses share the exponents a_y
    dz.assign(d, 0.0);
    double sum_ga = 0.0;
    for (int y = 0; y < k; ++y) {
      double target = spread;
      if (y == label) target += 1.0 - config.smoothing;
      const double g_a = (c_lx * (-resp[y]) + c_ly * (target - resp[y])) / n;
      sum_ga += g_a;
      const dvec& mu = model.gmm.mean(y);
      dvec& gmu = grads.blocks[net_blocks + y];
      for (int j = 0; j < d; ++j) {
        const double diff = z[j] - mu[j];
        dz[j] -= g_a * diff;  // da_y/dz = -(z - mu_y)
        gmu[j] += g_a * diff;  // da_y/dmu_y = (z - mu_y)
      }
    }
    (void)sum_ga;

    if (has_phi) {
      // Only the L_X route reaches phi (the L_Y bound breaks otherwise);
      // chain through w = log_softmax(phi).
      dvec& gphi = grads.blocks.back();
      dvec sm(k);
      double t_sum = 0.0;
      for (int y = 0; y < k; ++y) {
        sm[y] = std::exp(w[y]);  // softmax(phi) = exp(log_softmax(phi))
        t_sum += c_lx * (-resp[y]) / n;
      }
      for (int y = 0; y < k; ++y) {
        gphi[y] += c_lx * (-resp[y]) / n - sm[y] * t_sum;
      }
    }

    const double dlogdet = -c_lx / n;
    model.net.backward(cache, dz, dlogdet, dx, net_grads);
  }

  out.lx /= n;
  out.ly /= n;
  out.total = rebalanced_total(out.lx, out.ly, d, config);
  grads.check_finite(params);
  return out;
}

GradCheckReport grad_check(Model& model, const Batch& batch, const LossConfig& config,
                           int n_coords, double h, double tol, Rng& rng) {
  if (n_coords < 1) throw std::invalid_argument("grad_check: need at least one coordinate");
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");

  auto params = model.params();
  GradientSet grads = GradientSet::zeros_like(params);
  backward(model, batch, config, grads);

  // phi is excluded: its analytic gradient keeps only the density-loss route
  // (the posterior-loss route would break the bound), so a central difference
  // of the total objective would disagree by construction.
  const auto skip = [&](std::size_t b) { return params[b].name == "gmm.phi"; };
  std::size_t total_coords = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (!skip(b)) total_coords += params[b].data->size();
  }
  if (total_coords == 0) throw std::invalid_argument("grad_check: model has no parameters");

  GradCheckReport report;
  report.step = h;
  report.tolerance = tol;
  for (int c = 0; c < n_coords; ++c) {
    std::size_t flat = rng.index(total_coords);
    std::size_t block = 0;
    while (skip(block) || flat >= params[block].data->size()) {
      if (!skip(block)) flat -= params[block].data->size();
      ++block;
    }
    double& coord = (*params[block].data)[flat];
    const double saved = coord;

    coord = saved + h;
    const double plus = loss_total(batch, model, config).total;
    coord = saved - h;
    const double minus = loss_total(batch, model, config).total;
    coord = saved;

    GradCheckReport::Probe probe;
    probe.block = params[block].name;
    probe.index = flat;
    probe.analytic = grads.blocks[block][flat];
    probe.numeric = (plus - minus) / (2.0 * h);
    const double denom = std::max(std::abs(probe.analytic), std::abs(probe.numeric));
    probe.rel_error = denom < 1e-10 ? 0.0 : std::abs(probe.analytic - probe.numeric) / denom;

    auto [it, inserted] = report.per_block_max.try_emplace(probe.block, probe.rel_error);
    if (!inserted) it->second = std::max(it->second, probe.rel_error);
    report.max_rel_error = std::max(report.max_rel_error, probe.rel_error);
    report.probes.push_back(std::move(probe));
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace ibinn
