#include "ibinn/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ibinn {

GmmLatent::GmmLatent(int dim, int classes) : dim_(dim), classes_(classes) {
  if (dim < 1) throw std::invalid_argument("GmmLatent: dim must be positive");
  if (classes < 1) throw std::invalid_argument("GmmLatent: class count must be positive");
  means_.assign(classes, dvec(dim, 0.0));
  phi_.assign(classes, 0.0);
}

void GmmLatent::init_means(Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (auto& mu : means_) {
    for (double& x : mu) x = scale * rng.normal();
  }
  if (hypersphere_) project_means();
}

void GmmLatent::check_class(int y) const {
  if (y < 0 || y >= classes_) {
    throw std::out_of_range("GmmLatent: class index " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes_) + ")");
  }
}

double GmmLatent::log_lik_class(const dvec& z, int y) const {
  check_class(y);
  if (z.size() != static_cast<std::size_t>(dim_)) {
    throw std::invalid_argument("log_lik_class: dimension mismatch");
  }
  return -0.5 * squared_distance(z, means_[y]) - 0.5 * dim_ * kLog2Pi;
}

dvec GmmLatent::log_weights() const {
  // log_softmax(phi); with phi = 0 this is the uniform -log K
  dvec w = phi_;
  const double lse = log_sum_exp(w);
  for (double& x : w) x -= lse;
  return w;
}

void GmmLatent::exponents(const dvec& z, dvec& out) const {
  const dvec w = log_weights();
  out.resize(classes_);
  for (int y = 0; y < classes_; ++y) {
    out[y] = w[y] - 0.5 * squared_distance(z, means_[y]);
  }
}

double GmmLatent::log_marginal(const dvec& z) const {
  dvec a;
  exponents(z, a);
  return log_sum_exp(a) - 0.5 * dim_ * kLog2Pi;
}

void GmmLatent::log_posterior(const dvec& z, dvec& out) const {
  exponents(z, out);
  const double lse = log_sum_exp(out);
  for (double& x : out) x -= lse;
}

dvec GmmLatent::log_posterior(const dvec& z) const {
  dvec out;
  log_posterior(z, out);
  return out;
}

void GmmLatent::sample_latent(int y, double temperature, Rng& rng, dvec& out) const {
  check_class(y);
  if (temperature < 0.0) throw std::invalid_argument("sample_latent: temperature must be >= 0");
  out = means_[y];
  for (double& x : out) x += temperature * rng.normal();
}

const dvec& GmmLatent::mean(int y) const {
  check_class(y);
  return means_[y];
}

dvec& GmmLatent::mutable_mean(int y) {
  check_class(y);
  return means_[y];
}

void GmmLatent::set_hypersphere(bool enabled, double radius) {
  hypersphere_ = enabled;
  radius_ = radius > 0.0 ? radius : std::sqrt(static_cast<double>(dim_));
}

void GmmLatent::project_means() {
  if (!hypersphere_) return;
  for (auto& mu : means_) {
    double norm = 0.0;
    for (double x : mu) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // degenerate mean: place it on the first axis
      std::fill(mu.begin(), mu.end(), 0.0);
      mu[0] = radius_;
      continue;
    }
    const double f = radius_ / norm;
    for (double& x : mu) x *= f;
  }
}

std::vector<ParamRef> GmmLatent::params() {
  std::vector<ParamRef> refs;
  for (int y = 0; y < classes_; ++y) {
    refs.push_back({"gmm.mean" + std::to_string(y), &means_[y]});
  }
  if (learnable_phi_) refs.push_back({"gmm.phi", &phi_});
  return refs;
}

}  // namespace ibinn
