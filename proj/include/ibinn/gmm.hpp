#ifndef IBINN_GMM_HPP
#define IBINN_GMM_HPP

#include <vector>

#include "ibinn/common.hpp"
#include "ibinn/flow.hpp"
#include "ibinn/rng.hpp"

namespace ibinn {

// Class-conditional unit-covariance Gaussian mixture in latent space:
// q(z|y) = N(z; mu_y, I), q(z) = sum_y p(y) q(z|y). Class log-priors come
// from w = log_softmax(phi); phi stays fixed at 0 (uniform prior) unless
// learnable_phi is set, in which case only density-loss gradients reach it.
class GmmLatent {
 public:
  GmmLatent() = default;
  GmmLatent(int dim, int classes);

  // i.i.d. normal scaled by 1/sqrt(dim) so initial clusters overlap; with the
  // hypersphere constraint, means start on the sphere of the given radius.
  void init_means(Rng& rng);

  int dim() const { return dim_; }
  int classes() const { return classes_; }

  // log q(z|y) with all constants kept: -0.5 ||z - mu_y||^2 - (d/2) log(2 pi)
  double log_lik_class(const dvec& z, int y) const;

  // log q(z), stable for ||z - mu||^2 ~ 1e4
  double log_marginal(const dvec& z) const;

  // log q(y|z) for all classes; exponentials sum to 1
  void log_posterior(const dvec& z, dvec& out) const;
  dvec log_posterior(const dvec& z) const;

  // mu_y + temperature * n, n ~ N(0, I); temperature 0 yields the mean itself
  void sample_latent(int y, double temperature, Rng& rng, dvec& out) const;

  const dvec& mean(int y) const;
  dvec& mutable_mean(int y);
  dvec log_weights() const;  // w_y = log_softmax(phi)

  bool learnable_phi() const { return learnable_phi_; }
  void set_learnable_phi(bool enabled) { learnable_phi_ = enabled; }
  const dvec& phi() const { return phi_; }
  dvec& mutable_phi() { return phi_; }

  bool hypersphere() const { return hypersphere_; }
  double hypersphere_radius() const { return radius_; }
  // Fix ||mu_y|| = radius (default sqrt(d)); project_means() restores the
  // constraint after an optimizer step.
  void set_hypersphere(bool enabled, double radius = 0.0);
  void project_means();

  // Parameter blocks for the optimizer / checkpoint: one block per mean,
  // plus phi when learnable.
  std::vector<ParamRef> params();

  // exponents a_y = w_y - 0.5 ||z - mu_y||^2 shared by marginal and posterior
  void exponents(const dvec& z, dvec& out) const;

 private:
  void check_class(int y) const;

  int dim_ = 0;
  int classes_ = 0;
  std::vector<dvec> means_;
  dvec phi_;
  bool learnable_phi_ = false;
  bool hypersphere_ = false;
  double radius_ = 0.0;
};

}  // namespace ibinn

#endif  // IBINN_GMM_HPP
