// Oracles and helpers shared by the test suites. Everything here is
// independent of the library's analytic code paths: determinants come from
// LU, Jacobians from central differences, integrals from Simpson quadrature.
#ifndef IBINN_TEST_SUPPORT_HPP
#define IBINN_TEST_SUPPORT_HPP

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ibinn/flow.hpp"
#include "ibinn/model.hpp"
#include "ibinn/rng.hpp"

namespace ibinn::test {

// log|det M| via LU with partial pivoting.
inline double log_abs_det(std::vector<dvec> m) {
  const std::size_t n = m.size();
  double log_det = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(m[i][k]) > std::abs(m[pivot][k])) pivot = i;
    }
    if (pivot != k) std::swap(m[pivot], m[k]);
    if (m[k][k] == 0.0) return -1e300;
    log_det += std::log(std::abs(m[k][k]));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m[i][k] / m[k][k];
      for (std::size_t j = k; j < n; ++j) m[i][j] -= f * m[k][j];
    }
  }
  return log_det;
}

// Central-difference Jacobian of the network map, row r = d z_r / d x_c.
inline std::vector<dvec> fd_jacobian(const FlowNetwork& net, const dvec& x, double h = 1e-5) {
  const int d = static_cast<int>(x.size());
  std::vector<dvec> jac(d, dvec(d, 0.0));
  dvec xp = x;
  dvec zp, zm;
  double ld = 0.0;
  for (int c = 0; c < d; ++c) {
    xp[c] = x[c] + h;
    net.forward(xp, zp, ld);
    xp[c] = x[c] - h;
    net.forward(xp, zm, ld);
    xp[c] = x[c];
    for (int r = 0; r < d; ++r) jac[r][c] = (zp[r] - zm[r]) / (2.0 * h);
  }
  return jac;
}

inline double fd_logdet(const FlowNetwork& net, const dvec& x, double h = 1e-5) {
  return log_abs_det(fd_jacobian(net, x, h));
}

// Composite Simpson with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2 != 0) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 0 ? 2.0 : 4.0);
  return s * h / 3.0;
}

// Discrete 1-D distribution on the grid {0, delta, 2 delta, ...}.
struct Discrete1D {
  dvec probs;
  double delta = 0.0;
};

inline double gauss_pdf(double u, double sigma) {
  return std::exp(-u * u / (2.0 * sigma * sigma)) / (std::sqrt(2.0 * std::acos(-1.0)) * sigma);
}

// p_eps(u): the discrete distribution convolved with N(0, sigma^2).
inline double mixture_density(const Discrete1D& p, double sigma, double u) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    s += p.probs[i] * gauss_pdf(u - i * p.delta, sigma);
  }
  return s;
}

// integral of f against p_eps, decomposed per atom so narrow Gaussians are
// resolved exactly regardless of sigma
inline double integrate_against_mixture(const Discrete1D& p, double sigma,
                                        const std::function<double(double)>& f, int intervals = 800) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] == 0.0) continue;
    const double c = i * p.delta;
    total += p.probs[i] * simpson([&](double u) { return gauss_pdf(u - c, sigma) * f(u); },
                                  c - 8.0 * sigma, c + 8.0 * sigma, intervals);
  }
  return total;
}

// differential entropy h(X_eps) by quadrature
inline double mixture_entropy(const Discrete1D& p, double sigma) {
  return integrate_against_mixture(
      p, sigma, [&](double u) { return -std::log(mixture_density(p, sigma, u)); });
}

// Perturbs every parameter block (subnet weights, means) so couplings are no
// longer the identity; scale is kept moderate to stay well-conditioned.
inline void randomize_params(std::vector<ParamRef> params, Rng& rng, double scale) {
  for (ParamRef& p : params) {
    for (double& v : *p.data) v += scale * rng.normal();
  }
}

inline FlowNetwork random_vector_flow(int d, int blocks, std::uint64_t seed, double scale = 0.3) {
  FlowConfig config;
  config.input = TensorShape::vector(d);
  config.blocks = blocks;
  config.subnet_hidden = {16, 16};
  FlowNetwork net = build_flow(config, seed);
  Rng rng = derive_rng(seed, "test-randomize");
  randomize_params(net.params(), rng, scale);
  return net;
}

inline Model random_model(int d, int k, int blocks, std::uint64_t seed, double scale = 0.3) {
  ModelConfig config;
  config.flow.input = TensorShape::vector(d);
  config.flow.blocks = blocks;
  config.flow.subnet_hidden = {16, 16};
  config.classes = k;
  Model model = build_model(config, seed);
  Rng rng = derive_rng(seed, "test-randomize");
  randomize_params(model.params(), rng, scale);
  return model;
}

}  // namespace ibinn::test

#endif  // IBINN_TEST_SUPPORT_HPP
