#include <cmath>
#include <memory>

#include "doctest.h"
#include "ibinn/loss.hpp"
#include "ibinn/metrics.hpp"
#include "test_support.hpp"

using namespace ibinn;

namespace {

// no layers: z = x, logdet = 0
Model identity_model(int d, int k) {
  Model m;
  m.net = FlowNetwork(TensorShape::vector(d));
  m.gmm = GmmLatent(d, k);
  return m;
}

Batch single(const dvec& x, int label) {
  Batch b;
  b.x.push_back(x);
  b.y.push_back(label);
  return b;
}

}  // namespace

TEST_CASE("noise spec validation and the paper default ratio") {
  NoiseSpec spec;
  CHECK(spec.sigma == 1e-3);
  CHECK(spec.sigma / spec.delta_x == doctest::Approx(0.256));
  spec.validate();

  spec.sigma = 0.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.sigma = -1.0;
  Rng rng(1);
  CHECK_THROWS_AS(add_noise({0.5}, spec, rng), std::invalid_argument);
}

TEST_CASE("vanishing sigma leaves inputs untouched") {
  NoiseSpec spec;
  spec.sigma = 1e-300;
  Rng rng(2);
  const dvec x = {0.5, 0.25, 0.75};
  CHECK(add_noise(x, spec, rng) == x);
}

TEST_CASE("noise standard deviation matches sigma empirically") {
  NoiseSpec spec;
  spec.sigma = 0.01;
  Rng rng(3);
  const int n = 1000000;
  double sq = 0.0;
  dvec eps;
  for (int i = 0; i < n / 100; ++i) {
    fill_noise(spec, 100, rng, eps);
    for (double e : eps) sq += e * e;
  }
  CHECK(std::sqrt(sq / n) == doctest::Approx(spec.sigma).epsilon(0.01));
}

TEST_CASE("L_X of the identity model at the mode is the normal NLL constant") {
  Model m = identity_model(2, 1);
  const double lx = loss_lx(single({0.0, 0.0}, 0), m);
  CHECK(lx == doctest::Approx(kLog2Pi).epsilon(1e-12));  // (d/2) log 2pi with d = 2
}

TEST_CASE("L_X estimates the entropy of standard normal data (Monte Carlo oracle)") {
  Model m = identity_model(1, 1);
  Rng rng(5);
  Batch batch;
  for (int i = 0; i < 100000; ++i) {
    batch.x.push_back({rng.normal()});
    batch.y.push_back(0);
  }
  const double entropy = 0.5 * kLog2Pi + 0.5;  // h(N(0,1)) = 1.4189 nats
  CHECK(loss_lx(batch, m) == doctest::Approx(entropy).epsilon(0.01));
}

TEST_CASE("appending a volume-preserving permutation leaves L_X unchanged") {
  Rng rng(7);
  Batch batch;
  for (int i = 0; i < 64; ++i) {
    batch.x.push_back({rng.normal(), rng.normal(), rng.normal()});
    batch.y.push_back(0);
  }
  Model plain = identity_model(3, 1);
  const double before = loss_lx(batch, plain);

  Model rotated = identity_model(3, 1);
  rotated.net.append(std::make_unique<SoftPermutation>(SoftPermutation::random(3, rng)));
  const double after = loss_lx(batch, rotated);
  CHECK(std::abs(after - before) < 1e-10);
}

TEST_CASE("L_X diagnostics name the layer that overflowed") {
  Model m = identity_model(2, 1);
  m.net.append(std::make_unique<FixedScaling>(dvec{1e300, 1e300}));
  m.net.append(std::make_unique<FixedScaling>(dvec{1e300, 1e300}));
  try {
    loss_lx(single({1.0, 1.0}, 0), m);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.where()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("L_Y at an equidistant point is log(1/K)") {
  Model m = identity_model(2, 4);
  m.gmm.mutable_mean(0) = {1.0, 0.0};
  m.gmm.mutable_mean(1) = {-1.0, 0.0};
  m.gmm.mutable_mean(2) = {0.0, 1.0};
  m.gmm.mutable_mean(3) = {0.0, -1.0};
  const double ly = loss_ly(single({0.0, 0.0}, 2), m, 0.0);
  CHECK(ly == doctest::Approx(std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("label smoothing keeps L_Y finite and strictly negative at certainty") {
  const int k = 10;
  Model m = identity_model(1, k);
  m.gmm.mutable_mean(0) = {0.0};
  for (int y = 1; y < k; ++y) m.gmm.mutable_mean(y) = {10.0 + y};
  const double smoothing = 0.05;
  const double ly = loss_ly(single({0.0}, 0), m, smoothing);
  CHECK(std::isfinite(ly));
  CHECK(ly < 0.0);

  // matches the convex combination of per-class log-posteriors directly
  const dvec lp = m.gmm.log_posterior({0.0});
  double manual = 0.0;
  for (int y = 0; y < k; ++y) {
    manual += (smoothing / k + (y == 0 ? 1.0 - smoothing : 0.0)) * lp[y];
  }
  CHECK(ly == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("L_Y reproduces the two-Gaussian closed form") {
  Model m = identity_model(1, 2);
  m.gmm.mutable_mean(0) = {1.0};
  m.gmm.mutable_mean(1) = {-1.0};
  const double ly = loss_ly(single({1.0}, 0), m, 0.0);
  const double sigmoid2 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(ly == doctest::Approx(std::log(sigmoid2)).epsilon(1e-10));
}

TEST_CASE("L_Y is never positive (log of a probability)") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Model m = test::random_model(3, 4, 2, 300 + trial);
    Batch batch;
    for (int i = 0; i < 16; ++i) {
      batch.x.push_back({rng.normal(), rng.normal(), rng.normal()});
      batch.y.push_back(static_cast<int>(rng.index(4)));
    }
    dvec per;
    loss_ly(batch, m, 0.05, &per);
    for (double v : per) CHECK(v <= 0.0);
  }
}

TEST_CASE("gamma = 0 reduces the total to pure density estimation") {
  Model m = test::random_model(2, 3, 2, 17);
  Rng rng(13);
  Batch batch;
  for (int i = 0; i < 8; ++i) {
    batch.x.push_back({rng.normal(), rng.normal()});
    batch.y.push_back(static_cast<int>(rng.index(3)));
  }
  LossConfig cfg;
  cfg.gamma = 0.0;
  const LossBreakdown bd = loss_total(batch, m, cfg);
  CHECK(bd.total == doctest::Approx(2.0 * bd.lx / 2.0).epsilon(1e-14));
  CHECK(bd.total == rebalanced_total(bd.lx, bd.ly, 2, cfg));

  cfg.gamma = -0.5;
  CHECK_THROWS_AS(loss_total(batch, m, cfg), std::invalid_argument);

  LossConfig only;
  only.only_ly = true;
  const LossBreakdown ly_only = loss_total(batch, m, only);
  CHECK(ly_only.total == doctest::Approx(-2.0 * ly_only.ly).epsilon(1e-14));
}

TEST_CASE("beta = 1 collapses to class-NLL (algebraic identity on random models)") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2 + static_cast<int>(rng.index(3));
    const int k = 2 + static_cast<int>(rng.index(3));
    Model m = test::random_model(d, k, 2, 400 + trial);
    Batch batch;
    for (int i = 0; i < 32; ++i) {
      dvec x(d);
      rng.fill_normal(x);
      batch.x.push_back(std::move(x));
      batch.y.push_back(static_cast<int>(rng.index(k)));
    }

    const double lx = loss_lx(batch, m);
    const double ly = loss_ly(batch, m, 0.0);

    // independent route: q(x|y) = q(z|y) |det J| and the prior term
    const dvec w = m.gmm.log_weights();
    double class_nll = 0.0;
    double mean_log_prior = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      dvec z;
      double logdet = 0.0;
      m.net.forward(batch.x[i], z, logdet);
      class_nll += -(m.gmm.log_lik_class(z, batch.y[i]) + logdet);
      mean_log_prior += w[batch.y[i]];
    }
    class_nll /= static_cast<double>(batch.size());
    mean_log_prior /= static_cast<double>(batch.size());

    CHECK(std::abs((lx - ly) - (class_nll - mean_log_prior)) < 1e-8);
  }
}

TEST_CASE("beta = 1 corresponds to gamma = 1/dim") {
  // for dim(X) = 3072 this is the paper's gamma ~ 3e-4
  CHECK(1.0 / 3072.0 == doctest::Approx(3.3e-4).epsilon(0.02));
  LossConfig cfg;
  cfg.gamma = 1.0 / 3072.0;
  cfg.validate();
}

TEST_CASE("CI(X,Z) estimate: unit Gaussian channel and the sigma-halving law") {
  const double lx = 0.5 * std::log(2.0 * std::acos(-1.0) * std::exp(1.0));
  CHECK(estimate_ci_xz(lx, 1, 1.0) == doctest::Approx(0.0).epsilon(1e-12));

  const double at_sigma = estimate_ci_xz(3.0, 4, 0.02);
  const double at_half = estimate_ci_xz(3.0, 4, 0.01);
  CHECK(at_half - at_sigma == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("CI(X,Z) estimate tracks true mutual information on a 1-D linear flow") {
  // continuous data N(0.5, 0.2^2); deliberately imperfect affine model so the
  // offset KL(p_eps || q_X) is visibly nonzero and should be sigma-stable
  const double data_mean = 0.5;
  const double data_std = 0.2;
  const double model_std = 0.25;
  const double model_mean = 0.52;

  Model m;
  m.net = FlowNetwork(TensorShape::vector(1));
  m.net.append(std::make_unique<FixedScaling>(dvec{1.0 / model_std}));
  m.gmm = GmmLatent(1, 1);
  m.gmm.mutable_mean(0) = {model_mean / model_std};

  auto p_x = [&](double x) { return test::gauss_pdf(x - data_mean, data_std); };
  const dvec sigmas = {1e-3, 3e-3, 1e-2};
  dvec offsets;
  for (double sigma : sigmas) {
    // p_eps by inner quadrature over the kernel's support (the kernel is far
    // narrower than the data scale), entropy and cross-entropy by outer
    // quadrature
    auto p_eps = [&](double u) {
      return test::simpson([&](double x) { return p_x(x) * test::gauss_pdf(u - x, sigma); },
                           u - 8.0 * sigma, u + 8.0 * sigma, 400);
    };
    const double lo = data_mean - 9.0 * data_std;
    const double hi = data_mean + 9.0 * data_std;
    const double h_eps =
        test::simpson([&](double u) { const double p = p_eps(u); return p > 0 ? -p * std::log(p) : 0.0; },
                      lo, hi, 1600);
    const double lx = test::simpson(
        [&](double u) { return p_eps(u) * negative_log_likelihood(m, {u}); }, lo, hi, 1600);

    const double true_i = h_eps - 0.5 * std::log(2.0 * std::acos(-1.0) * std::exp(1.0) * sigma * sigma);
    offsets.push_back(estimate_ci_xz(lx, 1, sigma) - true_i);
  }
  const double mean_offset = (offsets[0] + offsets[1] + offsets[2]) / 3.0;
  CHECK(mean_offset > 0.0);  // Prop. 2: the estimate upper-bounds I
  for (double o : offsets) {
    CHECK(std::abs(o - mean_offset) <= 0.05 * std::abs(mean_offset));
  }
}

TEST_CASE("quantization error bound: formula values and exact convolution") {
  const double delta = 1.0 / 8.0;
  dvec probs = {0.1, 0.2, 0.05, 0.15, 0.1, 0.1, 0.2, 0.1};

  QuantBoundResult tight = quantization_bound_check(probs, delta, 0.1 * delta);
  CHECK(tight.bound == doctest::Approx(std::exp(-50.0)).epsilon(1e-10));
  CHECK(tight.measured_max <= tight.bound);
  CHECK(tight.within_bound);

  QuantBoundResult loose = quantization_bound_check(probs, delta, delta);
  CHECK(loose.bound == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(loose.measured_max <= loose.bound);

  dvec atom(8, 0.0);
  atom[3] = 1.0;
  QuantBoundResult single_atom = quantization_bound_check(atom, delta, 0.25 * delta);
  // no other atoms contribute at the occupied level; neighbouring levels only
  // see the exponentially small leak, which stays within the bound
  CHECK(single_atom.per_level[3] == 0.0);
  CHECK(single_atom.measured_max <= single_atom.bound);

  dvec bad = {0.5, 0.6};
  CHECK_THROWS_AS(quantization_bound_check(bad, delta, 0.1), std::invalid_argument);
}

TEST_CASE("CI(Y,Z) diagnostic reinstates the prior entropy") {
  const dvec uniform4(4, 0.25);
  // perfectly classified: L_Y -> 0, so CI(Y,Z) -> H(Y) = log 4
  CHECK(estimate_ci_yz(0.0, uniform4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // chance-level posterior: L_Y = log(1/4), so CI(Y,Z) -> 0
  CHECK(estimate_ci_yz(std::log(0.25), uniform4) == doctest::Approx(0.0).epsilon(1e-12));
}
