#include <cmath>

#include "doctest.h"
#include "ibinn/loss.hpp"
#include "ibinn/metrics.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace ibinn;

TEST_CASE("bits/dim formula: direct value and the uniform baseline") {
  CHECK(bits_per_dim(-4.0 * 3 * kLn2, 3, 256) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(bits_per_dim(0.0, 5, 256) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(bits_per_dim_continuous(kLn2 * 6, 2) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK_THROWS_AS(bits_per_dim(1.0, 2, 1), std::invalid_argument);
}

TEST_CASE("bits/dim recovers the discrete entropy via the dequantization recovery rule") {
  // discrete P with a known entropy, model = exact Gaussian convolution;
  // Q~_j = q(X_eps = w_j) / r(0), encoded as a flat density on [0,1]
  const int f = 8;
  const double delta = 1.0 / f;
  const dvec probs = {0.3, 0.05, 0.2, 0.1, 0.05, 0.15, 0.1, 0.05};
  double h_bits = 0.0;
  for (double p : probs) h_bits -= p * std::log2(p);

  dvec errors;
  for (double sigma_frac : {0.1, 0.05}) {
    const double sigma = sigma_frac * delta;
    double nll_nats = 0.0;
    for (int j = 0; j < f; ++j) {
      if (probs[j] == 0.0) continue;
      // exact convolution, normalized by the noise peak r(0)
      double recovered = 0.0;
      for (int i = 0; i < f; ++i) {
        const double gap = (j - i) * delta;
        recovered += probs[i] * std::exp(-gap * gap / (2.0 * sigma * sigma));
      }
      nll_nats += probs[j] * -std::log(recovered * f);
    }
    const double bpd = bits_per_dim(nll_nats, 1, f);
    errors.push_back(std::abs(bpd - h_bits));
    CHECK(errors.back() < 0.01);
  }
  CHECK(errors[1] <= errors[0]);  // error vanishes as sigma -> 0
}

TEST_CASE("calibration bin edges follow the tighter spacing near 0 and 1") {
  const auto edges = calibration_bin_edges();
  REQUIRE(edges.size() == 20);
  CHECK(edges.front() == 0.0);
  CHECK(edges.back() == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 1; i < edges.size(); ++i) CHECK(edges[i] > edges[i - 1]);
  CHECK(edges[1] == doctest::Approx(0.01));
  CHECK(edges[5] == doctest::Approx(0.05));
  CHECK(edges[6] == doctest::Approx(0.15));
  CHECK(edges[14] == doctest::Approx(0.95));
  CHECK(edges[15] == doctest::Approx(0.96));
}

TEST_CASE("perfectly calibrated stream scores zero on every metric") {
  std::vector<double> conf;
  std::vector<std::uint8_t> correct;
  // bins centered at 0.3, 0.5, 0.7: fill each with accuracy equal to its center
  for (const auto& [center, n] : {std::pair{0.3, 400}, {0.5, 400}, {0.7, 400}}) {
    const int hits = static_cast<int>(center * n);
    for (int i = 0; i < n; ++i) {
      conf.push_back(center);
      correct.push_back(i < hits ? 1 : 0);
    }
  }
  const CalibrationReport report = calibration_report(conf, correct);
  CHECK(report.ece == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.mce == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.ice == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("single-bin example: 100 predictions at the 0.5 bin, 75 correct") {
  std::vector<double> conf(100, 0.5);
  std::vector<std::uint8_t> correct(100, 0);
  for (int i = 0; i < 75; ++i) correct[i] = 1;
  const CalibrationReport report = calibration_report(conf, correct);
  CHECK(report.ece == doctest::Approx(0.25).epsilon(1e-12));   // weight 1
  CHECK(report.mce == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(report.ice == doctest::Approx(0.1 * 0.25).epsilon(1e-9));  // bin width 0.1
  CHECK(report.geo_mean ==
        doctest::Approx(std::cbrt(report.ece * report.mce * report.ice)).epsilon(1e-12));
}

TEST_CASE("always-confident classifier lands in the top bin") {
  std::vector<double> conf(100, 1.0);
  std::vector<std::uint8_t> correct(100, 0);
  for (int i = 0; i < 90; ++i) correct[i] = 1;
  const CalibrationReport report = calibration_report(conf, correct);
  CHECK(report.ece == doctest::Approx(std::abs(0.995 - 0.9)).epsilon(1e-9));
  CHECK(report.mce == doctest::Approx(0.095).epsilon(1e-9));
}

TEST_CASE("calibration metrics are permutation-invariant") {
  Rng rng(31);
  std::vector<double> conf;
  std::vector<std::uint8_t> correct;
  for (int i = 0; i < 500; ++i) {
    conf.push_back(rng.uniform());
    correct.push_back(rng.uniform() < conf.back() ? 1 : 0);
  }
  const CalibrationReport a = calibration_report(conf, correct);

  std::vector<std::size_t> order(conf.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<double> conf2;
  std::vector<std::uint8_t> correct2;
  for (std::size_t i : order) {
    conf2.push_back(conf[i]);
    correct2.push_back(correct[i]);
  }
  const CalibrationReport b = calibration_report(conf2, correct2);
  CHECK(a.ece == b.ece);
  CHECK(a.mce == b.mce);
  CHECK(a.ice == b.ice);
}

TEST_CASE("latent posterior equals the full-likelihood Bayes route") {
  Model m = test::random_model(3, 4, 2, 1000);
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    dvec x(3);
    rng.fill_normal(x);
    const dvec post = predict(m, x);

    // independent route with the Jacobian kept in: q(x|y) p(y)
    dvec z;
    double logdet = 0.0;
    m.net.forward(x, z, logdet);
    const dvec w = m.gmm.log_weights();
    dvec joint(4);
    for (int y = 0; y < 4; ++y) joint[y] = m.gmm.log_lik_class(z, y) + logdet + w[y];
    const double lse = log_sum_exp(joint);
    double total = 0.0;
    for (int y = 0; y < 4; ++y) {
      CHECK(std::abs(post[y] - std::exp(joint[y] - lse)) < 1e-10);
      total += post[y];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("symmetric two-class model predicts (0.5, 0.5) at the midpoint") {
  Model m;
  m.net = FlowNetwork(TensorShape::vector(2));
  m.gmm = GmmLatent(2, 2);
  m.gmm.mutable_mean(0) = {1.0, 1.0};
  m.gmm.mutable_mean(1) = {-1.0, -1.0};
  const dvec post = predict(m, {0.0, 0.0});
  CHECK(post[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(post[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("entropy increase: identical sets, entropy extremes, and the binary case") {
  const dvec uniform = {0.25, 0.25, 0.25, 0.25};
  const dvec onehot = {1.0, 0.0, 0.0, 0.0};
  CHECK(discrete_entropy(uniform) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(discrete_entropy(onehot) == 0.0);

  const dvec same = {0.3, 0.5};
  CHECK(ood_entropy_increase(same, same) == 0.0);

  const dvec h_in = {discrete_entropy(dvec{0.9, 0.1})};
  const dvec h_ood = {discrete_entropy(dvec{0.6, 0.4})};
  CHECK(ood_entropy_increase(h_in, h_ood) == doctest::Approx(0.6730 - 0.3251).epsilon(1e-3));
}

TEST_CASE("typicality AUC: disjoint scores, self-comparison, and degenerate input") {
  const dvec low = {0.1, 0.2, 0.3};
  const dvec high = {5.0, 6.0, 7.0};
  CHECK(typicality_ood_auc(low, high).auc_percent == doctest::Approx(100.0));

  Rng rng(37);
  dvec self(500);
  for (double& s : self) s = rng.uniform();
  const TypicalityResult self_auc = typicality_ood_auc(self, self);
  CHECK(self_auc.auc_percent == doctest::Approx(50.0).epsilon(0.02));
  CHECK_FALSE(self_auc.degenerate);

  const dvec flat_a(10, 1.0);
  const dvec flat_b(20, 1.0);
  const TypicalityResult flat = typicality_ood_auc(flat_a, flat_b);
  CHECK(flat.auc_percent == 50.0);
  CHECK(flat.degenerate);
}

TEST_CASE("AUC is invariant under strictly monotone score transforms") {
  Rng rng(41);
  dvec in(200), ood(200);
  for (double& s : in) s = rng.normal();
  for (double& s : ood) s = rng.normal() + 1.0;
  const double base = typicality_ood_auc(in, ood).auc_percent;

  auto transform = [](dvec v) {
    for (double& s : v) s = std::exp(0.5 * s) + 3.0;
    return v;
  };
  CHECK(typicality_ood_auc(transform(in), transform(ood)).auc_percent ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("typicality separates a unit Gaussian from a shifted one (analytic oracle)") {
  Model m;
  m.net = FlowNetwork(TensorShape::vector(1));
  m.gmm = GmmLatent(1, 1);  // exact N(0,1) model

  Rng rng(43);
  Dataset in_set, ood_set;
  in_set.dim = ood_set.dim = 1;
  for (int i = 0; i < 10000; ++i) {
    in_set.x.push_back({rng.normal()});
    ood_set.x.push_back({rng.normal() + 5.0});
  }
  const double h_hat = mean_nll(m, in_set);
  dvec s_in = nll_scores(m, in_set);
  dvec s_ood = nll_scores(m, ood_set);
  for (double& s : s_in) s = typicality_score(s, h_hat);
  for (double& s : s_ood) s = typicality_score(s, h_hat);
  CHECK(typicality_ood_auc(s_in, s_ood).auc_percent >= 99.0);
}

TEST_CASE("ROC points sweep from (0,0) to (1,1) monotonically") {
  const dvec in = {0.1, 0.4, 0.35, 0.8};
  const dvec ood = {0.9, 0.5, 1.2, 0.3};
  const auto points = roc_points(in, ood);
  CHECK(points.front() == std::pair{0.0, 0.0});
  CHECK(points.back() == std::pair{1.0, 1.0});
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].first >= points[i - 1].first);
    CHECK(points[i].second >= points[i - 1].second);
  }
}

TEST_CASE("model evaluation reuses the L_X path for bits/dim and reports coherent JSON") {
  DatasetSpec spec;
  spec.generator = "blobs";
  spec.classes = 2;
  spec.dim = 2;
  spec.n_train = 200;
  spec.n_test = 200;
  spec.seed = 3;
  const TrainTest data = make_inlier(spec);

  Model m = test::random_model(2, 2, 2, 1100, 0.1);
  EvalConfig ec;
  ec.noise = spec.noise_spec(1e-3);
  ec.seed = 99;
  const MetricsReport report = evaluate_model(m, data.test, ec);

  // bits/dim must be exactly the converted test L_X (no separate code path)
  CHECK(report.bits_per_dim == bits_per_dim(report.test_lx, 2, 256));
  CHECK(report.cal_geo_mean ==
        doctest::Approx(std::cbrt(report.ece * report.mce * report.ice)).epsilon(1e-12));

  const auto j = nlohmann::json::parse(metrics_to_json(report));
  CHECK(j["bits_per_dim"].get<double>() == report.bits_per_dim);
  CHECK(j["classification_error_pct"].get<double>() == report.classification_error_pct);
  CHECK(j["calibration"]["geo_mean"].get<double>() == report.cal_geo_mean);

  // evaluation is reproducible for any thread count
  const MetricsReport again = evaluate_model(m, data.test, ec);
  CHECK(again.test_lx == report.test_lx);
  CHECK(again.ece == report.ece);
}
