#include "ibinn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ibinn/loss.hpp"
#include "ibinn/parallel.hpp"
#include "ibinn/rng.hpp"

#include "json.hpp"

namespace ibinn {

double bits_per_dim(double nll_nats_per_sample, int dim, int levels) {
  if (levels < 2) throw std::invalid_argument("bits_per_dim: need at least 2 quantization levels");
  return bits_per_dim_continuous(nll_nats_per_sample, dim) + std::log2(static_cast<double>(levels));
}

double bits_per_dim_continuous(double nll_nats_per_sample, int dim) {
  if (dim < 1) throw std::invalid_argument("bits_per_dim: dim must be positive");
  return nll_nats_per_sample / (dim * kLn2);
}

std::vector<double> calibration_bin_edges() {
  std::vector<double> edges;
  for (int i = 0; i < 5; ++i) edges.push_back(i * 0.01);         // 0.00 .. 0.04
  for (int i = 0; i < 9; ++i) edges.push_back(0.05 + i * 0.1);   // 0.05 .. 0.85
  for (int i = 0; i <= 5; ++i) edges.push_back(0.95 + i * 0.01);  // 0.95 .. 1.00
  return edges;
}

double CalibrationBins::accuracy(std::size_t i) const {
  return count[i] == 0 ? 0.0 : static_cast<double>(correct[i]) / static_cast<double>(count[i]);
}

std::size_t CalibrationBins::total() const {
  return std::accumulate(count.begin(), count.end(), std::size_t{0});
}

CalibrationReport calibration_report(std::span<const double> confidence,
                                     std::span<const std::uint8_t> correct) {
  if (confidence.size() != correct.size()) {
    throw std::invalid_argument("calibration_report: confidence/correctness size mismatch");
  }
  CalibrationReport report;
  report.bins.edges = calibration_bin_edges();
  const auto& edges = report.bins.edges;
  const std::size_t n_bins = edges.size() - 1;
  report.bins.count.assign(n_bins, 0);
  report.bins.correct.assign(n_bins, 0);

  for (std::size_t j = 0; j < confidence.size(); ++j) {
    const double p = confidence[j];
    if (p < 0.0 || p > 1.0) {
      throw std::invalid_argument("calibration_report: confidence outside [0, 1]");
    }
    // half-open bins; p == 1 belongs to the top bin
    auto it = std::upper_bound(edges.begin(), edges.end(), p);
    std::size_t bin = static_cast<std::size_t>(it - edges.begin());
    bin = bin == 0 ? 0 : bin - 1;
    if (bin >= n_bins) bin = n_bins - 1;
    ++report.bins.count[bin];
    if (correct[j]) ++report.bins.correct[bin];
  }

  const double n_tot = static_cast<double>(report.bins.total());
  bool any = false;
  for (std::size_t i = 0; i < n_bins; ++i) {
    if (report.bins.count[i] == 0) continue;
    const double gap = std::abs(report.bins.confidence(i) - report.bins.accuracy(i));
    report.ece += static_cast<double>(report.bins.count[i]) / n_tot * gap;
    report.ice += (edges[i + 1] - edges[i]) * gap;
    report.mce = any ? std::max(report.mce, gap) : gap;
    any = true;
  }
  report.geo_mean = std::cbrt(report.ece * report.mce * report.ice);
  return report;
}

dvec predict(const Model& model, const dvec& x) {
  dvec z;
  double logdet = 0.0;
  model.net.forward(x, z, logdet);
  dvec post = model.gmm.log_posterior(z);
  for (double& p : post) p = std::exp(p);
  return post;
}

double negative_log_likelihood(const Model& model, const dvec& x) {
  dvec z;
  double logdet = 0.0;
  model.net.forward(x, z, logdet);
  return -model.gmm.log_marginal(z) - logdet;
}

double discrete_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double ood_entropy_increase(std::span<const double> entropy_in,
                            std::span<const double> entropy_ood) {
  if (entropy_in.empty() || entropy_ood.empty()) {
    throw std::invalid_argument("ood_entropy_increase: both sets must be nonempty");
  }
  const auto mean = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  return mean(entropy_ood) - mean(entropy_in);
}

namespace {

// Midranks of the combined sample, then AUC from the Mann-Whitney statistic.
double midrank_auc(std::span<const double> scores_in, std::span<const double> scores_ood) {
  struct Item {
    double score;
    bool ood;
  };
  std::vector<Item> items;
  items.reserve(scores_in.size() + scores_ood.size());
  for (double s : scores_in) items.push_back({s, false});
  for (double s : scores_ood) items.push_back({s, true});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  const double n_in = static_cast<double>(scores_in.size());
  const double n_ood = static_cast<double>(scores_ood.size());
  double rank_sum_ood = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].ood) rank_sum_ood += midrank;
    }
    i = j;
  }
  return (rank_sum_ood - n_ood * (n_ood + 1.0) / 2.0) / (n_ood * n_in);
}

}  // namespace

TypicalityResult typicality_ood_auc(std::span<const double> scores_in,
                                    std::span<const double> scores_ood) {
  if (scores_in.empty() || scores_ood.empty()) {
    throw std::invalid_argument("typicality_ood_auc: both sets must be nonempty");
  }
  TypicalityResult result;
  const double first = scores_in[0];
  bool all_equal = std::all_of(scores_in.begin(), scores_in.end(),
                               [&](double s) { return s == first; }) &&
                   std::all_of(scores_ood.begin(), scores_ood.end(),
                               [&](double s) { return s == first; });
  if (all_equal) {
    result.auc_percent = 50.0;
    result.degenerate = true;
    return result;
  }
  result.auc_percent = 100.0 * midrank_auc(scores_in, scores_ood);
  return result;
}

std::vector<std::pair<double, double>> roc_points(std::span<const double> scores_in,
                                                  std::span<const double> scores_ood) {
  std::vector<double> thresholds(scores_in.begin(), scores_in.end());
  thresholds.insert(thresholds.end(), scores_ood.begin(), scores_ood.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<std::pair<double, double>> points;
  points.reserve(thresholds.size() + 2);
  points.emplace_back(0.0, 0.0);
  // classify "OoD" when score >= threshold, sweeping from high to low
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    const double t = *it;
    const auto frac_ge = [t](std::span<const double> v) {
      std::size_t c = 0;
      for (double s : v) c += s >= t ? 1 : 0;
      return static_cast<double>(c) / static_cast<double>(v.size());
    };
    points.emplace_back(frac_ge(scores_in), frac_ge(scores_ood));
  }
  points.emplace_back(1.0, 1.0);
  return points;
}

namespace {

dvec posterior_entropies(const Model& model, const Dataset& data, std::vector<dvec>* posteriors) {
  dvec out(data.size());
  if (posteriors) posteriors->resize(data.size());
  parallel_for(data.size(), eval_threads(), [&](std::size_t i) {
    const dvec post = predict(model, data.x[i]);
    out[i] = discrete_entropy(post);
    if (posteriors) (*posteriors)[i] = post;
  });
  return out;
}

}  // namespace

dvec nll_scores(const Model& model, const Dataset& data) {
  dvec out(data.size());
  parallel_for(data.size(), eval_threads(), [&](std::size_t i) {
    out[i] = negative_log_likelihood(model, data.x[i]);
  });
  return out;
}

double mean_nll(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("mean_nll: empty dataset");
  const dvec scores = nll_scores(model, data);
  double s = 0.0;
  for (double v : scores) s += v;
  return s / static_cast<double>(scores.size());
}

MetricsReport evaluate_model(const Model& model, const Dataset& test, const EvalConfig& config) {
  if (test.size() == 0) throw std::invalid_argument("evaluate_model: empty test set");
  if (test.y.size() != test.size()) {
    throw std::invalid_argument("evaluate_model: labeled test set required");
  }
  const int k = model.classes();
  const std::size_t n = test.size();

  // noise drawn single-threaded so the evaluation is reproducible for any
  // thread count
  std::vector<dvec> eps(n);
  Rng noise_rng = derive_rng(config.seed, "eval-noise");
  for (std::size_t i = 0; i < n; ++i) fill_noise(config.noise, test.x[i].size(), noise_rng, eps[i]);

  dvec lx(n);
  dvec ly(n);
  std::vector<dvec> posteriors(n);
  parallel_for(n, eval_threads(), [&](std::size_t i) {
    Batch one;
    one.x.push_back(test.x[i]);
    one.y.push_back(test.y[i]);
    one.eps.push_back(eps[i]);
    one.noise = config.noise;
    lx[i] = loss_lx(one, model);
    ly[i] = loss_ly(one, model, config.smoothing);
    posteriors[i] = predict(model, test.x[i]);
  });

  MetricsReport report;
  report.bpd_applicable = config.bpd_applicable;
  for (std::size_t i = 0; i < n; ++i) {
    report.test_lx += lx[i];
    report.test_ly += ly[i];
  }
  report.test_lx /= static_cast<double>(n);
  report.test_ly /= static_cast<double>(n);
  if (config.bpd_applicable) {
    report.bits_per_dim = test.levels >= 2
                              ? bits_per_dim(report.test_lx, model.dim(), test.levels)
                              : bits_per_dim_continuous(report.test_lx, model.dim());
  }

  // every posterior entry is binned; correctness is whether the sample's
  // argmax matches its label
  std::vector<double> confidence;
  std::vector<std::uint8_t> correct;
  confidence.reserve(n * k);
  correct.reserve(n * k);
  std::size_t errors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const dvec& post = posteriors[i];
    int arg = 0;
    for (int y = 1; y < k; ++y) {
      if (post[y] > post[arg]) arg = y;
    }
    const bool ok = arg == test.y[i];
    if (!ok) ++errors;
    for (int y = 0; y < k; ++y) {
      confidence.push_back(post[y]);
      correct.push_back(ok ? 1 : 0);
    }
  }
  report.classification_error_pct = 100.0 * static_cast<double>(errors) / static_cast<double>(n);

  const CalibrationReport cal = calibration_report(confidence, correct);
  report.ece = cal.ece;
  report.mce = cal.mce;
  report.ice = cal.ice;
  report.cal_geo_mean = cal.geo_mean;
  report.reliability = cal.bins;
  return report;
}

OodReport evaluate_ood_set(const Model& model, const Dataset& in_test, const Dataset& ood,
                           double train_mean_nll, const std::string& kind) {
  if (in_test.size() == 0 || ood.size() == 0) {
    throw std::invalid_argument("evaluate_ood_set: both sets must be nonempty");
  }
  OodReport report;
  report.kind = kind;

  const dvec ent_in = posterior_entropies(model, in_test, nullptr);
  const dvec ent_ood = posterior_entropies(model, ood, nullptr);
  report.entropy_increase = ood_entropy_increase(ent_in, ent_ood);

  dvec scores_in = nll_scores(model, in_test);
  dvec scores_ood = nll_scores(model, ood);
  for (double& s : scores_in) s = typicality_score(s, train_mean_nll);
  for (double& s : scores_ood) s = typicality_score(s, train_mean_nll);
  const TypicalityResult auc = typicality_ood_auc(scores_in, scores_ood);
  report.auc_percent = auc.auc_percent;
  report.degenerate = auc.degenerate;
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["bits_per_dim_applicable"] = report.bpd_applicable;
  if (report.bpd_applicable) {
    j["bits_per_dim"] = report.bits_per_dim;
  } else {
    j["bits_per_dim"] = nullptr;
  }
  j["test_lx_nats"] = report.test_lx;
  j["test_ly_nats"] = report.test_ly;
  j["classification_error_pct"] = report.classification_error_pct;
  j["calibration"] = {{"ece", report.ece},
                      {"mce", report.mce},
                      {"ice", report.ice},
                      {"geo_mean", report.cal_geo_mean}};
  nlohmann::json ood = nlohmann::json::array();
  for (const OodReport& o : report.ood) {
    ood.push_back({{"kind", o.kind},
                   {"entropy_increase_nats", o.entropy_increase},
                   {"typicality_auc_pct", o.auc_percent},
                   {"degenerate_scores", o.degenerate}});
  }
  j["ood"] = ood;
  return j.dump(2);
}

}  // namespace ibinn
