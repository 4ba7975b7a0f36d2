#ifndef IBINN_METRICS_HPP
#define IBINN_METRICS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ibinn/common.hpp"
#include "ibinn/datasets.hpp"
#include "ibinn/model.hpp"

namespace ibinn {

// NLL per dimension in base 2 on the original quantized scale: data lives in
// [0,1]^d with F levels, so the change of variables adds log2(F).
double bits_per_dim(double nll_nats_per_sample, int dim, int levels);

// Same without the quantization term, for continuous (unquantized) data.
double bits_per_dim_continuous(double nll_nats_per_sample, int dim);

// Confidence bin edges, spaced more tightly near 0 and 1:
// 0.00..0.05 step 0.01, 0.05..0.95 step 0.1, 0.95..1.00 step 0.01.
std::vector<double> calibration_bin_edges();

struct CalibrationBins {
  std::vector<double> edges;            // strictly increasing, covering [0, 1]
  std::vector<std::size_t> count;       // n^(i)
  std::vector<std::size_t> correct;     // n_c^(i)
  double confidence(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }  // P_i
  double accuracy(std::size_t i) const;                                               // Q_i
  std::size_t size() const { return count.size(); }
  std::size_t total() const;
};

struct CalibrationReport {
  double ece = 0.0;
  double mce = 0.0;  // max over occupied bins; empty bins have no accuracy
  double ice = 0.0;
  double geo_mean = 0.0;
  CalibrationBins bins;
};

// Bins are half-open [b_i, b_{i+1}) except the last, which includes 1.0.
// Empty bins contribute 0 to ECE/ICE and are skipped for MCE.
CalibrationReport calibration_report(std::span<const double> confidence,
                                     std::span<const std::uint8_t> correct);

// Class posterior q(y | g(x)) on the clean input; the Jacobian cancels, so
// this equals the full Bayes posterior from q(x|y) p(y).
dvec predict(const Model& model, const dvec& x);

// -log q_X(x) = -log q(g(x)) - log|det J|
double negative_log_likelihood(const Model& model, const dvec& x);

double discrete_entropy(std::span<const double> probs);  // nats

// Mean posterior entropy on the OoD set minus on the in-distribution set.
double ood_entropy_increase(std::span<const double> entropy_in,
                            std::span<const double> entropy_ood);

struct TypicalityResult {
  double auc_percent = 50.0;
  bool degenerate = false;  // all scores equal: chance level, with a warning
};

// Rank-based ROC-AUC (midrank ties) of OoD vs in-distribution under a score
// where higher means more atypical. 100 = perfectly separated, 50 = chance.
TypicalityResult typicality_ood_auc(std::span<const double> scores_in,
                                    std::span<const double> scores_ood);

// Single-sample typicality score: distance of the sample NLL from the
// training-set mean NLL; sweeping its threshold traces the ROC.
inline double typicality_score(double nll, double train_mean_nll) {
  return std::abs(nll - train_mean_nll);
}

// ROC points (FPR, TPR) for CSV emission, sorted by threshold.
std::vector<std::pair<double, double>> roc_points(std::span<const double> scores_in,
                                                  std::span<const double> scores_ood);

struct OodReport {
  std::string kind;
  double entropy_increase = 0.0;  // nats
  double auc_percent = 0.0;
  bool degenerate = false;
};

struct MetricsReport {
  bool bpd_applicable = true;  // false in only-L_Y mode
  double bits_per_dim = 0.0;
  double test_lx = 0.0;
  double test_ly = 0.0;
  double classification_error_pct = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double ice = 0.0;
  double cal_geo_mean = 0.0;
  std::vector<OodReport> ood;
  CalibrationBins reliability;  // for CSV emission
};

std::string metrics_to_json(const MetricsReport& report);

struct EvalConfig {
  NoiseSpec noise;          // sigma for the test-set L_X
  double smoothing = 0.05;  // smoothed L_Y reporting
  std::uint64_t seed = 0;   // evaluation noise stream
  bool bpd_applicable = true;
};

// Test-set metrics: L_X on noisy inputs (stream (seed, "eval-noise")),
// bits/dim via the L_X path, classification error and calibration on clean
// inputs with every posterior entry binned.
MetricsReport evaluate_model(const Model& model, const Dataset& test, const EvalConfig& config);

// Mean -log q_X over a set, clean inputs (the typicality reference h^).
double mean_nll(const Model& model, const Dataset& data);

OodReport evaluate_ood_set(const Model& model, const Dataset& in_test, const Dataset& ood,
                           double train_mean_nll, const std::string& kind);

dvec nll_scores(const Model& model, const Dataset& data);

}  // namespace ibinn

#endif  // IBINN_METRICS_HPP
