#ifndef IBINN_GRAD_HPP
#define IBINN_GRAD_HPP

#include <map>
#include <string>
#include <vector>

#include "ibinn/loss.hpp"
#include "ibinn/model.hpp"

namespace ibinn {

// One gradient buffer per parameter block, aligned with Model::params().
struct GradientSet {
  std::vector<dvec> blocks;

  static GradientSet zeros_like(const std::vector<ParamRef>& params);
  void zero();
  double l2_norm() const;
  void scale(double factor);
  // Throws NonFiniteError naming the first offending block.
  void check_finite(const std::vector<ParamRef>& params) const;
};

// Reverse-mode gradients of the rebalanced loss over the batch. The adjoints
// are hand-derived per layer; per-sample terms accumulate in batch order so
// the result is bit-reproducible.
LossBreakdown backward(Model& model, const Batch& batch, const LossConfig& config,
                       GradientSet& grads);

struct GradCheckReport {
  struct Probe {
    std::string block;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
  };
  std::vector<Probe> probes;
  std::map<std::string, double> per_block_max;
  double max_rel_error = 0.0;
  double step = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Central-difference verification of backward() on randomly sampled
// parameter coordinates. Relative error uses max(|analytic|, |numeric|) as
// the denominator; coordinates where both are below 1e-10 count as exact.
GradCheckReport grad_check(Model& model, const Batch& batch, const LossConfig& config,
                           int n_coords, double h, double tol, Rng& rng);

}  // namespace ibinn

#endif  // IBINN_GRAD_HPP
