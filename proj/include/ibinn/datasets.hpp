#ifndef IBINN_DATASETS_HPP
#define IBINN_DATASETS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ibinn/common.hpp"
#include "ibinn/loss.hpp"

namespace ibinn {

// Synthetic generator description. Generated features lie in [0,1]^d and are
// quantized to the grid {0, 1/F, ..., (F-1)/F}; labels are 0-based in memory
// and 1-based in files. The "gauss" generator is the exception: continuous,
// unbounded, levels ignored (set to 0).
struct DatasetSpec {
  std::string generator = "moons";  // blobs | moons | rings | gauss
  int classes = 3;
  int dim = 2;
  int n_train = 20000;
  int n_test = 5000;
  int levels = 256;
  std::uint64_t seed = 0;
  double spread = -1.0;      // generator jitter; -1 picks the generator default
  double separation = 0.25;  // blobs: minimum center distance

  void validate() const;
  double effective_spread() const;
  NoiseSpec noise_spec(double sigma) const;
};

struct Dataset {
  int dim = 0;
  int classes = 0;
  int levels = 0;
  std::vector<dvec> x;
  std::vector<int> y;  // empty for unlabeled (OoD) sets

  std::size_t size() const { return x.size(); }
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

// Nearest grid point k/F, k in [0, F-1]. Idempotent.
double quantize_value(double v, int levels);
void quantize(Dataset& data);

TrainTest make_inlier(const DatasetSpec& spec);

// OoD constructions mirroring the paper's four kinds:
//   rotate  - rotation by angle `strength` (radians) about the data center
//             in a seeded random 2-plane; default 0.3*pi
//   noise   - additive uniform noise of amplitude `strength`, clamped
//   holdout - samples from an extra class the training set never saw
//   shift   - same support, covariance rotated 45 degrees
// Sets are unlabeled and match the inlier dimensionality and scaling.
Dataset make_ood(const DatasetSpec& spec, const std::string& kind, double strength);

inline constexpr double kDefaultRotateAngle = 0.3 * 3.14159265358979323846;
inline constexpr double kDefaultNoiseAmplitude = 0.02;

// Bayes-optimal reference for the blobs generator (used by oracles).
struct BlobsParams {
  std::vector<dvec> centers;
  double sigma = 0.0;
};
BlobsParams blobs_params(const DatasetSpec& spec);

// CSV: one header line "d,K,F,n", then n rows "x_1,...,x_d,label".
// Binary: magic "IBDS1", little-endian u32 d/K/F/n, then n records of
// d unsigned bytes (feature k stored as round(k*F)) plus one label byte.
void save_csv(const Dataset& data, const std::string& path);
Dataset load_csv(const std::string& path);
void save_binary(const Dataset& data, const std::string& path);
Dataset load_binary(const std::string& path);

// format: "csv" or "binary"
Dataset load_external(const std::string& path, const std::string& format);

}  // namespace ibinn

#endif  // IBINN_DATASETS_HPP
