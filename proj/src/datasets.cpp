#include "ibinn/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ibinn/rng.hpp"

namespace ibinn {

namespace {

constexpr char kBinaryMagic[5] = {'I', 'B', 'D', 'S', '1'};
constexpr double kPi = 3.14159265358979323846;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

void DatasetSpec::validate() const {
  require(dim >= 1, "DatasetSpec: dim must be positive");
  require(classes >= 1, "DatasetSpec: class count must be positive");
  require(n_train >= 0 && n_test >= 0, "DatasetSpec: sample counts must be non-negative");
  if (generator == "gauss") {
    require(classes == 1, "DatasetSpec: gauss generator supports a single class");
  } else if (generator == "blobs") {
    require(classes <= 64, "DatasetSpec: blobs supports at most 64 clusters");
    require(levels >= 2, "DatasetSpec: quantization levels must be >= 2");
  } else if (generator == "moons") {
    require(dim == 2, "DatasetSpec: moons is a 2-D generator");
    require(classes <= 10, "DatasetSpec: moons supports at most 10 arcs");
    require(levels >= 2, "DatasetSpec: quantization levels must be >= 2");
  } else if (generator == "rings") {
    require(dim == 2, "DatasetSpec: rings is a 2-D generator");
    require(classes <= 12, "DatasetSpec: rings supports at most 12 annuli");
    require(levels >= 2, "DatasetSpec: quantization levels must be >= 2");
  } else {
    throw std::invalid_argument("DatasetSpec: unknown generator '" + generator + "'");
  }
}

double DatasetSpec::effective_spread() const {
  if (spread >= 0.0) return spread;
  if (generator == "blobs") return 0.04;
  if (generator == "moons") return 0.08;
  if (generator == "rings") return 0.03;
  return 1.0;  // gauss
}

NoiseSpec DatasetSpec::noise_spec(double sigma) const {
  NoiseSpec n;
  n.sigma = sigma;
  if (generator == "gauss" || levels < 2) {
    n.delta_x = 1.0;
    n.levels = 0;
  } else {
    n.delta_x = 1.0 / levels;
    n.levels = levels;
  }
  return n;
}

double quantize_value(double v, int levels) {
  if (levels < 2) return v;
  long k = std::lround(v * levels);
  k = std::clamp(k, 0L, static_cast<long>(levels) - 1);
  return static_cast<double>(k) / levels;
}

void quantize(Dataset& data) {
  if (data.levels < 2) return;
  for (dvec& row : data.x) {
    for (double& v : row) v = quantize_value(v, data.levels);
  }
}

// ---------------------------------------------------------------------------
// generators

namespace {

std::vector<dvec> blob_centers(const DatasetSpec& spec, int count) {
  Rng rng = derive_rng(spec.seed, "blobs-centers");
  std::vector<dvec> centers;
  int attempts = 0;
  while (static_cast<int>(centers.size()) < count) {
    if (++attempts > 100000) {
      throw std::invalid_argument("blobs: cannot place " + std::to_string(count) +
                                  " clusters with separation " + std::to_string(spec.separation));
    }
    dvec c(spec.dim);
    for (double& v : c) v = rng.uniform(0.15, 0.85);
    bool ok = true;
    for (const dvec& other : centers) {
      if (std::sqrt(squared_distance(c, other)) < spec.separation) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(c));
  }
  return centers;
}

// Raw moon arc before normalization: interleaved semicircles, arc j centered
// at x = 0.9 j, flipped for odd j.
dvec moons_raw(int label, double angle) {
  const double cx = 0.9 * label;
  if (label % 2 == 0) return {cx + std::cos(angle), std::sin(angle) - 0.25};
  return {cx + std::cos(angle), 0.25 - std::sin(angle)};
}

// Affine map of the analytic bounding box onto [0.02, 0.98]^2; a pure
// function of the spec so train/test/holdout all share it.
struct MoonsBox {
  double x_min, x_max, y_min, y_max;

  explicit MoonsBox(const DatasetSpec& spec) {
    const double s = 3.0 * spec.effective_spread();
    x_min = -1.0 - s;
    x_max = 0.9 * (spec.classes - 1) + 1.0 + s;
    y_min = -0.75 - s;
    y_max = 0.75 + s;
  }
  dvec normalize(const dvec& p) const {
    return {0.02 + 0.96 * (p[0] - x_min) / (x_max - x_min),
            0.02 + 0.96 * (p[1] - y_min) / (y_max - y_min)};
  }
};

double ring_radius(const DatasetSpec& spec, int label) {
  return 0.38 * (label + 1) / spec.classes;
}

Dataset generate(const DatasetSpec& spec, int count, const char* stream) {
  Dataset data;
  data.dim = spec.dim;
  data.classes = spec.classes;
  data.levels = spec.generator == "gauss" ? 0 : spec.levels;
  data.x.reserve(count);
  data.y.reserve(count);

  Rng rng = derive_rng(spec.seed, stream);
  const double sp = spec.effective_spread();

  if (spec.generator == "gauss") {
    for (int i = 0; i < count; ++i) {
      dvec p(spec.dim);
      for (double& v : p) v = sp * rng.normal();
      data.x.push_back(std::move(p));
      data.y.push_back(0);
    }
    return data;
  }

  if (spec.generator == "blobs") {
    const auto centers = blob_centers(spec, spec.classes);
    for (int i = 0; i < count; ++i) {
      const int label = static_cast<int>(rng.index(spec.classes));
      dvec p = centers[label];
      for (double& v : p) v = clamp01(v + sp * rng.normal());
      data.x.push_back(std::move(p));
      data.y.push_back(label);
    }
  } else if (spec.generator == "moons") {
    const MoonsBox box(spec);
    for (int i = 0; i < count; ++i) {
      const int label = static_cast<int>(rng.index(spec.classes));
      dvec p = moons_raw(label, kPi * rng.uniform());
      p[0] += sp * rng.normal();
      p[1] += sp * rng.normal();
      p = box.normalize(p);
      p[0] = clamp01(p[0]);
      p[1] = clamp01(p[1]);
      data.x.push_back(std::move(p));
      data.y.push_back(label);
    }
  } else {  // rings
    for (int i = 0; i < count; ++i) {
      const int label = static_cast<int>(rng.index(spec.classes));
      const double r = ring_radius(spec, label) + sp * rng.normal();
      const double a = 2.0 * kPi * rng.uniform();
      data.x.push_back({clamp01(0.5 + r * std::cos(a)), clamp01(0.5 + r * std::sin(a))});
      data.y.push_back(label);
    }
  }
  quantize(data);
  return data;
}

}  // namespace

BlobsParams blobs_params(const DatasetSpec& spec) {
  require(spec.generator == "blobs", "blobs_params: spec is not a blobs spec");
  spec.validate();
  return {blob_centers(spec, spec.classes), spec.effective_spread()};
}

TrainTest make_inlier(const DatasetSpec& spec) {
  spec.validate();
  TrainTest out;
  out.train = generate(spec, spec.n_train, "data-train");
  out.test = generate(spec, spec.n_test, "data-test");
  return out;
}

// ---------------------------------------------------------------------------
// OoD constructions

namespace {

Dataset unlabeled(Dataset data) {
  data.y.clear();
  data.classes = 0;
  return data;
}

Dataset ood_rotate(const DatasetSpec& spec, double angle) {
  Dataset base = unlabeled(generate(spec, spec.n_test, "data-test"));
  if (angle == 0.0) return base;

  // seeded random 2-plane (for d = 2 this is the full plane)
  Rng rng = derive_rng(spec.seed, "ood-rotate");
  dvec e1(spec.dim), e2(spec.dim);
  rng.fill_normal(e1);
  double n1 = std::sqrt(squared_distance(e1, dvec(spec.dim, 0.0)));
  for (double& v : e1) v /= n1;
  for (;;) {
    rng.fill_normal(e2);
    double dot = 0.0;
    for (int i = 0; i < spec.dim; ++i) dot += e1[i] * e2[i];
    for (int i = 0; i < spec.dim; ++i) e2[i] -= dot * e1[i];
    const double n2 = std::sqrt(squared_distance(e2, dvec(spec.dim, 0.0)));
    if (n2 > 1e-8) {
      for (double& v : e2) v /= n2;
      break;
    }
  }

  const double c = std::cos(angle) - 1.0;
  const double s = std::sin(angle);
  for (dvec& p : base.x) {
    double a1 = 0.0;
    double a2 = 0.0;
    for (int i = 0; i < spec.dim; ++i) {
      a1 += e1[i] * (p[i] - 0.5);
      a2 += e2[i] * (p[i] - 0.5);
    }
    for (int i = 0; i < spec.dim; ++i) {
      p[i] += c * (a1 * e1[i] + a2 * e2[i]) + s * (a1 * e2[i] - a2 * e1[i]);
      p[i] = clamp01(p[i]);
    }
  }
  return base;
}

Dataset ood_noise(const DatasetSpec& spec, double amplitude) {
  Dataset base = unlabeled(generate(spec, spec.n_test, "data-test"));
  if (amplitude == 0.0) return base;
  Rng rng = derive_rng(spec.seed, "ood-noise");
  for (dvec& p : base.x) {
    for (double& v : p) v = clamp01(v + rng.uniform(-amplitude, amplitude));
  }
  return base;
}

// A class the training distribution never contained: blobs get an extra
// cluster, moons an annulus through the arc region, rings the empty center.
Dataset ood_holdout(const DatasetSpec& spec) {
  Dataset data;
  data.dim = spec.dim;
  data.classes = 0;
  data.levels = spec.generator == "gauss" ? 0 : spec.levels;
  Rng rng = derive_rng(spec.seed, "ood-holdout");
  const double sp = spec.effective_spread();

  if (spec.generator == "blobs") {
    const auto centers = blob_centers(spec, spec.classes + 1);
    for (int i = 0; i < spec.n_test; ++i) {
      dvec p = centers.back();
      for (double& v : p) v = clamp01(v + sp * rng.normal());
      data.x.push_back(std::move(p));
    }
  } else if (spec.generator == "moons" || spec.generator == "gauss") {
    const double radius = spec.generator == "gauss" ? 3.0 * sp : 0.35;
    const double jitter = spec.generator == "gauss" ? sp * 0.1 : sp * 0.5;
    const double cx = spec.generator == "gauss" ? 0.0 : 0.5;
    for (int i = 0; i < spec.n_test; ++i) {
      const double r = radius + jitter * rng.normal();
      const double a = 2.0 * kPi * rng.uniform();
      dvec p(spec.dim, cx);
      p[0] = cx + r * std::cos(a);
      if (spec.dim >= 2) p[1] = cx + r * std::sin(a);
      if (spec.generator != "gauss") {
        for (double& v : p) v = clamp01(v);
      }
      data.x.push_back(std::move(p));
    }
  } else {  // rings: the center is never populated
    for (int i = 0; i < spec.n_test; ++i) {
      data.x.push_back({clamp01(0.5 + sp * rng.normal()), clamp01(0.5 + sp * rng.normal())});
    }
  }
  quantize(data);
  return data;
}

// Same support, different correlation: Gaussian matched to the inlier mean
// with the covariance rotated 45 degrees in the first two dimensions.
Dataset ood_shift(const DatasetSpec& spec) {
  const Dataset train = generate(spec, std::max(spec.n_train, 2), "data-train");
  const int d = spec.dim;

  dvec mean(d, 0.0);
  for (const dvec& p : train.x) {
    for (int i = 0; i < d; ++i) mean[i] += p[i];
  }
  for (double& m : mean) m /= static_cast<double>(train.size());

  std::vector<dvec> cov(d, dvec(d, 0.0));
  for (const dvec& p : train.x) {
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
    }
  }
  for (auto& row : cov) {
    for (double& v : row) v /= static_cast<double>(train.size() - 1);
  }

  // rotate covariance by 45 degrees in the (0, 1) plane
  if (d >= 2) {
    const double ct = std::cos(kPi / 4.0);
    const double st = std::sin(kPi / 4.0);
    auto rot = [&](const std::vector<dvec>& m) {
      std::vector<dvec> r = m;
      for (int j = 0; j < d; ++j) {
        const double a = m[0][j];
        const double b = m[1][j];
        r[0][j] = ct * a - st * b;
        r[1][j] = st * a + ct * b;
      }
      std::vector<dvec> r2 = r;
      for (int i = 0; i < d; ++i) {
        const double a = r[i][0];
        const double b = r[i][1];
        r2[i][0] = ct * a - st * b;
        r2[i][1] = st * a + ct * b;
      }
      return r2;
    };
    cov = rot(cov);
  }

  // Cholesky with a small jitter on the diagonal
  std::vector<dvec> chol(d, dvec(d, 0.0));
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = cov[i][j];
      for (int k = 0; k < j; ++k) s -= chol[i][k] * chol[j][k];
      if (i == j) {
        chol[i][i] = std::sqrt(std::max(s, 1e-12));
      } else {
        chol[i][j] = s / chol[j][j];
      }
    }
  }

  Dataset data;
  data.dim = d;
  data.classes = 0;
  data.levels = spec.generator == "gauss" ? 0 : spec.levels;
  Rng rng = derive_rng(spec.seed, "ood-shift");
  dvec n(d);
  for (int s = 0; s < spec.n_test; ++s) {
    rng.fill_normal(n);
    dvec p = mean;
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k <= i; ++k) p[i] += chol[i][k] * n[k];
    }
    if (spec.generator != "gauss") {
      for (double& v : p) v = clamp01(v);
    }
    data.x.push_back(std::move(p));
  }
  quantize(data);
  return data;
}

}  // namespace

Dataset make_ood(const DatasetSpec& spec, const std::string& kind, double strength) {
  spec.validate();
  if (kind == "rotate") return ood_rotate(spec, strength < 0.0 ? kDefaultRotateAngle : strength);
  if (kind == "noise") return ood_noise(spec, strength < 0.0 ? kDefaultNoiseAmplitude : strength);
  if (kind == "holdout") return ood_holdout(spec);
  if (kind == "shift") return ood_shift(spec);
  throw std::invalid_argument("make_ood: unknown kind '" + kind +
                              "' (expected rotate|noise|holdout|shift)");
}

// ---------------------------------------------------------------------------
// file formats

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  out << data.dim << ',' << data.classes << ',' << data.levels << ',' << data.size() << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.dim; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.x[i][j]);
      out << buf << ',';
    }
    out << (data.y.empty() ? 0 : data.y[i] + 1) << '\n';
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);
  Dataset data;
  std::size_t n = 0;
  {
    std::istringstream h(line);
    char c1 = 0;
    char c2 = 0;
    char c3 = 0;
    if (!(h >> data.dim >> c1 >> data.classes >> c2 >> data.levels >> c3 >> n) || c1 != ',' ||
        c2 != ',' || c3 != ',') {
      throw std::runtime_error("load_csv: malformed header line (expected d,K,F,n): " + line);
    }
  }
  if (data.dim < 1) throw std::runtime_error("load_csv: invalid dimension in header");

  bool any_label = false;
  for (std::size_t row = 0; row < n; ++row) {
    if (!std::getline(in, line)) {
      throw std::runtime_error("load_csv: row " + std::to_string(row + 1) +
                               ": file ends before the " + std::to_string(n) +
                               " rows promised by the header");
    }
    std::istringstream ls(line);
    dvec x(data.dim);
    for (int j = 0; j < data.dim; ++j) {
      char sep = 0;
      if (!(ls >> x[j] >> sep) || sep != ',') {
        throw std::runtime_error("load_csv: row " + std::to_string(row + 1) + ": malformed field " +
                                 std::to_string(j + 1));
      }
      if (data.levels >= 2 && (x[j] < 0.0 || x[j] > 1.0)) {
        throw std::runtime_error("load_csv: row " + std::to_string(row + 1) +
                                 ": feature outside [0, 1]");
      }
    }
    int label = 0;
    if (!(ls >> label)) {
      throw std::runtime_error("load_csv: row " + std::to_string(row + 1) + ": missing label");
    }
    if (label < 0 || label > data.classes) {
      throw std::runtime_error("load_csv: row " + std::to_string(row + 1) + ": label " +
                               std::to_string(label) + " outside {0..K}");
    }
    data.x.push_back(std::move(x));
    data.y.push_back(label - 1);
    if (label > 0) any_label = true;
  }
  std::string extra;
  if (std::getline(in, extra) && !extra.empty()) {
    throw std::runtime_error("load_csv: row " + std::to_string(n + 1) +
                             ": more rows than the header's n=" + std::to_string(n));
  }
  if (!any_label) {
    data.y.clear();
  }
  return data;
}

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error(std::string("load_binary: truncated ") + what);
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

}  // namespace

void save_binary(const Dataset& data, const std::string& path) {
  if (data.levels < 2 || data.levels > 256) {
    throw std::invalid_argument("save_binary: byte format needs 2 <= F <= 256");
  }
  if (data.classes > 255) throw std::invalid_argument("save_binary: at most 255 classes");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_binary: cannot open " + path);
  out.write(kBinaryMagic, sizeof(kBinaryMagic));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.classes));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.levels));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.dim; ++j) {
      long k = std::lround(data.x[i][j] * data.levels);
      k = std::clamp(k, 0L, static_cast<long>(data.levels) - 1);
      const auto byte = static_cast<unsigned char>(k);
      out.write(reinterpret_cast<const char*>(&byte), 1);
    }
    const auto label = static_cast<unsigned char>(data.y.empty() ? 0 : data.y[i] + 1);
    out.write(reinterpret_cast<const char*>(&label), 1);
  }
  if (!out) throw std::runtime_error("save_binary: write failed for " + path);
}

Dataset load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_binary: cannot open " + path);
  char magic[5];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kBinaryMagic, sizeof(kBinaryMagic)) != 0) {
    throw std::runtime_error("load_binary: bad magic at offset 0 in " + path);
  }
  Dataset data;
  data.dim = static_cast<int>(read_le<std::uint32_t>(in, "header field d"));
  data.classes = static_cast<int>(read_le<std::uint32_t>(in, "header field K"));
  data.levels = static_cast<int>(read_le<std::uint32_t>(in, "header field F"));
  const auto n = read_le<std::uint32_t>(in, "header field n");
  if (data.dim < 1 || data.levels < 2 || data.levels > 256) {
    throw std::runtime_error("load_binary: invalid header in " + path);
  }

  std::vector<unsigned char> record(data.dim + 1);
  bool any_label = false;
  for (std::uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
    if (!in) {
      throw std::runtime_error("load_binary: truncated record " + std::to_string(i + 1) +
                               " at offset " + std::to_string(21 + static_cast<std::size_t>(i) * record.size()));
    }
    dvec x(data.dim);
    for (int j = 0; j < data.dim; ++j) {
      if (record[j] >= data.levels) {
        throw std::runtime_error("load_binary: record " + std::to_string(i + 1) +
                                 ": feature byte outside [0, F)");
      }
      x[j] = static_cast<double>(record[j]) / data.levels;
    }
    const int label = record[data.dim];
    if (label > data.classes) {
      throw std::runtime_error("load_binary: record " + std::to_string(i + 1) + ": label " +
                               std::to_string(label) + " outside {0..K}");
    }
    data.x.push_back(std::move(x));
    data.y.push_back(label - 1);
    if (label > 0) any_label = true;
  }
  if (!any_label) data.y.clear();
  return data;
}

Dataset load_external(const std::string& path, const std::string& format) {
  if (format == "csv") return load_csv(path);
  if (format == "binary") return load_binary(path);
  throw std::invalid_argument("load_external: format must be 'csv' or 'binary'");
}

}  // namespace ibinn
