#include "ibinn/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ibinn {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// y += W x, W rows x cols row-major
void matvec_add(const dvec& w, int rows, int cols, const double* x, double* y) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += wr[c] * x[c];
    y[r] += s;
  }
}

// y += W^T x
void matvec_transpose_add(const dvec& w, int rows, int cols, const double* x, double* y) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
    const double xr = x[r];
    for (int c = 0; c < cols; ++c) y[c] += wr[c] * xr;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(int in_dim, int out_dim, std::vector<int> hidden) {
  require(in_dim >= 1 && out_dim >= 1, "DenseNet: dimensions must be positive");
  dims_.push_back(in_dim);
  for (int h : hidden) {
    require(h >= 1, "DenseNet: hidden width must be positive");
    dims_.push_back(h);
  }
  dims_.push_back(out_dim);
  const std::size_t n_layers = dims_.size() - 1;
  w_.resize(n_layers);
  b_.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    w_[l].assign(static_cast<std::size_t>(dims_[l + 1]) * dims_[l], 0.0);
    b_[l].assign(dims_[l + 1], 0.0);
  }
}

void DenseNet::init(Rng& rng) {
  // He initialization for hidden layers; the last layer stays zero so the
  // enclosing coupling block starts as the identity.
  for (std::size_t l = 0; l + 1 < w_.size(); ++l) {
    const double std_dev = std::sqrt(2.0 / dims_[l]);
    for (double& x : w_[l]) x = std_dev * rng.normal();
    std::fill(b_[l].begin(), b_[l].end(), 0.0);
  }
  std::fill(w_.back().begin(), w_.back().end(), 0.0);
  std::fill(b_.back().begin(), b_.back().end(), 0.0);
}

void DenseNet::forward(const dvec& in, dvec& out, Cache* cache) const {
  require(static_cast<int>(in.size()) == dims_.front(), "DenseNet: input size mismatch");
  if (cache) {
    cache->act.resize(dims_.size());
    cache->act[0] = in;
  }
  dvec a = in;
  dvec z;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    z = b_[l];
    matvec_add(w_[l], dims_[l + 1], dims_[l], a.data(), z.data());
    if (l + 1 < w_.size()) {
      for (double& x : z) x = x > 0.0 ? x : 0.0;
    }
    a = std::move(z);
    if (cache) cache->act[l + 1] = a;
  }
  out = std::move(a);
}

void DenseNet::backward(const Cache& cache, const dvec& dout, dvec& din,
                        std::span<dvec> grads) const {
  const std::size_t n_layers = w_.size();
  dvec delta = dout;
  dvec prev;
  for (std::size_t l = n_layers; l-- > 0;) {
    const dvec& a_in = cache.act[l];
    if (!grads.empty()) {
      dvec& gw = grads[2 * l];
      dvec& gb = grads[2 * l + 1];
      for (int r = 0; r < dims_[l + 1]; ++r) {
        double* gwr = gw.data() + static_cast<std::size_t>(r) * dims_[l];
        const double d = delta[r];
        for (int c = 0; c < dims_[l]; ++c) gwr[c] += d * a_in[c];
        gb[r] += d;
      }
    }
    prev.assign(dims_[l], 0.0);
    matvec_transpose_add(w_[l], dims_[l + 1], dims_[l], delta.data(), prev.data());
    if (l > 0) {
      // ReLU gate from the cached post-activation
      for (int c = 0; c < dims_[l]; ++c) {
        if (cache.act[l][c] <= 0.0) prev[c] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  din = std::move(delta);
}

std::vector<ParamRef> DenseNet::params() {
  std::vector<ParamRef> refs;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    refs.push_back({"w" + std::to_string(l), &w_[l]});
    refs.push_back({"b" + std::to_string(l), &b_[l]});
  }
  return refs;
}

// ---------------------------------------------------------------------------
// AffineCoupling

namespace {
struct CouplingCache final : Layer::Cache {
  DenseNet::Cache net;
  dvec u2;
  dvec tanh_s;
  dvec exp_sc;
};
}  // namespace

AffineCoupling::AffineCoupling(int dim, int split, double clamp, std::vector<int> subnet_hidden)
    : dim_(dim), split_(split), clamp_(clamp) {
  require(dim >= 2, "AffineCoupling: dim must be >= 2");
  require(split >= 1 && split < dim, "AffineCoupling: split must be in [1, dim)");
  require(clamp > 0.0, "AffineCoupling: clamp must be positive");
  net_ = DenseNet(split, 2 * (dim - split), std::move(subnet_hidden));
}

std::unique_ptr<Layer::Cache> AffineCoupling::make_cache() const {
  return std::make_unique<CouplingCache>();
}

void AffineCoupling::forward(const dvec& in, dvec& out, double& logdet, Layer::Cache* cache) const {
  require(static_cast<int>(in.size()) == dim_, "coupling_forward: dimension mismatch");
  if (!all_finite(in)) throw NonFiniteError("affine_coupling input", "value");
  const int m = dim_ - split_;
  auto* cc = static_cast<CouplingCache*>(cache);

  const dvec u1(in.begin(), in.begin() + split_);
  dvec net_out;
  net_.forward(u1, net_out, cc ? &cc->net : nullptr);

  out.resize(dim_);
  std::copy(in.begin(), in.begin() + split_, out.begin());
  logdet = 0.0;
  if (cc) {
    cc->u2.assign(in.begin() + split_, in.end());
    cc->tanh_s.resize(m);
    cc->exp_sc.resize(m);
  }
  for (int i = 0; i < m; ++i) {
    const double th = std::tanh(net_out[i]);
    const double sc = clamp_ * th;
    const double esc = std::exp(sc);
    out[split_ + i] = in[split_ + i] * esc + net_out[m + i];
    logdet += sc;
    if (cc) {
      cc->tanh_s[i] = th;
      cc->exp_sc[i] = esc;
    }
  }
}

void AffineCoupling::inverse(const dvec& in, dvec& out) const {
  require(static_cast<int>(in.size()) == dim_, "coupling_inverse: dimension mismatch");
  if (!all_finite(in)) throw NonFiniteError("affine_coupling inverse input", "value");
  const int m = dim_ - split_;

  const dvec v1(in.begin(), in.begin() + split_);
  dvec net_out;
  net_.forward(v1, net_out, nullptr);

  out.resize(dim_);
  std::copy(in.begin(), in.begin() + split_, out.begin());
  for (int i = 0; i < m; ++i) {
    const double sc = clamp_ * std::tanh(net_out[i]);
    out[split_ + i] = (in[split_ + i] - net_out[m + i]) * std::exp(-sc);
  }
}

void AffineCoupling::backward(const Layer::Cache& cache, const dvec& dout, double dlogdet,
                              dvec& din, std::span<dvec> grads) const {
  const auto& cc = static_cast<const CouplingCache&>(cache);
  const int m = dim_ - split_;

  dvec dnet(2 * m);
  din.resize(dim_);
  for (int i = 0; i < m; ++i) {
    const double dv2 = dout[split_ + i];
    // d(v2)/d(u2) = exp(s_c)
    din[split_ + i] = dv2 * cc.exp_sc[i];
    // s_c feeds both v2 (via u2*exp(s_c)) and the logdet sum
    const double dsc = dv2 * cc.u2[i] * cc.exp_sc[i] + dlogdet;
    dnet[i] = dsc * clamp_ * (1.0 - cc.tanh_s[i] * cc.tanh_s[i]);
    dnet[m + i] = dv2;  // shift
  }

  dvec du1;
  net_.backward(cc.net, dnet, du1, grads);
  for (int i = 0; i < split_; ++i) din[i] = dout[i] + du1[i];
}

// ---------------------------------------------------------------------------
// SoftPermutation

namespace {

// QR of a square matrix via Householder reflections; returns Q with the sign
// convention diag(R) > 0 so the result is unique for a given input.
dvec orthogonal_from_gaussian(int d, Rng& rng) {
  std::vector<dvec> a(d, dvec(d));
  for (auto& row : a) {
    for (double& x : row) x = rng.normal();
  }
  std::vector<dvec> q(d, dvec(d, 0.0));
  for (int i = 0; i < d; ++i) q[i][i] = 1.0;

  for (int k = 0; k < d - 1; ++k) {
    double norm = 0.0;
    for (int i = k; i < d; ++i) norm += a[i][k] * a[i][k];
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    dvec v(d, 0.0);
    const double alpha = a[k][k] >= 0.0 ? -norm : norm;
    for (int i = k; i < d; ++i) v[i] = a[i][k];
    v[k] -= alpha;
    double vnorm2 = 0.0;
    for (int i = k; i < d; ++i) vnorm2 += v[i] * v[i];
    if (vnorm2 == 0.0) continue;
    // A <- (I - 2vv^T/v^Tv) A ; Q <- Q (I - 2vv^T/v^Tv)
    for (int j = k; j < d; ++j) {
      double dot = 0.0;
      for (int i = k; i < d; ++i) dot += v[i] * a[i][j];
      const double f = 2.0 * dot / vnorm2;
      for (int i = k; i < d; ++i) a[i][j] -= f * v[i];
    }
    for (int i = 0; i < d; ++i) {
      double dot = 0.0;
      for (int j = k; j < d; ++j) dot += q[i][j] * v[j];
      const double f = 2.0 * dot / vnorm2;
      for (int j = k; j < d; ++j) q[i][j] -= f * v[j];
    }
  }
  // flip columns where diag(R) < 0
  for (int k = 0; k < d; ++k) {
    if (a[k][k] < 0.0) {
      for (int i = 0; i < d; ++i) q[i][k] = -q[i][k];
    }
  }
  dvec flat(static_cast<std::size_t>(d) * d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) flat[static_cast<std::size_t>(i) * d + j] = q[i][j];
  }
  return flat;
}

}  // namespace

SoftPermutation::SoftPermutation(int dim, dvec q) : dim_(dim), q_(std::move(q)) {
  require(dim >= 1, "SoftPermutation: dim must be positive");
  require(q_.size() == static_cast<std::size_t>(dim) * dim, "SoftPermutation: matrix size mismatch");
}

SoftPermutation SoftPermutation::random(int dim, Rng& rng) {
  return SoftPermutation(dim, orthogonal_from_gaussian(dim, rng));
}

SoftPermutation SoftPermutation::identity(int dim) {
  dvec q(static_cast<std::size_t>(dim) * dim, 0.0);
  for (int i = 0; i < dim; ++i) q[static_cast<std::size_t>(i) * dim + i] = 1.0;
  return SoftPermutation(dim, std::move(q));
}

void SoftPermutation::forward(const dvec& in, dvec& out, double& logdet, Layer::Cache*) const {
  require(static_cast<int>(in.size()) == dim_, "perm_apply: dimension mismatch");
  out.assign(dim_, 0.0);
  matvec_add(q_, dim_, dim_, in.data(), out.data());
  logdet = 0.0;
}

void SoftPermutation::inverse(const dvec& in, dvec& out) const {
  require(static_cast<int>(in.size()) == dim_, "perm_apply: dimension mismatch");
  out.assign(dim_, 0.0);
  matvec_transpose_add(q_, dim_, dim_, in.data(), out.data());
}

void SoftPermutation::backward(const Layer::Cache&, const dvec& dout, double, dvec& din,
                               std::span<dvec>) const {
  din.assign(dim_, 0.0);
  matvec_transpose_add(q_, dim_, dim_, dout.data(), din.data());
}

// ---------------------------------------------------------------------------
// FixedScaling

FixedScaling::FixedScaling(dvec scale) { set_scale(std::move(scale)); }

FixedScaling FixedScaling::deferred(int dim) {
  FixedScaling s(dvec(dim, 1.0));
  s.needs_init_ = true;
  return s;
}

void FixedScaling::set_scale(dvec scale) {
  require(!scale.empty(), "FixedScaling: empty scale");
  for (double c : scale) require(c > 0.0 && std::isfinite(c), "FixedScaling: scale must be positive");
  scale_ = std::move(scale);
  logdet_ = 0.0;
  for (double c : scale_) logdet_ += std::log(c);
  needs_init_ = false;
}

void FixedScaling::forward(const dvec& in, dvec& out, double& logdet, Layer::Cache*) const {
  require(in.size() == scale_.size(), "FixedScaling: dimension mismatch");
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * scale_[i];
  logdet = logdet_;
}

void FixedScaling::inverse(const dvec& in, dvec& out) const {
  require(in.size() == scale_.size(), "FixedScaling: dimension mismatch");
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / scale_[i];
}

void FixedScaling::backward(const Layer::Cache&, const dvec& dout, double, dvec& din,
                            std::span<dvec>) const {
  din.resize(dout.size());
  for (std::size_t i = 0; i < dout.size(); ++i) din[i] = dout[i] * scale_[i];
}

// ---------------------------------------------------------------------------
// IRevNetDownsample

IRevNetDownsample::IRevNetDownsample(int channels, int height, int width)
    : channels_(channels), height_(height), width_(width) {
  require(channels >= 1, "irevnet_downsample: channels must be positive");
  require(height >= 2 && width >= 2, "irevnet_downsample: spatial size must be >= 2");
  require(height % 2 == 0 && width % 2 == 0, "irevnet_downsample: spatial dimensions must be even");
}

void IRevNetDownsample::forward(const dvec& in, dvec& out, double& logdet, Layer::Cache*) const {
  require(in.size() == static_cast<std::size_t>(channels_) * height_ * width_,
          "irevnet_downsample: size mismatch");
  const int oh = height_ / 2;
  const int ow = width_ / 2;
  out.resize(in.size());
  for (int c = 0; c < channels_; ++c) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const int oc = c * 4 + dy * 2 + dx;
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            out[(static_cast<std::size_t>(oc) * oh + i) * ow + j] =
                in[(static_cast<std::size_t>(c) * height_ + 2 * i + dy) * width_ + 2 * j + dx];
          }
        }
      }
    }
  }
  logdet = 0.0;
}

void IRevNetDownsample::inverse(const dvec& in, dvec& out) const {
  require(in.size() == static_cast<std::size_t>(channels_) * height_ * width_,
          "irevnet_downsample: size mismatch");
  const int oh = height_ / 2;
  const int ow = width_ / 2;
  out.resize(in.size());
  for (int c = 0; c < channels_; ++c) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const int oc = c * 4 + dy * 2 + dx;
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            out[(static_cast<std::size_t>(c) * height_ + 2 * i + dy) * width_ + 2 * j + dx] =
                in[(static_cast<std::size_t>(oc) * oh + i) * ow + j];
          }
        }
      }
    }
  }
}

void IRevNetDownsample::backward(const Layer::Cache&, const dvec& dout, double, dvec& din,
                                 std::span<dvec>) const {
  inverse(dout, din);  // permutation of coordinates: adjoint = inverse
}

TensorShape IRevNetDownsample::output_shape(const TensorShape& in) const {
  require(in.kind == TensorShape::Kind::Image, "irevnet_downsample: image input required");
  return TensorShape::image(in.channels * 4, in.height / 2, in.width / 2);
}

// ---------------------------------------------------------------------------
// DctPooling

DctPooling::DctPooling(int channels, int size) : channels_(channels), size_(size) {
  require(channels >= 1 && size >= 1, "dct_pool: invalid shape");
  dct_.resize(static_cast<std::size_t>(size) * size);
  const double pi = std::acos(-1.0);
  for (int k = 0; k < size; ++k) {
    const double ck = k == 0 ? std::sqrt(1.0 / size) : std::sqrt(2.0 / size);
    for (int n = 0; n < size; ++n) {
      dct_[static_cast<std::size_t>(k) * size + n] = ck * std::cos(pi * (2 * n + 1) * k / (2.0 * size));
    }
  }
}

void DctPooling::transform(const dvec& in, dvec& out, bool inverse_dir) const {
  const int s = size_;
  out.resize(in.size());
  dvec tmp(static_cast<std::size_t>(s) * s);
  for (int c = 0; c < channels_; ++c) {
    const double* x = in.data() + static_cast<std::size_t>(c) * s * s;
    double* y = out.data() + static_cast<std::size_t>(c) * s * s;
    // rows: tmp = D X (or D^T X)
    for (int k = 0; k < s; ++k) {
      for (int j = 0; j < s; ++j) {
        double acc = 0.0;
        for (int n = 0; n < s; ++n) {
          const double dkn = inverse_dir ? dct_[static_cast<std::size_t>(n) * s + k]
                                         : dct_[static_cast<std::size_t>(k) * s + n];
          acc += dkn * x[static_cast<std::size_t>(n) * s + j];
        }
        tmp[static_cast<std::size_t>(k) * s + j] = acc;
      }
    }
    // columns: Y = tmp D^T (or tmp D)
    for (int k = 0; k < s; ++k) {
      for (int l = 0; l < s; ++l) {
        double acc = 0.0;
        for (int n = 0; n < s; ++n) {
          const double dln = inverse_dir ? dct_[static_cast<std::size_t>(n) * s + l]
                                         : dct_[static_cast<std::size_t>(l) * s + n];
          acc += tmp[static_cast<std::size_t>(k) * s + n] * dln;
        }
        y[static_cast<std::size_t>(k) * s + l] = acc;
      }
    }
  }
}

void DctPooling::forward(const dvec& in, dvec& out, double& logdet, Layer::Cache*) const {
  require(in.size() == static_cast<std::size_t>(channels_) * size_ * size_, "dct_pool: size mismatch");
  transform(in, out, false);
  logdet = 0.0;
}

void DctPooling::inverse(const dvec& in, dvec& out) const {
  require(in.size() == static_cast<std::size_t>(channels_) * size_ * size_, "dct_pool: size mismatch");
  transform(in, out, true);
}

void DctPooling::backward(const Layer::Cache&, const dvec& dout, double, dvec& din,
                          std::span<dvec>) const {
  transform(dout, din, true);  // orthonormal: adjoint = inverse
}

TensorShape DctPooling::output_shape(const TensorShape& in) const {
  require(in.kind == TensorShape::Kind::Image && in.height == in.width,
          "dct_pool: square image input required");
  return TensorShape::vector(in.dim());
}

// ---------------------------------------------------------------------------
// FlowNetwork

void FlowNetwork::append(std::unique_ptr<Layer> layer) {
  const TensorShape in_shape = layers_.empty() ? input_shape_ : layers_.back()->output_shape(shapes_.back());
  shapes_.push_back(in_shape);
  if (param_offsets_.empty()) param_offsets_.push_back(0);
  param_offsets_.push_back(param_offsets_.back() + layer->params().size());
  layers_.push_back(std::move(layer));
}

FlowNetwork::ForwardCache FlowNetwork::make_cache() const {
  ForwardCache cache;
  cache.layers.reserve(layers_.size());
  for (const auto& l : layers_) cache.layers.push_back(l->make_cache());
  return cache;
}

void FlowNetwork::forward(const dvec& x, dvec& z, double& logdet, ForwardCache* cache) const {
  require(static_cast<int>(x.size()) == dim(), "network_forward: dimension mismatch");
  if (!all_finite(x)) throw NonFiniteError("network input", "value");
  dvec cur = x;
  dvec next;
  logdet = 0.0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    double ld = 0.0;
    layers_[i]->forward(cur, next, ld, cache ? cache->layers[i].get() : nullptr);
    if (!all_finite(next) || !std::isfinite(ld)) {
      throw NonFiniteError("layer " + std::to_string(i) + " (" + layers_[i]->name() + ")",
                           "activation");
    }
    logdet += ld;
    cur.swap(next);
  }
  z = std::move(cur);
}

void FlowNetwork::inverse(const dvec& z, dvec& x) const {
  require(static_cast<int>(z.size()) == dim(), "network_inverse: dimension mismatch");
  dvec cur = z;
  dvec next;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    layers_[i]->inverse(cur, next);
    cur.swap(next);
  }
  x = std::move(cur);
}

void FlowNetwork::backward(const ForwardCache& cache, const dvec& dz, double dlogdet, dvec& dx,
                           std::span<dvec> grads) const {
  dvec cur = dz;
  dvec next;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t begin = param_offsets_[i];
    const std::size_t count = param_offsets_[i + 1] - begin;
    auto slice = grads.empty() ? std::span<dvec>{} : grads.subspan(begin, count);
    layers_[i]->backward(*cache.layers[i], cur, dlogdet, next, slice);
    cur.swap(next);
  }
  dx = std::move(cur);
}

std::vector<ParamRef> FlowNetwork::params() {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (ParamRef& p : layers_[i]->params()) {
      refs.push_back({"layer" + std::to_string(i) + "." + layers_[i]->name() + "." + p.name, p.data});
    }
  }
  return refs;
}

// ---------------------------------------------------------------------------
// build_flow

namespace {

void append_block(FlowNetwork& net, int dim, const FlowConfig& config, std::uint64_t seed,
                  int& layer_counter) {
  auto coupling = std::make_unique<AffineCoupling>(dim, dim / 2, config.clamp, config.subnet_hidden);
  Rng init_rng = derive_rng(seed, "init", static_cast<std::uint64_t>(layer_counter++));
  coupling->init(init_rng);
  net.append(std::move(coupling));

  Rng perm_rng = derive_rng(seed, "init", static_cast<std::uint64_t>(layer_counter++));
  net.append(std::make_unique<SoftPermutation>(SoftPermutation::random(dim, perm_rng)));
  net.append(std::make_unique<FixedScaling>(FixedScaling::deferred(dim)));
}

}  // namespace

FlowNetwork build_flow(const FlowConfig& config, std::uint64_t seed) {
  FlowNetwork net(config.input);
  int counter = 0;
  if (config.input.kind == TensorShape::Kind::Vector) {
    require(config.blocks >= 1, "build_flow: at least one block required");
    for (int b = 0; b < config.blocks; ++b) append_block(net, config.input.dim(), config, seed, counter);
    return net;
  }

  TensorShape shape = config.input;
  for (std::size_t stage = 0; stage < config.stage_blocks.size(); ++stage) {
    for (int b = 0; b < config.stage_blocks[stage]; ++b) {
      append_block(net, shape.dim(), config, seed, counter);
    }
    if (stage + 1 < config.stage_blocks.size()) {
      auto down = std::make_unique<IRevNetDownsample>(shape.channels, shape.height, shape.width);
      shape = down->output_shape(shape);
      net.append(std::move(down));
    }
  }
  require(shape.height == shape.width, "build_flow: DCT pooling needs a square grid");
  net.append(std::make_unique<DctPooling>(shape.channels, shape.height));
  for (int b = 0; b < config.tail_blocks; ++b) append_block(net, shape.dim(), config, seed, counter);
  return net;
}

}  // namespace ibinn
