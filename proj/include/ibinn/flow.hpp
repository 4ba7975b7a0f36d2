#ifndef IBINN_FLOW_HPP
#define IBINN_FLOW_HPP

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ibinn/common.hpp"
#include "ibinn/rng.hpp"

namespace ibinn {

class Rng;

// Layout of the representation flowing through the network. Couplings and
// permutations act on the flattened vector either way; image layout only
// matters to the reshaping layers.
struct TensorShape {
  enum class Kind { Vector, Image };
  Kind kind = Kind::Vector;
  int channels = 0;
  int height = 0;
  int width = 0;
  int vector_dim = 0;

  static TensorShape vector(int d) { return {Kind::Vector, 0, 0, 0, d}; }
  static TensorShape image(int c, int h, int w) { return {Kind::Image, c, h, w, 0}; }
  int dim() const { return kind == Kind::Vector ? vector_dim : channels * height * width; }
  bool operator==(const TensorShape&) const = default;
};

// Mutable view of one named parameter tensor.
struct ParamRef {
  std::string name;
  dvec* data;
};

// Invertible layer. forward/inverse/backward are pure given the parameters;
// backward consumes the cache written by the matching forward call.
class Layer {
 public:
  virtual ~Layer() = default;

  struct Cache {
    virtual ~Cache() = default;
  };

  virtual std::string name() const = 0;
  virtual std::unique_ptr<Cache> make_cache() const { return nullptr; }

  virtual void forward(const dvec& in, dvec& out, double& logdet, Cache* cache) const = 0;
  virtual void inverse(const dvec& in, dvec& out) const = 0;

  // din <- dL/d(in) given dout = dL/d(out) and dlogdet = dL/d(logdet of this
  // layer); parameter gradients accumulate into grads (aligned with params()).
  virtual void backward(const Cache& cache, const dvec& dout, double dlogdet, dvec& din,
                        std::span<dvec> grads) const = 0;

  virtual TensorShape output_shape(const TensorShape& in) const { return in; }
  virtual std::vector<ParamRef> params() { return {}; }
};

// Small fully connected ReLU net used as the coupling subnetwork. The final
// layer is zero-initialized so a fresh coupling block is the identity map.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(int in_dim, int out_dim, std::vector<int> hidden);

  void init(Rng& rng);

  struct Cache {
    std::vector<dvec> act;  // act[0] = input, act[l] = post-activation of layer l
  };

  void forward(const dvec& in, dvec& out, Cache* cache) const;
  void backward(const Cache& cache, const dvec& dout, dvec& din, std::span<dvec> grads) const;

  std::vector<ParamRef> params();
  // layer widths including input and output
  const std::vector<int>& dims() const { return dims_; }
  int in_dim() const { return dims_.front(); }
  int out_dim() const { return dims_.back(); }

  dvec& weight(std::size_t l) { return w_[l]; }
  dvec& bias(std::size_t l) { return b_[l]; }

 private:
  std::vector<int> dims_;
  std::vector<dvec> w_;  // w_[l]: dims_[l+1] x dims_[l], row-major
  std::vector<dvec> b_;
};

// v1 = u1, v2 = u2 * exp(s_c(u1)) + t(u1) with s_c = clamp * tanh(s_raw).
// The clamp keeps every scale factor inside [exp(-clamp), exp(clamp)], so
// |logdet| <= clamp * dim(u2).
class AffineCoupling final : public Layer {
 public:
  AffineCoupling(int dim, int split, double clamp, std::vector<int> subnet_hidden);

  void init(Rng& rng) { net_.init(rng); }

  std::string name() const override { return "affine_coupling"; }
  std::unique_ptr<Layer::Cache> make_cache() const override;
  void forward(const dvec& in, dvec& out, double& logdet, Layer::Cache* cache) const override;
  void inverse(const dvec& in, dvec& out) const override;
  void backward(const Layer::Cache& cache, const dvec& dout, double dlogdet, dvec& din,
                std::span<dvec> grads) const override;
  std::vector<ParamRef> params() override { return net_.params(); }

  int dim() const { return dim_; }
  int split() const { return split_; }
  double clamp() const { return clamp_; }
  DenseNet& subnet() { return net_; }
  const DenseNet& subnet() const { return net_; }

 private:
  int dim_ = 0;
  int split_ = 0;
  double clamp_ = 2.0;
  DenseNet net_;
};

// Fixed orthogonal mixing of dimensions; logdet is exactly 0.
class SoftPermutation final : public Layer {
 public:
  SoftPermutation(int dim, dvec q);  // q row-major dim x dim, orthogonal
  static SoftPermutation random(int dim, Rng& rng);
  static SoftPermutation identity(int dim);

  std::string name() const override { return "soft_permutation"; }
  void forward(const dvec& in, dvec& out, double& logdet, Layer::Cache* cache) const override;
  void inverse(const dvec& in, dvec& out) const override;
  void backward(const Layer::Cache& cache, const dvec& dout, double dlogdet, dvec& din,
                std::span<dvec> grads) const override;

  int dim() const { return dim_; }
  const dvec& matrix() const { return q_; }

 private:
  int dim_ = 0;
  dvec q_;
};

// Per-dimension multiplication by fixed positive constants. Initialized from
// data (ActNorm-style, first batch, unit output variance) and then frozen, so
// it carries no trainable parameters.
class FixedScaling final : public Layer {
 public:
  explicit FixedScaling(dvec scale);
  static FixedScaling deferred(int dim);  // identity until data init runs

  std::string name() const override { return "fixed_scaling"; }
  void forward(const dvec& in, dvec& out, double& logdet, Layer::Cache* cache) const override;
  void inverse(const dvec& in, dvec& out) const override;
  void backward(const Layer::Cache& cache, const dvec& dout, double dlogdet, dvec& din,
                std::span<dvec> grads) const override;

  int dim() const { return static_cast<int>(scale_.size()); }
  const dvec& scale() const { return scale_; }
  void set_scale(dvec scale);
  bool needs_init() const { return needs_init_; }

 private:
  dvec scale_;
  double logdet_ = 0.0;
  bool needs_init_ = false;
};

// (C, H, W) -> (4C, H/2, W/2): each 2x2 spatial block becomes 4 channels in
// the order (top-left, top-right, bottom-left, bottom-right). Pure reindexing,
// bit-exact inverse, logdet 0.
class IRevNetDownsample final : public Layer {
 public:
  IRevNetDownsample(int channels, int height, int width);

  std::string name() const override { return "irevnet_downsample"; }
  void forward(const dvec& in, dvec& out, double& logdet, Layer::Cache* cache) const override;
  void inverse(const dvec& in, dvec& out) const override;
  void backward(const Layer::Cache& cache, const dvec& dout, double dlogdet, dvec& din,
                std::span<dvec> grads) const override;
  TensorShape output_shape(const TensorShape& in) const override;

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
};

// Orthonormal 2-D DCT-II per channel over the (square) spatial grid, output
// flattened to a vector. Orthonormal, so logdet 0 and the adjoint equals the
// inverse transform.
class DctPooling final : public Layer {
 public:
  DctPooling(int channels, int size);

  std::string name() const override { return "dct_pooling"; }
  void forward(const dvec& in, dvec& out, double& logdet, Layer::Cache* cache) const override;
  void inverse(const dvec& in, dvec& out) const override;
  void backward(const Layer::Cache& cache, const dvec& dout, double dlogdet, dvec& din,
                std::span<dvec> grads) const override;
  TensorShape output_shape(const TensorShape& in) const override;

  int channels() const { return channels_; }
  int size() const { return size_; }

 private:
  void transform(const dvec& in, dvec& out, bool inverse_dir) const;

  int channels_ = 0;
  int size_ = 0;
  dvec dct_;  // size x size orthonormal DCT-II matrix, row-major
};

// Ordered invertible stack. Composed logdet is the sum of layer logdets; the
// inverse applies layers in reverse order.
class FlowNetwork {
 public:
  FlowNetwork() = default;
  explicit FlowNetwork(TensorShape input_shape) : input_shape_(input_shape) {}

  void append(std::unique_ptr<Layer> layer);

  int dim() const { return input_shape_.dim(); }
  const TensorShape& input_shape() const { return input_shape_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  const TensorShape& shape_before(std::size_t i) const { return shapes_[i]; }

  struct ForwardCache {
    std::vector<std::unique_ptr<Layer::Cache>> layers;
  };
  ForwardCache make_cache() const;

  void forward(const dvec& x, dvec& z, double& logdet, ForwardCache* cache = nullptr) const;
  void inverse(const dvec& z, dvec& x) const;
  void backward(const ForwardCache& cache, const dvec& dz, double dlogdet, dvec& dx,
                std::span<dvec> grads) const;

  std::vector<ParamRef> params();
  // number of gradient slots for layers [0, i)
  std::size_t param_offset(std::size_t i) const { return param_offsets_[i]; }

 private:
  TensorShape input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<TensorShape> shapes_;         // shapes_[i] = input shape of layer i
  std::vector<std::size_t> param_offsets_;  // prefix sums of per-layer param block counts
};

// Architecture description, also what the checkpoint reconstructs.
struct FlowConfig {
  TensorShape input = TensorShape::vector(2);
  int blocks = 8;                            // vector mode
  std::vector<int> stage_blocks = {2, 4, 4};  // image mode, downsample between stages
  int tail_blocks = 2;                       // image mode, after the DCT
  double clamp = 2.0;
  std::vector<int> subnet_hidden = {64, 64};
};

// A "block" is coupling + soft permutation + fixed scaling. Subnets start at
// zero so the whole fresh network is the identity; permutations are seeded
// per layer from (seed, "init", index).
FlowNetwork build_flow(const FlowConfig& config, std::uint64_t seed);

}  // namespace ibinn

#endif  // IBINN_FLOW_HPP
