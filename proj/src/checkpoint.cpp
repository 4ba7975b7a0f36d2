#include "ibinn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ibinn {

namespace {

constexpr char kMagic[6] = {'I', 'B', 'I', 'N', 'N', '1'};
constexpr std::uint32_t kVersion = 1;

constexpr std::uint32_t kTagCoupling = 1;
constexpr std::uint32_t kTagPermutation = 2;
constexpr std::uint32_t kTagScaling = 3;
constexpr std::uint32_t kTagDownsample = 4;
constexpr std::uint32_t kTagDctPooling = 5;
constexpr std::uint32_t kTagGmm = 100;
constexpr std::uint32_t kTagTrainerState = 200;
constexpr std::uint32_t kTagEnd = 0;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

void write_vec(std::ostream& out, const dvec& v) {
  write_le<std::uint64_t>(out, v.size());
  for (double x : v) write_le(out, x);
}

dvec read_vec(std::istream& in) {
  const auto n = read_le<std::uint64_t>(in);
  dvec v(n);
  for (double& x : v) x = read_le<double>(in);
  return v;
}

void write_shape(std::ostream& out, const TensorShape& s) {
  write_le<std::uint32_t>(out, s.kind == TensorShape::Kind::Image ? 1 : 0);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.dim()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.channels));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.height));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.width));
}

TensorShape read_shape(std::istream& in) {
  const auto kind = read_le<std::uint32_t>(in);
  const auto d = read_le<std::uint32_t>(in);
  const auto c = read_le<std::uint32_t>(in);
  const auto h = read_le<std::uint32_t>(in);
  const auto w = read_le<std::uint32_t>(in);
  if (kind == 1) return TensorShape::image(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  return TensorShape::vector(static_cast<int>(d));
}

void save_layer(std::ostream& out, Layer& layer) {
  if (auto* c = dynamic_cast<AffineCoupling*>(&layer)) {
    write_le(out, kTagCoupling);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c->dim()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c->split()));
    write_le(out, c->clamp());
    const auto& dims = c->subnet().dims();
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      write_vec(out, c->subnet().weight(l));
      write_vec(out, c->subnet().bias(l));
    }
    return;
  }
  if (auto* p = dynamic_cast<SoftPermutation*>(&layer)) {
    write_le(out, kTagPermutation);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->dim()));
    write_vec(out, p->matrix());
    return;
  }
  if (auto* s = dynamic_cast<FixedScaling*>(&layer)) {
    write_le(out, kTagScaling);
    write_vec(out, s->scale());
    return;
  }
  if (auto* d = dynamic_cast<IRevNetDownsample*>(&layer)) {
    write_le(out, kTagDownsample);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d->channels()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d->height()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d->width()));
    return;
  }
  if (auto* d = dynamic_cast<DctPooling*>(&layer)) {
    write_le(out, kTagDctPooling);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d->channels()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d->size()));
    return;
  }
  throw std::runtime_error("checkpoint: unknown layer type " + layer.name());
}

std::unique_ptr<Layer> load_layer(std::istream& in, std::uint32_t tag) {
  switch (tag) {
    case kTagCoupling: {
      const auto dim = read_le<std::uint32_t>(in);
      const auto split = read_le<std::uint32_t>(in);
      const auto clamp = read_le<double>(in);
      const auto n_dims = read_le<std::uint32_t>(in);
      std::vector<int> dims(n_dims);
      for (auto& d : dims) d = static_cast<int>(read_le<std::uint32_t>(in));
      std::vector<int> hidden(dims.begin() + 1, dims.end() - 1);
      auto layer = std::make_unique<AffineCoupling>(static_cast<int>(dim), static_cast<int>(split),
                                                    clamp, hidden);
      for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        layer->subnet().weight(l) = read_vec(in);
        layer->subnet().bias(l) = read_vec(in);
        if (layer->subnet().weight(l).size() !=
                static_cast<std::size_t>(dims[l + 1]) * dims[l] ||
            layer->subnet().bias(l).size() != static_cast<std::size_t>(dims[l + 1])) {
          throw std::runtime_error("checkpoint: coupling weight block size mismatch");
        }
      }
      return layer;
    }
    case kTagPermutation: {
      const auto dim = read_le<std::uint32_t>(in);
      return std::make_unique<SoftPermutation>(static_cast<int>(dim), read_vec(in));
    }
    case kTagScaling:
      return std::make_unique<FixedScaling>(read_vec(in));
    case kTagDownsample: {
      const auto c = read_le<std::uint32_t>(in);
      const auto h = read_le<std::uint32_t>(in);
      const auto w = read_le<std::uint32_t>(in);
      return std::make_unique<IRevNetDownsample>(static_cast<int>(c), static_cast<int>(h),
                                                 static_cast<int>(w));
    }
    case kTagDctPooling: {
      const auto c = read_le<std::uint32_t>(in);
      const auto s = read_le<std::uint32_t>(in);
      return std::make_unique<DctPooling>(static_cast<int>(c), static_cast<int>(s));
    }
    default:
      throw std::runtime_error("checkpoint: unknown layer tag " + std::to_string(tag));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const TrainerState* state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");

  out.write(kMagic, sizeof(kMagic));
  write_le(out, kVersion);
  write_shape(out, model.net.input_shape());
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.net.layer_count()));
  for (std::size_t i = 0; i < model.net.layer_count(); ++i) save_layer(out, model.net.layer(i));

  write_le(out, kTagGmm);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.gmm.classes()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.gmm.dim()));
  write_le<std::uint8_t>(out, model.gmm.learnable_phi() ? 1 : 0);
  write_le<std::uint8_t>(out, model.gmm.hypersphere() ? 1 : 0);
  write_le(out, model.gmm.hypersphere_radius());
  for (int y = 0; y < model.gmm.classes(); ++y) write_vec(out, model.gmm.mean(y));
  write_vec(out, model.gmm.phi());

  if (state) {
    write_le(out, kTagTrainerState);
    write_le(out, state->epochs_done);
    write_le(out, state->learning_rate);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(state->velocity.size()));
    for (const dvec& v : state->velocity) write_vec(out, v);
  }
  write_le(out, kTagEnd);
  out.flush();
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path, std::optional<TrainerState>* state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);

  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }

  Model model;
  model.net = FlowNetwork(read_shape(in));
  const auto layer_count = read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const auto tag = read_le<std::uint32_t>(in);
    model.net.append(load_layer(in, tag));
  }

  bool saw_gmm = false;
  for (;;) {
    const auto tag = read_le<std::uint32_t>(in);
    if (tag == kTagEnd) break;
    if (tag == kTagGmm) {
      const auto k = read_le<std::uint32_t>(in);
      const auto d = read_le<std::uint32_t>(in);
      const bool learnable = read_le<std::uint8_t>(in) != 0;
      const bool sphere = read_le<std::uint8_t>(in) != 0;
      const double radius = read_le<double>(in);
      model.gmm = GmmLatent(static_cast<int>(d), static_cast<int>(k));
      model.gmm.set_learnable_phi(learnable);
      if (sphere) model.gmm.set_hypersphere(true, radius);
      for (std::uint32_t y = 0; y < k; ++y) {
        dvec mu = read_vec(in);
        if (mu.size() != d) throw std::runtime_error("checkpoint: mean size mismatch");
        model.gmm.mutable_mean(static_cast<int>(y)) = std::move(mu);
      }
      dvec phi = read_vec(in);
      if (phi.size() != k) throw std::runtime_error("checkpoint: phi size mismatch");
      model.gmm.mutable_phi() = std::move(phi);
      saw_gmm = true;
    } else if (tag == kTagTrainerState) {
      TrainerState ts;
      ts.epochs_done = read_le<std::uint32_t>(in);
      ts.learning_rate = read_le<double>(in);
      const auto n = read_le<std::uint32_t>(in);
      ts.velocity.resize(n);
      for (dvec& v : ts.velocity) v = read_vec(in);
      if (state) *state = std::move(ts);
    } else {
      throw std::runtime_error("checkpoint: unknown section tag " + std::to_string(tag));
    }
  }
  if (!saw_gmm) throw std::runtime_error("checkpoint: missing mixture section in " + path);
  if (model.gmm.dim() != model.net.dim()) {
    throw std::runtime_error("checkpoint: mixture/network dimension mismatch");
  }
  return model;
}

}  // namespace ibinn
