#ifndef IBINN_MODEL_HPP
#define IBINN_MODEL_HPP

#include <cstdint>
#include <vector>

#include "ibinn/flow.hpp"
#include "ibinn/gmm.hpp"

namespace ibinn {

struct ModelConfig {
  FlowConfig flow;
  int classes = 1;
  bool learnable_phi = false;
  bool hypersphere = false;
  double hypersphere_radius = 0.0;  // 0 -> sqrt(d)
};

// Invertible network plus latent mixture; everything the checkpoint stores.
struct Model {
  FlowNetwork net;
  GmmLatent gmm;

  int dim() const { return net.dim(); }
  int classes() const { return gmm.classes(); }

  // All trainable parameter blocks in a fixed order: network layers first,
  // then mixture means (and phi when learnable). Gradient sets, optimizer
  // state, and checkpoints all share this order.
  std::vector<ParamRef> params();
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace ibinn

#endif  // IBINN_MODEL_HPP
