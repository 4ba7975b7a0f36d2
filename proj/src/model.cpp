#include "ibinn/model.hpp"

namespace ibinn {

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> refs = net.params();
  for (ParamRef& p : gmm.params()) refs.push_back(std::move(p));
  return refs;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  Model model;
  model.net = build_flow(config.flow, seed);
  model.gmm = GmmLatent(model.net.dim(), config.classes);
  model.gmm.set_learnable_phi(config.learnable_phi);
  if (config.hypersphere) model.gmm.set_hypersphere(true, config.hypersphere_radius);
  Rng rng = derive_rng(seed, "init-gmm");
  model.gmm.init_means(rng);
  return model;
}

}  // namespace ibinn
