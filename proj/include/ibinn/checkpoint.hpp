#ifndef IBINN_CHECKPOINT_HPP
#define IBINN_CHECKPOINT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ibinn/model.hpp"

namespace ibinn {

// Optimizer state carried inside a checkpoint so training can resume
// mid-schedule and reproduce an uninterrupted run exactly.
struct TrainerState {
  std::uint32_t epochs_done = 0;
  double learning_rate = 0.0;
  std::vector<dvec> velocity;  // aligned with Model::params()
};

// Self-describing little-endian binary format (layout documented in the
// README): magic "IBINN1", version, shape header, then tagged sections for
// each layer, the mixture, and optional trainer state.
void save_checkpoint(const std::string& path, Model& model,
                     const TrainerState* state = nullptr);

Model load_checkpoint(const std::string& path, std::optional<TrainerState>* state = nullptr);

}  // namespace ibinn

#endif  // IBINN_CHECKPOINT_HPP
