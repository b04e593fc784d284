#pragma once

#include <filesystem>

#include "neuralme/cardio_model.hpp"
#include "neuralme/hybrid.hpp"

namespace neuralme {

/// Parameter checkpoint: the flat ParameterVector in its documented stable
/// order plus everything needed to rebuild the hybrid model around it
/// (topology tuple, scaler constants, seed, inner-model recipe).
struct Checkpoint {
  std::string network_file;
  std::string network_hash;
  CardioVariant variant = CardioVariant::simple_C;
  FluidProps fluid;
  HeartProfile heart;
  std::vector<PlaceholderParams> placeholders;
  std::uint64_t seed = 0;
  bool residual_skip = true;
  HybridTopology topology;
  ScalerSet scalers;
  Vec params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Captures the model state into a checkpoint record.
Checkpoint make_checkpoint(const HybridModel& model, const CardioModel& inner,
                           const std::string& network_file,
                           const std::string& network_hash, std::uint64_t seed);

/// Rebuilds the hybrid (inner model included) from a checkpoint and the
/// network it references.
HybridModel rebuild_hybrid(const Checkpoint& ck, const ArterialNetwork& net);

} // namespace neuralme
