#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rvsa/blocks.hpp"

namespace rvsa {

/// Checkpoint container: plain-text manifest (name, shape, byte offset into
/// the data section) followed by raw little-endian 64-bit values. The mode
/// flag records whether PCM kernels have been padded yet.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor*>>& state, ModelMode mode);

struct CheckpointManifest {
  ModelMode mode;
  std::vector<std::pair<std::string, Shape>> entries;
};

CheckpointManifest read_manifest(const std::string& path);

/// Loads matching names into the model. A pretrain checkpoint loaded into a
/// finetune model has its 1x1 PCM kernels padded to 3x3 on the fly (exactly
/// once; a finetune checkpoint is taken as already padded). Parameters
/// absent from the checkpoint (e.g. fresh transform heads) keep their
/// initialization. Shape mismatches other than the PCM padding are errors.
void load_checkpoint(const std::string& path, Model& model);

/// Copies every same-named tensor from src to dst, padding 1x1 PCM kernels
/// when dst expects 3x3.
void copy_matching_state(Model& src, Model& dst);

}  // namespace rvsa
