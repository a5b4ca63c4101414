#pragma once

// Versioned single-file checkpoint container: magic header, section table
// with per-section checksums, and a whole-file checksum. Loading then saving
// reproduces a byte-identical file.

#include <optional>
#include <string>

#include "emosllm/engine.hpp"

namespace emosllm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// include_trainer adds optimizer moments, the trainer rng, and the completed
// epoch counter so an interrupted phase can resume exactly.
void save_checkpoint(const ModelState& state, const std::string& path,
                     bool include_trainer = false);

ModelState load_checkpoint(const std::string& path);

// Config hash recorded in the header, without loading the full state.
std::uint64_t checkpoint_config_hash(const std::string& path);

}  // namespace emosllm
