#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "cgl/engine.hpp"

namespace cgl {

// Versioned plain-text checkpoint with a trailing checksum line. Doubles
// are stored as 64-bit hex bit patterns so resume is bit-exact.
void checkpoint_save(const std::string& path, const TrainerState& state, std::uint64_t config_hash);

// Loads and verifies the checksum. When expected_hash is set and differs
// from the stored config hash, load refuses unless force is true.
TrainerState checkpoint_load(const std::string& path, std::optional<std::uint64_t> expected_hash = {},
                             bool force = false);

std::uint64_t checkpoint_config_hash(const std::string& path);

std::uint64_t fnv1a64(const std::string& text);

} // namespace cgl
