#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "paraclap/model.hpp"

namespace paraclap {

inline constexpr int kCheckpointVersion = 1;

/// JSON document: format version, dimensions, vocabulary (+ hash), feature
/// standardization, and every tensor as {name, shape, data}. Doubles are
/// written in shortest round-trip form so save/load is bit-exact.
std::string checkpoint_to_string(const ClapModel& model);

/// Validates version, vocabulary hash and every tensor shape.
ClapModel checkpoint_from_string(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const ClapModel& model);
ClapModel load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 of arbitrary bytes, hex encoded; used as a content id.
std::string content_hash(std::string_view bytes);

}  // namespace paraclap
