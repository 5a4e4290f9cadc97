#pragma once

#include <cstdint>
#include <filesystem>

#include "knpl/model.hpp"

namespace knpl::model {

// Versioned binary weight container: magic "KNPL", format version, config
// block, then named tensor blobs with shape headers. All integers and the
// 64-bit float payloads are little-endian regardless of host byte order.
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

// Content hash of an existing checkpoint file, for cache invalidation.
std::uint64_t file_hash(const std::filesystem::path& path);

} // namespace knpl::model
