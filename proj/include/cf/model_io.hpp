#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cf/model.hpp"

namespace cf {

inline constexpr const char* kModelFormat = "cfmodel/1";
inline constexpr const char* kWeightsFile = "weights.bin";

/// Load a `model.json` manifest and its sibling little-endian float32 blob.
/// Errors: Io (missing files), Format (bad JSON / version), ShapeInconsistency
/// (blob too short for a declared shape), ChecksumMismatch, CyclicGraph.
ModelGraph load_model(const std::filesystem::path& manifest_path);

/// Write `manifest_path` and `weights.bin` in the same directory.
void save_model(const ModelGraph& model, const std::filesystem::path& manifest_path);

/// CRC-32 (IEEE 802.3) of a byte range.
std::uint32_t crc32_of(std::span<const std::byte> bytes);

/// float32 values as little-endian bytes, and back.
std::vector<std::byte> to_le_bytes(std::span<const float> values);
std::vector<float> from_le_bytes(std::span<const std::byte> bytes);

/// Whole-file helpers; failures raise Io.
std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace cf
