#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cf/tensor.hpp"

namespace cf {

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr const char* kProbesFormat = "cfprobes/1";
inline constexpr const char* kProbesBlob = "probes.bin";

/// Optional per-channel standardization applied after scaling to [0, 1].
struct Normalization {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};
};

struct CifarBatch {
  Tensor images;  // [count, 3, 32, 32], RGB
  std::vector<std::uint8_t> labels;
  std::vector<std::size_t> indices;  // record positions in the loaded files
};

/// Decode raw CIFAR-10 records: one label byte then 1024 R, 1024 G and
/// 1024 B bytes, each plane row-major. Throws Format when the length is not
/// a multiple of 3073.
CifarBatch decode_cifar10(std::span<const std::byte> bytes,
                          const std::optional<Normalization>& norm = std::nullopt);

/// Load `test_batch.bin` from `dir`, or every `data_batch_*.bin` when it is
/// absent, and draw `count` records with a seeded shuffle (count 0 = all).
/// Throws Io when no batch file exists, InvalidArgument when count exceeds
/// the records available.
CifarBatch load_cifar10(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed,
                        const std::optional<Normalization>& norm = std::nullopt);

/// Probe tensors stored as `probes.json` plus a little-endian float32 blob.
void save_probes(const Tensor& images, const std::filesystem::path& manifest_path,
                 const std::string& preprocessing = "raw");
Tensor load_probes(const std::filesystem::path& manifest_path);

/// Calibration images from a CIFAR-10 directory or a probes manifest. The
/// first `count` records of a shuffled draw are returned (0 = all).
Tensor load_calibration(const std::filesystem::path& source, std::size_t count, std::uint64_t seed,
                        const std::optional<Normalization>& norm = std::nullopt);

}  // namespace cf
