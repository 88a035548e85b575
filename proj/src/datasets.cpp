#include "cf/datasets.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>

#include "cf/error.hpp"
#include "cf/model_io.hpp"
#include "cf/rng.hpp"

namespace cf {
namespace {

constexpr std::size_t kSide = 32;
constexpr std::size_t kPlane = kSide * kSide;

// First `count` entries of a seeded Fisher-Yates shuffle of [0, total).
std::vector<std::size_t> draw(std::size_t total, std::size_t count, std::uint64_t seed) {
  if (count == 0) count = total;
  if (count > total) {
    throw Error(ErrorCode::InvalidArgument, "requested " + std::to_string(count) +
                                                " images but only " + std::to_string(total) +
                                                " are available");
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pick = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(order[i], order[pick]);
  }
  order.resize(count);
  return order;
}

std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& dir) {
  const auto test = dir / "test_batch.bin";
  if (std::filesystem::exists(test)) return {test};
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("data_batch_") && name.ends_with(".bin")) files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw Error(ErrorCode::Io, "no CIFAR-10 batch files in '" + dir.string() + "'");
  }
  return files;
}

}  // namespace

CifarBatch decode_cifar10(std::span<const std::byte> bytes, const std::optional<Normalization>& norm) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw Error(ErrorCode::Format, "CIFAR-10 data of " + std::to_string(bytes.size()) +
                                       " bytes is not a whole number of 3073-byte records");
  }
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  CifarBatch batch;
  batch.images = Tensor({count, 3, kSide, kSide});
  batch.labels.resize(count);
  batch.indices.resize(count);
  std::iota(batch.indices.begin(), batch.indices.end(), std::size_t{0});
  auto out = batch.images.data();
  for (std::size_t r = 0; r < count; ++r) {
    const std::byte* rec = bytes.data() + r * kCifarRecordBytes;
    batch.labels[r] = static_cast<std::uint8_t>(rec[0]);
    for (std::size_t c = 0; c < 3; ++c) {
      const float mean = norm ? norm->mean[c] : 0.0f;
      const float stddev = norm ? norm->stddev[c] : 1.0f;
      for (std::size_t p = 0; p < kPlane; ++p) {
        const float v = static_cast<float>(std::to_integer<unsigned>(rec[1 + c * kPlane + p])) / 255.0f;
        out[(r * 3 + c) * kPlane + p] = (v - mean) / stddev;
      }
    }
  }
  return batch;
}

CifarBatch load_cifar10(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed,
                        const std::optional<Normalization>& norm) {
  std::vector<std::byte> bytes;
  for (const auto& file : cifar_files(dir)) {
    const auto chunk = read_file(file);
    if (chunk.size() % kCifarRecordBytes != 0) {
      throw Error(ErrorCode::Format, "'" + file.string() + "' is not a whole number of records");
    }
    bytes.insert(bytes.end(), chunk.begin(), chunk.end());
  }
  const CifarBatch all = decode_cifar10(bytes, norm);
  const auto picks = draw(all.labels.size(), count, seed);
  CifarBatch out;
  out.images = all.images.select(0, picks);
  out.indices = picks;
  for (std::size_t i : picks) out.labels.push_back(all.labels[i]);
  return out;
}

void save_probes(const Tensor& images, const std::filesystem::path& manifest_path,
                 const std::string& preprocessing) {
  const auto bytes = to_le_bytes(images.data());
  const nlohmann::json j = {{"format", kProbesFormat},
                            {"shape", images.shape()},
                            {"preprocessing", preprocessing},
                            {"file", kProbesBlob},
                            {"bytes", bytes.size()},
                            {"crc32", crc32_of(bytes)}};
  write_file(manifest_path.parent_path() / kProbesBlob, bytes);
  write_text(manifest_path, j.dump(2) + "\n");
}

Tensor load_probes(const std::filesystem::path& manifest_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(manifest_path));
    if (j.at("format").get<std::string>() != kProbesFormat) {
      throw Error(ErrorCode::Format, "'" + manifest_path.string() + "' is not a probes manifest");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, "malformed probes manifest: " + std::string(e.what()));
  }
  const Shape shape = j.at("shape").get<Shape>();
  const auto bytes = read_file(manifest_path.parent_path() / j.value("file", std::string(kProbesBlob)));
  if (bytes.size() != element_count(shape) * sizeof(float)) {
    throw Error(ErrorCode::ShapeInconsistency, "probe blob holds " + std::to_string(bytes.size()) +
                                                   " bytes, shape " + to_string(shape) + " needs " +
                                                   std::to_string(element_count(shape) * 4));
  }
  if (j.contains("crc32") && crc32_of(bytes) != j.at("crc32").get<std::uint32_t>()) {
    throw Error(ErrorCode::ChecksumMismatch, "probe blob checksum mismatch");
  }
  return Tensor(shape, from_le_bytes(bytes));
}

Tensor load_calibration(const std::filesystem::path& source, std::size_t count, std::uint64_t seed,
                        const std::optional<Normalization>& norm) {
  if (std::filesystem::is_directory(source)) return load_cifar10(source, count, seed, norm).images;
  if (!std::filesystem::exists(source)) {
    throw Error(ErrorCode::Io, "calibration source '" + source.string() + "' does not exist");
  }
  const Tensor all = load_probes(source);
  if (all.rank() < 2) throw Error(ErrorCode::Format, "probe tensor needs a batch axis");
  const auto picks = draw(all.dim(0), count, seed);
  return all.select(0, picks);
}

}  // namespace cf
