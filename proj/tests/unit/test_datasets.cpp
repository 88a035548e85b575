#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cf/datasets.hpp"
#include "cf/error.hpp"
#include "cf/zoo.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cf_test_datasets_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Record r: label r % 10, byte at plane position p is (r + p) % 256.
std::vector<std::byte> records(std::size_t count) {
  std::vector<std::byte> bytes;
  for (std::size_t r = 0; r < count; ++r) {
    bytes.push_back(static_cast<std::byte>(r % 10));
    for (std::size_t p = 0; p < 3072; ++p) bytes.push_back(static_cast<std::byte>((r + p) % 256));
  }
  return bytes;
}

void write(const fs::path& path, const std::vector<std::byte>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

cf::ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const cf::Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return cf::ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("saturated records decode to one") {
  std::vector<std::byte> bytes(2 * cf::kCifarRecordBytes, std::byte{255});
  bytes[0] = std::byte{3};
  bytes[cf::kCifarRecordBytes] = std::byte{7};
  const auto b = cf::decode_cifar10(bytes);
  CHECK(b.images.shape() == cf::Shape{2, 3, 32, 32});
  for (float v : b.images.data()) CHECK(v == 1.0f);
  CHECK(b.labels == std::vector<std::uint8_t>{3, 7});
}

TEST_CASE("a truncated record is a format error") {
  const std::vector<std::byte> bytes(3072, std::byte{0});
  CHECK(code_of([&] { cf::decode_cifar10(bytes); }) == cf::ErrorCode::Format);
}

TEST_CASE("planes map to channels row-major") {
  const auto b = cf::decode_cifar10(records(1));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y : {0, 5, 31})
      for (std::size_t x : {0, 17, 31}) {
        const std::size_t p = c * 1024 + y * 32 + x;
        CHECK(b.images.at({0, c, y, x}) == static_cast<float>(p % 256) / 255.0f);
      }
}

TEST_CASE("normalization standardizes each channel") {
  cf::Normalization norm;
  norm.mean = {0.5f, 0.25f, 0.0f};
  norm.stddev = {0.5f, 0.25f, 2.0f};
  std::vector<std::byte> bytes(cf::kCifarRecordBytes, std::byte{255});
  const auto b = cf::decode_cifar10(bytes, norm);
  CHECK(b.images.at({0, 0, 0, 0}) == doctest::Approx(1.0));
  CHECK(b.images.at({0, 1, 3, 3}) == doctest::Approx(3.0));
  CHECK(b.images.at({0, 2, 9, 9}) == doctest::Approx(0.5));
}

TEST_CASE("seeded draws from a batch directory") {
  const fs::path dir = scratch("draw");
  write(dir / "test_batch.bin", records(20));
  const auto a = cf::load_cifar10(dir, 8, 42);
  const auto b = cf::load_cifar10(dir, 8, 42);
  CHECK(a.indices == b.indices);
  CHECK(a.images == b.images);
  CHECK(cf::load_cifar10(dir, 8, 43).indices != a.indices);
  for (std::size_t i = 0; i < 8; ++i) CHECK(a.labels[i] == a.indices[i] % 10);
  CHECK(cf::load_cifar10(dir, 0, 1).images.dim(0) == 20);
  CHECK(code_of([&] { cf::load_cifar10(dir, 21, 1); }) == cf::ErrorCode::InvalidArgument);
  CHECK(code_of([&] { cf::load_cifar10(scratch("empty"), 1, 1); }) == cf::ErrorCode::Io);
}

TEST_CASE("training batches are used when the test batch is absent") {
  const fs::path dir = scratch("train");
  write(dir / "data_batch_2.bin", records(3));
  write(dir / "data_batch_1.bin", records(2));
  const auto all = cf::load_cifar10(dir, 0, 0);
  CHECK(all.images.dim(0) == 5);
}

TEST_CASE("probe files round trip and detect corruption") {
  const fs::path dir = scratch("probes");
  const cf::Tensor images = cf::random_images(4, 6, {3, 8, 8});
  cf::save_probes(images, dir / "probes.json");
  CHECK(cf::load_probes(dir / "probes.json") == images);
  CHECK(cf::load_calibration(dir / "probes.json", 0, 0).dim(0) == 6);
  CHECK(cf::load_calibration(dir / "probes.json", 4, 9) == cf::load_calibration(dir / "probes.json", 4, 9));
  CHECK(cf::load_calibration(dir / "probes.json", 3, 5).dim(0) == 3);

  {
    std::fstream blob(dir / cf::kProbesBlob, std::ios::in | std::ios::out | std::ios::binary);
    blob.seekp(10);
    blob.put('\x7f');
  }
  CHECK(code_of([&] { cf::load_probes(dir / "probes.json"); }) == cf::ErrorCode::ChecksumMismatch);
  CHECK(code_of([&] { cf::load_probes(dir / "missing.json"); }) == cf::ErrorCode::Io);
}
