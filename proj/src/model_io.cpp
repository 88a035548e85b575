#include "cf/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "cf/error.hpp"

namespace cf {
namespace {

using nlohmann::json;

json params_to_json(const LayerNode& node) {
  json p = json::object();
  switch (node.kind) {
    case LayerKind::conv:
      p["stride"] = node.params.stride;
      p["padding"] = node.params.padding;
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      p["kernel"] = node.params.kernel;
      p["stride"] = node.params.stride;
      p["padding"] = node.params.padding;
      break;
    case LayerKind::batchnorm:
      p["epsilon"] = node.params.epsilon;
      break;
    default:
      break;
  }
  return p;
}

LayerParams params_from_json(const json& p) {
  LayerParams params;
  params.stride = p.value("stride", std::size_t{1});
  params.padding = p.value("padding", std::size_t{0});
  params.kernel = p.value("kernel", std::size_t{0});
  params.epsilon = p.value("epsilon", 1e-5f);
  return params;
}

}  // namespace

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::Io, "failed reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing '" + path.string() + "'");
}


std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::uint32_t crc32_of(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large blobs.
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::byte> to_le_bytes(std::span<const float> values) {
  std::vector<std::byte> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      out[i * 4 + b] = static_cast<std::byte>((bits >> (8 * b)) & 0xFFu);
    }
  }
  return out;
}

std::vector<float> from_le_bytes(std::span<const std::byte> bytes) {
  if (bytes.size() % 4 != 0) {
    throw Error(ErrorCode::Format, "float32 blob length " + std::to_string(bytes.size()) +
                                       " is not a multiple of 4");
  }
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    }
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

void save_model(const ModelGraph& model, const std::filesystem::path& manifest_path) {
  std::vector<float> blob;
  json nodes = json::array();
  for (const LayerNode& node : model.nodes()) {
    json tensors = json::array();
    for (const auto& [name, tensor] : node.tensors) {
      tensors.push_back({{"name", name},
                         {"shape", tensor.shape()},
                         {"offset", blob.size() * 4}});
      blob.insert(blob.end(), tensor.data().begin(), tensor.data().end());
    }
    nodes.push_back({{"id", node.id},
                     {"kind", std::string(to_string(node.kind))},
                     {"inputs", node.inputs},
                     {"params", params_to_json(node)},
                     {"tap", node.tap},
                     {"tensors", std::move(tensors)}});
  }
  const std::vector<std::byte> bytes = to_le_bytes(blob);
  json manifest = {
      {"format", kModelFormat},
      {"input_shape", model.input_shape()},
      {"output", model.output_id()},
      {"num_classes", model.num_classes()},
      {"weights", {{"file", kWeightsFile}, {"bytes", bytes.size()}, {"crc32", crc32_of(bytes)}}},
      {"nodes", std::move(nodes)},
  };
  const auto dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  write_file(dir / kWeightsFile, bytes);
  const std::string text = manifest.dump(2) + "\n";
  write_file(manifest_path, std::as_bytes(std::span(text.data(), text.size())));
}

ModelGraph load_model(const std::filesystem::path& manifest_path) {
  const std::vector<std::byte> text = read_file(manifest_path);
  json manifest;
  try {
    manifest = json::parse(reinterpret_cast<const char*>(text.data()),
                           reinterpret_cast<const char*>(text.data()) + text.size());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, "'" + manifest_path.string() + "': " + e.what());
  }

  try {
    if (manifest.value("format", std::string{}) != kModelFormat) {
      throw Error(ErrorCode::Format, "'" + manifest_path.string() + "' is not a " +
                                         std::string(kModelFormat) + " manifest");
    }
    const json& weights = manifest.at("weights");
    const auto blob_path = manifest_path.parent_path() / weights.at("file").get<std::string>();
    const std::vector<std::byte> bytes = read_file(blob_path);
    const std::vector<float> blob = from_le_bytes(bytes);

    std::vector<LayerNode> nodes;
    for (const json& jn : manifest.at("nodes")) {
      LayerNode node;
      node.id = jn.at("id").get<std::string>();
      const auto kind_name = jn.at("kind").get<std::string>();
      auto kind = parse_layer_kind(kind_name);
      if (!kind) {
        throw Error(ErrorCode::Format, "node '" + node.id + "' has unknown kind '" + kind_name + "'");
      }
      node.kind = *kind;
      node.inputs = jn.value("inputs", std::vector<std::string>{});
      node.params = params_from_json(jn.value("params", json::object()));
      node.tap = jn.value("tap", false);
      for (const json& jt : jn.value("tensors", json::array())) {
        const auto name = jt.at("name").get<std::string>();
        Shape shape = jt.at("shape").get<Shape>();
        const auto offset = jt.at("offset").get<std::size_t>();
        const std::size_t count = element_count(shape);
        if (offset % 4 != 0) {
          throw Error(ErrorCode::Format, "tensor " + node.id + "." + name +
                                             " has unaligned offset " + std::to_string(offset));
        }
        const std::size_t first = offset / 4;
        if (first > blob.size() || blob.size() - first < count) {
          throw Error(ErrorCode::ShapeInconsistency,
                      "tensor " + node.id + "." + name + " declares shape " +
                          to_string(shape) + " (" + std::to_string(count) +
                          " floats) at float offset " + std::to_string(first) +
                          " but the blob holds " + std::to_string(blob.size()) + " floats");
        }
        node.tensors.emplace(
            name, Tensor(std::move(shape), std::vector<float>(blob.begin() + first,
                                                             blob.begin() + first + count)));
      }
      nodes.push_back(std::move(node));
    }

    if (weights.contains("bytes") && weights.at("bytes").get<std::size_t>() != bytes.size()) {
      throw Error(ErrorCode::ShapeInconsistency,
                  "blob '" + blob_path.string() + "' has " + std::to_string(bytes.size()) +
                      " bytes, manifest declares " +
                      std::to_string(weights.at("bytes").get<std::size_t>()));
    }
    const auto expected_crc = weights.at("crc32").get<std::uint32_t>();
    const std::uint32_t actual_crc = crc32_of(bytes);
    if (expected_crc != actual_crc) {
      throw Error(ErrorCode::ChecksumMismatch,
                  "blob '" + blob_path.string() + "' has CRC-32 " + std::to_string(actual_crc) +
                      ", manifest declares " + std::to_string(expected_crc));
    }

    ModelGraph model(std::move(nodes), manifest.at("output").get<std::string>(),
                     manifest.at("input_shape").get<Shape>());
    if (manifest.contains("num_classes") &&
        manifest.at("num_classes").get<std::size_t>() != model.num_classes()) {
      throw Error(ErrorCode::ShapeInconsistency,
                  "manifest num_classes " +
                      std::to_string(manifest.at("num_classes").get<std::size_t>()) +
                      " disagrees with output width " + std::to_string(model.num_classes()));
    }
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, "'" + manifest_path.string() + "': " + e.what());
  }
}

}  // namespace cf
