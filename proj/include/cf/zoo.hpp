#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cf/model.hpp"
#include "cf/rng.hpp"

namespace cf {

/// Incremental, seeded construction of ModelGraphs with random weights.
/// Every layer method returns the new node's id.
class GraphBuilder {
 public:
  GraphBuilder(Shape input_shape, std::uint64_t seed);

  const std::string& input() const { return input_id_; }
  std::size_t channels(const std::string& id) const { return shapes_.at(id)[0]; }
  const Shape& shape(const std::string& id) const { return shapes_.at(id); }

  std::string conv(const std::string& x, std::size_t out, std::size_t kernel,
                   std::size_t stride = 1, std::size_t padding = 0, bool bias = false);
  /// Batchnorm with random running statistics and affine parameters.
  std::string batchnorm(const std::string& x);
  std::string relu(const std::string& x, bool tap = true);
  std::string maxpool(const std::string& x, std::size_t kernel, std::size_t stride,
                      std::size_t padding = 0);
  std::string avgpool(const std::string& x, std::size_t kernel, std::size_t stride,
                      std::size_t padding = 0);
  std::string global_avgpool(const std::string& x);
  std::string add(const std::vector<std::string>& xs);
  std::string concat(const std::vector<std::string>& xs);
  std::string linear(const std::string& x, std::size_t out, bool bias = true);

  LayerNode& node(const std::string& id);
  Rng& rng() { return rng_; }

  ModelGraph build(const std::string& output) const;

 private:
  std::string push(LayerNode node, Shape shape);
  std::string next_id(const char* prefix);

  Rng rng_;
  std::string input_id_ = "input";
  std::vector<LayerNode> nodes_;
  std::map<std::string, Shape> shapes_;
  std::map<std::string, std::size_t> counters_;
};

/// VGG-16 for 32x32 inputs: 13 conv3x3+BN+ReLU, five 2x2 max-pools, then
/// linear(512,512)+BN+ReLU+linear(512,classes).
ModelGraph vgg16_cifar(std::uint64_t seed, std::size_t num_classes = 10);

/// Same topology with explicit per-conv filter counts (13 entries).
ModelGraph vgg16_cifar(std::uint64_t seed, const std::vector<std::size_t>& filters,
                       std::size_t num_classes = 10);

/// CIFAR ResNet of depth 6n+2 (basic blocks, 16/32/64 channels). Downsampling
/// shortcuts use a strided 1x1 projection conv followed by batchnorm.
ModelGraph resnet_cifar(std::size_t depth, std::uint64_t seed, std::size_t num_classes = 10);

/// conv3x3(+bias) -> relu -> conv3x3(+bias) -> relu -> global pool -> linear.
ModelGraph two_conv_net(std::uint64_t seed, const Shape& input_shape, std::size_t filters1,
                        std::size_t filters2, std::size_t num_classes = 10);

struct DuplicateNetSpec {
  Shape input_shape{3, 8, 8};
  /// Sizes of duplicated-filter groups in the first conv; their sum is the
  /// filter count. Members of a group copy the group's first filter.
  std::vector<std::size_t> groups{2, 1, 1, 1, 1, 1, 1};
  /// Gaussian noise added to the weights of each copy (0 = exact duplicates).
  double noise = 0.0;
  /// Per-copy noise multipliers cycled over group members after the first.
  std::vector<double> noise_profile{1.0};
  bool batchnorm = false;
  bool shuffle = false;  // scatter group members over filter indices
  std::size_t filters2 = 8;
  std::size_t num_classes = 10;
};

struct DuplicateNet {
  ModelGraph model;
  std::string layer;  // the first conv, carrying the duplicated filters
  std::vector<std::vector<std::size_t>> groups;
};

/// conv1 (grouped duplicates) [-> bn] -> relu -> conv2 -> relu -> global pool -> linear.
DuplicateNet duplicate_filter_net(std::uint64_t seed, const DuplicateNetSpec& spec);

struct ResidualSpec {
  Shape input_shape{3, 8, 8};
  std::size_t stem_channels = 8;
  std::size_t block_channels = 8;
  std::size_t stride = 1;
  bool projection = false;  // forced when stride or channels change
};

/// stem conv+bn+relu -> one basic residual block -> conv+relu -> pool -> linear.
ModelGraph residual_block_net(std::uint64_t seed, const ResidualSpec& spec);

/// `count` images of `shape` ([c,h,w]) with entries uniform in [0,1).
Tensor random_images(std::uint64_t seed, std::size_t count, const Shape& shape);

}  // namespace cf
