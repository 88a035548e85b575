#include "cf/zoo.hpp"

#include <cmath>
#include <numeric>

#include "cf/error.hpp"

namespace cf {
namespace {

Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

std::size_t window(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) throw Error(ErrorCode::ShapeInconsistency, "window larger than input");
  return (in + 2 * p - k) / s + 1;
}

}  // namespace

GraphBuilder::GraphBuilder(Shape input_shape, std::uint64_t seed) : rng_(seed) {
  LayerNode in;
  in.id = input_id_;
  in.kind = LayerKind::input;
  push(std::move(in), std::move(input_shape));
}

std::string GraphBuilder::next_id(const char* prefix) {
  return std::string(prefix) + std::to_string(++counters_[prefix]);
}

std::string GraphBuilder::push(LayerNode node, Shape shape) {
  std::string id = node.id;
  shapes_[id] = std::move(shape);
  nodes_.push_back(std::move(node));
  return id;
}

std::string GraphBuilder::conv(const std::string& x, std::size_t out, std::size_t kernel,
                               std::size_t stride, std::size_t padding, bool bias) {
  const Shape& in = shapes_.at(x);
  LayerNode node;
  node.id = next_id("conv");
  node.kind = LayerKind::conv;
  node.inputs = {x};
  node.params.stride = stride;
  node.params.padding = padding;
  const double fan_in = static_cast<double>(in[0] * kernel * kernel);
  node.tensors["weight"] =
      normal_tensor(rng_, {out, in[0], kernel, kernel}, std::sqrt(2.0 / fan_in));
  if (bias) node.tensors["bias"] = uniform_tensor(rng_, {out}, -0.1, 0.1);
  Shape s{out, window(in[1], kernel, stride, padding), window(in[2], kernel, stride, padding)};
  return push(std::move(node), std::move(s));
}

std::string GraphBuilder::batchnorm(const std::string& x) {
  const std::size_t c = shapes_.at(x)[0];
  LayerNode node;
  node.id = next_id("bn");
  node.kind = LayerKind::batchnorm;
  node.inputs = {x};
  node.tensors["mean"] = normal_tensor(rng_, {c}, 0.1);
  node.tensors["var"] = uniform_tensor(rng_, {c}, 0.5, 1.5);
  node.tensors["scale"] = uniform_tensor(rng_, {c}, 0.8, 1.2);
  node.tensors["shift"] = normal_tensor(rng_, {c}, 0.1);
  return push(std::move(node), shapes_.at(x));
}

std::string GraphBuilder::relu(const std::string& x, bool tap) {
  LayerNode node;
  node.id = next_id("relu");
  node.kind = LayerKind::relu;
  node.inputs = {x};
  node.tap = tap;
  return push(std::move(node), shapes_.at(x));
}

std::string GraphBuilder::maxpool(const std::string& x, std::size_t kernel,
                                  std::size_t stride, std::size_t padding) {
  const Shape& in = shapes_.at(x);
  LayerNode node;
  node.id = next_id("maxpool");
  node.kind = LayerKind::maxpool;
  node.inputs = {x};
  node.params = {stride, padding, kernel, 1e-5f};
  Shape s{in[0], window(in[1], kernel, stride, padding), window(in[2], kernel, stride, padding)};
  return push(std::move(node), std::move(s));
}

std::string GraphBuilder::avgpool(const std::string& x, std::size_t kernel,
                                  std::size_t stride, std::size_t padding) {
  const Shape& in = shapes_.at(x);
  LayerNode node;
  node.id = next_id("avgpool");
  node.kind = LayerKind::avgpool;
  node.inputs = {x};
  node.params = {stride, padding, kernel, 1e-5f};
  Shape s{in[0], window(in[1], kernel, stride, padding), window(in[2], kernel, stride, padding)};
  return push(std::move(node), std::move(s));
}

std::string GraphBuilder::global_avgpool(const std::string& x) {
  LayerNode node;
  node.id = next_id("gap");
  node.kind = LayerKind::global_avgpool;
  node.inputs = {x};
  return push(std::move(node), {shapes_.at(x)[0], 1, 1});
}

std::string GraphBuilder::add(const std::vector<std::string>& xs) {
  LayerNode node;
  node.id = next_id("add");
  node.kind = LayerKind::add;
  node.inputs = xs;
  return push(std::move(node), shapes_.at(xs.at(0)));
}

std::string GraphBuilder::concat(const std::vector<std::string>& xs) {
  Shape s = shapes_.at(xs.at(0));
  s[0] = 0;
  for (const auto& x : xs) s[0] += shapes_.at(x)[0];
  LayerNode node;
  node.id = next_id("concat");
  node.kind = LayerKind::concat;
  node.inputs = xs;
  return push(std::move(node), std::move(s));
}

std::string GraphBuilder::linear(const std::string& x, std::size_t out, bool bias) {
  const std::size_t features = element_count(shapes_.at(x));
  LayerNode node;
  node.id = next_id("fc");
  node.kind = LayerKind::linear;
  node.inputs = {x};
  node.tensors["weight"] =
      normal_tensor(rng_, {out, features}, std::sqrt(1.0 / static_cast<double>(features)));
  if (bias) node.tensors["bias"] = uniform_tensor(rng_, {out}, -0.1, 0.1);
  return push(std::move(node), {out, 1, 1});
}

LayerNode& GraphBuilder::node(const std::string& id) {
  for (LayerNode& n : nodes_) {
    if (n.id == id) return n;
  }
  throw Error(ErrorCode::UnknownNode, "builder has no node '" + id + "'");
}

ModelGraph GraphBuilder::build(const std::string& output) const {
  return ModelGraph(nodes_, output, shapes_.at(input_id_));
}

ModelGraph vgg16_cifar(std::uint64_t seed, std::size_t num_classes) {
  return vgg16_cifar(seed, {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512},
                     num_classes);
}

ModelGraph vgg16_cifar(std::uint64_t seed, const std::vector<std::size_t>& filters,
                       std::size_t num_classes) {
  if (filters.size() != 13) {
    throw Error(ErrorCode::InvalidArgument, "VGG-16 needs 13 filter counts");
  }
  // Max-pool after these conv positions (1-based: 2, 4, 7, 10, 13).
  const std::vector<bool> pool_after{false, true, false, true, false, false, true,
                                     false, false, true, false, false, true};
  GraphBuilder b({3, 32, 32}, seed);
  std::string x = b.input();
  for (std::size_t i = 0; i < filters.size(); ++i) {
    x = b.relu(b.batchnorm(b.conv(x, filters[i], 3, 1, 1)));
    if (pool_after[i]) x = b.maxpool(x, 2, 2);
  }
  x = b.relu(b.batchnorm(b.linear(x, 512)));
  return b.build(b.linear(x, num_classes));
}

ModelGraph resnet_cifar(std::size_t depth, std::uint64_t seed, std::size_t num_classes) {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw Error(ErrorCode::InvalidArgument, "CIFAR ResNet depth must be 6n+2, got " +
                                                std::to_string(depth));
  }
  const std::size_t blocks = (depth - 2) / 6;
  GraphBuilder b({3, 32, 32}, seed);
  std::string x = b.relu(b.batchnorm(b.conv(b.input(), 16, 3, 1, 1)));
  std::size_t in_ch = 16;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t ch = 16u << stage;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      const std::size_t stride = (stage > 0 && blk == 0) ? 2 : 1;
      std::string y = b.relu(b.batchnorm(b.conv(x, ch, 3, stride, 1)));
      y = b.batchnorm(b.conv(y, ch, 3, 1, 1));
      std::string shortcut = x;
      if (stride != 1 || in_ch != ch) shortcut = b.batchnorm(b.conv(x, ch, 1, stride, 0));
      x = b.relu(b.add({y, shortcut}));
      in_ch = ch;
    }
  }
  return b.build(b.linear(b.global_avgpool(x), num_classes));
}

ModelGraph two_conv_net(std::uint64_t seed, const Shape& input_shape, std::size_t filters1,
                        std::size_t filters2, std::size_t num_classes) {
  GraphBuilder b(input_shape, seed);
  std::string x = b.relu(b.conv(b.input(), filters1, 3, 1, 1, true));
  x = b.relu(b.conv(x, filters2, 3, 1, 1, true));
  return b.build(b.linear(b.global_avgpool(x), num_classes));
}

DuplicateNet duplicate_filter_net(std::uint64_t seed, const DuplicateNetSpec& spec) {
  if (spec.groups.empty()) throw Error(ErrorCode::InvalidArgument, "no filter groups");
  const std::size_t filters =
      std::accumulate(spec.groups.begin(), spec.groups.end(), std::size_t{0});
  GraphBuilder b(spec.input_shape, seed);
  const std::string conv1 = b.conv(b.input(), filters, 3, 1, 1, true);
  std::string x = conv1;
  std::string bn;
  if (spec.batchnorm) x = bn = b.batchnorm(x);
  x = b.relu(x);
  x = b.relu(b.conv(x, spec.filters2, 3, 1, 1, true));
  x = b.linear(b.global_avgpool(x), spec.num_classes);

  // Slot k of the canonical (group-contiguous) layout lands on filter perm[k].
  std::vector<std::size_t> perm(filters);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng& rng = b.rng();
  if (spec.shuffle) {
    for (std::size_t i = filters; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  }

  LayerNode& node = b.node(conv1);
  Tensor& w = node.tensors.at("weight");
  Tensor& bias = node.tensors.at("bias");
  const std::size_t slice = w.size() / filters;
  const Tensor base_w = w;
  const Tensor base_b = bias;
  std::vector<std::vector<std::size_t>> groups;
  std::size_t slot = 0;
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const std::size_t lead = slot;
    std::vector<std::size_t> members;
    for (std::size_t m = 0; m < spec.groups[g]; ++m, ++slot) {
      const std::size_t dst = perm[slot];
      members.push_back(dst);
      const double sigma =
          m == 0 ? 0.0 : spec.noise * spec.noise_profile[(m - 1) % spec.noise_profile.size()];
      for (std::size_t i = 0; i < slice; ++i) {
        double v = base_w[lead * slice + i];
        if (sigma > 0.0) v += rng.normal(0.0, sigma);
        w[dst * slice + i] = static_cast<float>(v);
      }
      bias[dst] = base_b[lead];
    }
    std::sort(members.begin(), members.end());
    groups.push_back(std::move(members));
  }
  if (spec.batchnorm) {
    LayerNode& bn_node = b.node(bn);
    for (auto& [name, t] : bn_node.tensors) {
      const Tensor src = t;
      std::size_t s = 0;
      for (std::size_t g = 0; g < spec.groups.size(); ++g) {
        const std::size_t lead = s;
        for (std::size_t m = 0; m < spec.groups[g]; ++m, ++s) t[perm[s]] = src[lead];
      }
    }
  }
  return DuplicateNet{b.build(x), conv1, std::move(groups)};
}

ModelGraph residual_block_net(std::uint64_t seed, const ResidualSpec& spec) {
  GraphBuilder b(spec.input_shape, seed);
  std::string x = b.relu(b.batchnorm(b.conv(b.input(), spec.stem_channels, 3, 1, 1)));
  std::string y = b.relu(b.batchnorm(b.conv(x, spec.block_channels, 3, spec.stride, 1)));
  y = b.batchnorm(b.conv(y, spec.block_channels, 3, 1, 1));
  std::string shortcut = x;
  if (spec.projection || spec.stride != 1 || spec.stem_channels != spec.block_channels) {
    shortcut = b.batchnorm(b.conv(x, spec.block_channels, 1, spec.stride, 0));
  }
  x = b.relu(b.add({y, shortcut}));
  x = b.relu(b.conv(x, spec.block_channels, 3, 1, 1, true));
  return b.build(b.linear(b.global_avgpool(x), 10));
}

Tensor random_images(std::uint64_t seed, std::size_t count, const Shape& shape) {
  Rng rng(seed);
  Shape s{count};
  s.insert(s.end(), shape.begin(), shape.end());
  Tensor t(std::move(s));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace cf
