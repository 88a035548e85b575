#include "cf/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "cf/error.hpp"

namespace cf {
namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 10> kKindNames{{
    {LayerKind::input, "input"},
    {LayerKind::conv, "conv"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::relu, "relu"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool, "avgpool"},
    {LayerKind::global_avgpool, "global_avgpool"},
    {LayerKind::add, "add"},
    {LayerKind::concat, "concat"},
    {LayerKind::linear, "linear"},
}};

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) +
                                              " expects a 4-D tensor, got " +
                                              to_string(t.shape()));
  }
}

std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t padding, const char* what) {
  if (kernel == 0 || stride == 0) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(what) + " needs positive kernel and stride");
  }
  if (in + 2 * padding < kernel) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + " window " + std::to_string(kernel) +
                    " exceeds padded extent " + std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

const Tensor& tensor_or_throw(const TensorMap& tensors, const std::string& name,
                              LayerKind kind) {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw Error(ErrorCode::InvalidArgument, std::string(to_string(kind)) +
                                                " node is missing tensor '" +
                                                name + "'");
  }
  return it->second;
}

std::span<const float> optional_tensor(const TensorMap& tensors,
                                       const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) return {};
  return it->second.data();
}

template <bool kMax>
Tensor pool2d(const Tensor& input, std::size_t kernel, std::size_t stride,
              std::size_t padding, const char* what) {
  require_rank4(input, what);
  const std::size_t batch = input.dim(0), ch = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t oh = pooled_extent(h, kernel, stride, padding, what);
  const std::size_t ow = pooled_extent(w, kernel, stride, padding, what);
  Tensor out({batch, ch, oh, ow});
  auto src = input.data();
  auto dst = out.data();
  const double area = static_cast<double>(kernel * kernel);
  for (std::size_t plane = 0; plane < batch * ch; ++plane) {
    const float* in = src.data() + plane * h * w;
    float* o = dst.data() + plane * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = kMax ? -std::numeric_limits<double>::infinity() : 0.0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) -
                static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const double v = in[iy * w + ix];
            if constexpr (kMax) {
              acc = std::max(acc, v);
            } else {
              acc += v;
            }
          }
        }
        o[oy * ow + ox] = static_cast<float>(kMax ? acc : acc / area);
      }
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(LayerKind kind) noexcept {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

bool is_channel_transparent(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::batchnorm:
    case LayerKind::relu:
    case LayerKind::maxpool:
    case LayerKind::avgpool:
    case LayerKind::global_avgpool:
      return true;
    default:
      return false;
  }
}

Tensor conv2d(const Tensor& input, const Tensor& weights,
              std::span<const float> bias, std::size_t stride,
              std::size_t padding) {
  require_rank4(input, "conv2d input");
  require_rank4(weights, "conv2d weights");
  const std::size_t batch = input.dim(0), in_ch = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t out_ch = weights.dim(0), kh = weights.dim(2),
                    kw = weights.dim(3);
  if (weights.dim(1) != in_ch) {
    throw Error(ErrorCode::ShapeMismatch,
                "conv2d weights " + to_string(weights.shape()) + " expect " +
                    std::to_string(weights.dim(1)) + " input channels, input " +
                    to_string(input.shape()) + " has " + std::to_string(in_ch));
  }
  if (!bias.empty() && bias.size() != out_ch) {
    throw Error(ErrorCode::ShapeMismatch,
                "conv2d bias has " + std::to_string(bias.size()) +
                    " entries for " + std::to_string(out_ch) + " filters");
  }
  if (stride == 0) throw Error(ErrorCode::InvalidArgument, "conv2d stride must be positive");
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw Error(ErrorCode::ShapeMismatch,
                "conv2d kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " does not fit padded input " + std::to_string(h + 2 * padding) +
                    "x" + std::to_string(w + 2 * padding));
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

  Tensor out({batch, out_ch, oh, ow});
  auto src = input.data();
  auto wt = weights.data();
  auto dst = out.data();
  std::vector<double> acc(oh * ow);
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  for (std::size_t b = 0; b < batch; ++b) {
    const float* image = src.data() + b * in_ch * h * w;
    for (std::size_t o = 0; o < out_ch; ++o) {
      std::fill(acc.begin(), acc.end(), bias.empty() ? 0.0 : double{bias[o]});
      for (std::size_t c = 0; c < in_ch; ++c) {
        const float* plane = image + c * h * w;
        const float* kernel = wt.data() + ((o * in_ch + c) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double k = kernel[ky * kw + kx];
            if (k == 0.0) continue;
            // Output columns whose input column lies inside the image.
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - pad;
            std::size_t ox_begin = 0;
            if (shift < 0) {
              ox_begin = static_cast<std::size_t>((-shift + static_cast<std::ptrdiff_t>(stride) - 1) /
                                                  static_cast<std::ptrdiff_t>(stride));
            }
            const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(w) - 1 - shift;
            if (last < 0) continue;
            const std::size_t ox_end =
                std::min(ow, static_cast<std::size_t>(last) / stride + 1);
            if (ox_begin >= ox_end) continue;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              // First input column read by output column ox_begin.
              const float* row =
                  plane + iy * static_cast<std::ptrdiff_t>(w) +
                  (static_cast<std::ptrdiff_t>(ox_begin * stride) + shift);
              double* a = acc.data() + oy * ow + ox_begin;
              const std::size_t count = ox_end - ox_begin;
              if (stride == 1) {
                for (std::size_t i = 0; i < count; ++i) a[i] += k * row[i];
              } else {
                for (std::size_t i = 0; i < count; ++i) a[i] += k * row[i * stride];
              }
            }
          }
        }
      }
      float* o_plane = dst.data() + (b * out_ch + o) * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) o_plane[i] = static_cast<float>(acc[i]);
    }
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor batchnorm(const Tensor& input, const BatchNormStats& stats) {
  if (input.rank() < 2) {
    throw Error(ErrorCode::ShapeMismatch, "batchnorm expects at least 2-D input, got " +
                                              to_string(input.shape()));
  }
  const std::size_t ch = input.dim(1);
  if (stats.mean.size() != ch || stats.var.size() != ch ||
      stats.scale.size() != ch || stats.shift.size() != ch) {
    throw Error(ErrorCode::ShapeMismatch,
                "batchnorm statistics do not cover " + std::to_string(ch) + " channels");
  }
  const std::size_t inner = input.size() / (input.dim(0) * ch);
  Tensor out = input;
  auto d = out.data();
  for (std::size_t b = 0; b < input.dim(0); ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double g = double{stats.scale[c]} /
                       std::sqrt(double{stats.var[c]} + double{stats.epsilon});
      const double m = stats.mean[c];
      const double s = stats.shift[c];
      float* p = d.data() + (b * ch + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        p[i] = static_cast<float>(g * (p[i] - m) + s);
      }
    }
  }
  return out;
}

Tensor maxpool(const Tensor& input, std::size_t kernel, std::size_t stride,
               std::size_t padding) {
  return pool2d<true>(input, kernel, stride, padding, "maxpool");
}

Tensor avgpool(const Tensor& input, std::size_t kernel, std::size_t stride,
               std::size_t padding) {
  return pool2d<false>(input, kernel, stride, padding, "avgpool");
}

Tensor global_avgpool(const Tensor& input) {
  require_rank4(input, "global_avgpool");
  const std::size_t batch = input.dim(0), ch = input.dim(1);
  const std::size_t area = input.dim(2) * input.dim(3);
  Tensor out({batch, ch, 1, 1});
  auto src = input.data();
  for (std::size_t plane = 0; plane < batch * ch; ++plane) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += src[plane * area + i];
    out[plane] = static_cast<float>(acc / static_cast<double>(area));
  }
  return out;
}

Tensor add(std::span<const Tensor> inputs) {
  if (inputs.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "add needs at least two inputs, got " +
                                                std::to_string(inputs.size()));
  }
  Tensor out = inputs[0];
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    if (inputs[k].shape() != out.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "add of " + to_string(out.shape()) +
                                                " and " + to_string(inputs[k].shape()));
    }
    auto src = inputs[k].data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

Tensor concat(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw Error(ErrorCode::InvalidArgument, "concat needs inputs");
  for (const Tensor& t : inputs) require_rank4(t, "concat");
  const Tensor& first = inputs[0];
  std::size_t total_ch = 0;
  for (const Tensor& t : inputs) {
    if (t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3)) {
      throw Error(ErrorCode::ShapeMismatch, "concat of " + to_string(first.shape()) +
                                                " and " + to_string(t.shape()));
    }
    total_ch += t.dim(1);
  }
  const std::size_t batch = first.dim(0), area = first.dim(2) * first.dim(3);
  Tensor out({batch, total_ch, first.dim(2), first.dim(3)});
  auto dst = out.data();
  std::size_t pos = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (const Tensor& t : inputs) {
      const std::size_t n = t.dim(1) * area;
      auto src = t.data().subspan(b * n, n);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += n;
    }
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weights, std::span<const float> bias) {
  if (weights.rank() != 2) {
    throw Error(ErrorCode::ShapeMismatch, "linear weights must be 2-D, got " +
                                              to_string(weights.shape()));
  }
  if (input.rank() < 1) throw Error(ErrorCode::ShapeMismatch, "linear input has no batch axis");
  const std::size_t batch = input.dim(0);
  const std::size_t in = batch ? input.size() / batch : 0;
  const std::size_t out_f = weights.dim(0);
  if (weights.dim(1) != in) {
    throw Error(ErrorCode::ShapeMismatch,
                "linear weights " + to_string(weights.shape()) + " expect " +
                    std::to_string(weights.dim(1)) + " features, input " +
                    to_string(input.shape()) + " has " + std::to_string(in));
  }
  if (!bias.empty() && bias.size() != out_f) {
    throw Error(ErrorCode::ShapeMismatch, "linear bias has " + std::to_string(bias.size()) +
                                              " entries for " + std::to_string(out_f) +
                                              " outputs");
  }
  Tensor out({batch, out_f, 1, 1});
  auto x = input.data();
  auto wt = weights.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const float* row = x.data() + b * in;
    for (std::size_t o = 0; o < out_f; ++o) {
      const float* wrow = wt.data() + o * in;
      double acc = bias.empty() ? 0.0 : double{bias[o]};
      for (std::size_t i = 0; i < in; ++i) acc += double{wrow[i]} * row[i];
      out[b * out_f + o] = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor apply_layer(LayerKind kind, std::span<const Tensor> inputs,
                   const LayerParams& params, const TensorMap& tensors) {
  auto single = [&]() -> const Tensor& {
    if (inputs.size() != 1) {
      throw Error(ErrorCode::InvalidArgument,
                  std::string(to_string(kind)) + " takes one input, got " +
                      std::to_string(inputs.size()));
    }
    return inputs[0];
  };
  switch (kind) {
    case LayerKind::conv:
      return conv2d(single(), tensor_or_throw(tensors, "weight", kind),
                    optional_tensor(tensors, "bias"), params.stride, params.padding);
    case LayerKind::relu:
      return relu(single());
    case LayerKind::batchnorm:
      return batchnorm(single(), BatchNormStats{
                                     tensor_or_throw(tensors, "mean", kind).data(),
                                     tensor_or_throw(tensors, "var", kind).data(),
                                     tensor_or_throw(tensors, "scale", kind).data(),
                                     tensor_or_throw(tensors, "shift", kind).data(),
                                     params.epsilon});
    case LayerKind::maxpool:
      return maxpool(single(), params.kernel, params.stride, params.padding);
    case LayerKind::avgpool:
      return avgpool(single(), params.kernel, params.stride, params.padding);
    case LayerKind::global_avgpool:
      return global_avgpool(single());
    case LayerKind::add:
      return add(inputs);
    case LayerKind::concat:
      return concat(inputs);
    case LayerKind::linear:
      return linear(single(), tensor_or_throw(tensors, "weight", kind),
                    optional_tensor(tensors, "bias"));
    case LayerKind::input:
      break;
  }
  throw Error(ErrorCode::InvalidArgument, "input nodes cannot be evaluated");
}

}  // namespace cf
