#include <doctest.h>

#include "cf/error.hpp"
#include "cf/ops.hpp"
#include "cf/tensor.hpp"
#include "oracles.hpp"

using cf::Shape;
using cf::Tensor;

namespace {

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= tol);
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

TEST_CASE("tensor construction keeps data length equal to the shape product") {
  CHECK(Tensor({2, 3}).size() == 6);
  CHECK(code_of([] { Tensor({2, 2}, {1, 2, 3}); }) == cf::ErrorCode::ShapeMismatch);
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at({1, 2}) == 5);
  CHECK(t.rows(1, 2).values() == std::vector<float>{3, 4, 5});
  const std::size_t cols[] = {2, 0};
  CHECK(t.select(1, cols).values() == std::vector<float>{2, 0, 5, 3});
}

TEST_CASE("conv2d of ones with a single 2.0 weight scales by two") {
  const Tensor x = Tensor::filled({1, 1, 3, 3}, 1.0f);
  const Tensor w({1, 1, 1, 1}, {2.0f});
  const Tensor y = cf::conv2d(x, w, {}, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.data()) CHECK(v == 2.0f);
}

TEST_CASE("conv2d with zero weights gives zeros") {
  cf::Rng rng(3);
  const Tensor x = oracle::random_tensor(rng, {2, 3, 5, 5});
  const Tensor y = cf::conv2d(x, Tensor({4, 3, 3, 3}), {}, 1, 1);
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d matches the nested-loop reference") {
  cf::Rng rng(11);
  const Tensor x = oracle::random_tensor(rng, {1, 2, 4, 4});
  const Tensor w = oracle::random_tensor(rng, {3, 2, 3, 3});
  check_close(cf::conv2d(x, w, {}, 1, 1), oracle::conv(x, w, {}, 1, 1), 1e-5);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cf::Rng r(seed);
    const std::size_t k = 1 + r.below(3) * 2, stride = 1 + r.below(2), pad = r.below(k);
    const std::size_t h = k + r.below(6), cin = 1 + r.below(4), cout = 1 + r.below(4);
    const Tensor xi = oracle::random_tensor(r, {1 + r.below(2), cin, h, h + r.below(3)});
    const Tensor wi = oracle::random_tensor(r, {cout, cin, k, k});
    std::vector<float> bias(cout);
    for (float& b : bias) b = static_cast<float>(r.uniform(-1, 1));
    check_close(cf::conv2d(xi, wi, bias, stride, pad), oracle::conv(xi, wi, bias, stride, pad), 1e-5);
  }
}

TEST_CASE("conv2d is linear in its weights") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cf::Rng rng(seed);
    const Tensor x = oracle::random_tensor(rng, {2, 3, 6, 6});
    const Tensor w1 = oracle::random_tensor(rng, {4, 3, 3, 3});
    const Tensor w2 = oracle::random_tensor(rng, {4, 3, 3, 3});
    const float a = static_cast<float>(rng.uniform(-2, 2)), b = static_cast<float>(rng.uniform(-2, 2));
    Tensor mix(w1.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * w1[i] + b * w2[i];
    const Tensor y1 = cf::conv2d(x, w1, {}, 1, 1), y2 = cf::conv2d(x, w2, {}, 1, 1);
    const Tensor y = cf::conv2d(x, mix, {}, 1, 1);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - (a * y1[i] + b * y2[i])) <= 1e-4);
  }
}

TEST_CASE("conv2d is additive over input channels") {
  cf::Rng rng(5);
  const Tensor x = oracle::random_tensor(rng, {1, 2, 5, 5});
  const Tensor w = oracle::random_tensor(rng, {3, 2, 3, 3});
  const Tensor full = cf::conv2d(x, w, {}, 1, 1);
  Tensor sum(full.shape());
  for (std::size_t c = 0; c < 2; ++c) {
    const std::size_t idx[] = {c};
    const Tensor part = cf::conv2d(x.select(1, idx), w.select(1, idx), {}, 1, 1);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += part[i];
  }
  check_close(full, sum, 1e-5);
}

TEST_CASE("conv2d reports the offending dimensions") {
  const Tensor x({1, 3, 4, 4});
  try {
    cf::conv2d(x, Tensor({2, 2, 3, 3}), {}, 1, 0);
    FAIL("expected an error");
  } catch (const cf::Error& e) {
    CHECK(e.code() == cf::ErrorCode::ShapeMismatch);
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
  CHECK(code_of([&] { cf::conv2d(x, Tensor({2, 3, 7, 7}), {}, 1, 0); }) == cf::ErrorCode::ShapeMismatch);
}

TEST_CASE("relu and add follow their definitions") {
  const Tensor x({3}, {-1, 0, 2});
  CHECK(cf::relu(x).values() == std::vector<float>{0, 0, 2});
  cf::Rng rng(2);
  const Tensor a = oracle::random_tensor(rng, {2, 3, 4, 4});
  const Tensor both[] = {a, Tensor(a.shape())};
  CHECK(cf::add(both) == a);
  const Tensor mismatched[] = {a, Tensor({2, 3, 4, 5})};
  CHECK(code_of([&] { cf::add(mismatched); }) == cf::ErrorCode::ShapeMismatch);
  const Tensor single[] = {a};
  CHECK(code_of([&] { cf::add(single); }) == cf::ErrorCode::InvalidArgument);
}

TEST_CASE("batchnorm with the data's own statistics standardizes each channel") {
  cf::Rng rng(9);
  const std::size_t b = 16, c = 3, hw = 25;
  Tensor x({b, c, 5, 5});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) x[(n * c + ch) * hw + p] = static_cast<float>(rng.normal(ch * 2.0, 1.0 + ch));
  std::vector<float> mean(c), var(c), scale(c, 1.0f), shift(c, 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t p = 0; p < hw; ++p) s += x[(n * c + ch) * hw + p];
    const double m = s / (b * hw);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t p = 0; p < hw; ++p) s2 += std::pow(x[(n * c + ch) * hw + p] - m, 2);
    mean[ch] = static_cast<float>(m);
    var[ch] = static_cast<float>(s2 / (b * hw));
  }
  const Tensor y = cf::batchnorm(x, {mean, var, scale, shift, 0.0f});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t p = 0; p < hw; ++p) s += y[(n * c + ch) * hw + p];
    const double m = s / (b * hw);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t p = 0; p < hw; ++p) s2 += std::pow(y[(n * c + ch) * hw + p] - m, 2);
    CHECK(std::abs(m) < 1e-3);
    CHECK(std::abs(s2 / (b * hw) - 1.0) < 1e-3);
  }
}

TEST_CASE("pooling and concat") {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(cf::maxpool(x, 2, 2, 0).values() == std::vector<float>{4});
  CHECK(cf::avgpool(x, 2, 2, 0).values() == std::vector<float>{2.5f});
  CHECK(cf::global_avgpool(x).values() == std::vector<float>{2.5f});
  const Tensor a({1, 1, 1, 2}, {1, 2}), b({1, 2, 1, 2}, {3, 4, 5, 6});
  const Tensor parts[] = {a, b};
  const Tensor c = cf::concat(parts);
  CHECK(c.shape() == Shape{1, 3, 1, 2});
  CHECK(c.values() == std::vector<float>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("linear is a dense product over flattened features") {
  const Tensor x({1, 2, 1, 1}, {1, 2});
  const Tensor w({2, 2}, {1, 1, 0, 3});
  const std::vector<float> bias{0.5f, -1.0f};
  CHECK(cf::linear(x, w, bias).values() == std::vector<float>{3.5f, 5.0f});
}

TEST_CASE("flatten_one is row-major") {
  CHECK(cf::flatten_one(Tensor({2, 2}, {1, 2, 3, 4})) == std::vector<float>{1, 2, 3, 4});
  CHECK(cf::flatten_one(Tensor({1}, {7})) == std::vector<float>{7});
  CHECK(code_of([] { cf::flatten_one(Tensor()); }) == cf::ErrorCode::InvalidArgument);

  Tensor t({3, 4, 5});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 5; ++k) t.at({i, j, k}) = static_cast<float>(100 * i + 10 * j + k);
  const auto flat = cf::flatten_one(t);
  REQUIRE(flat.size() == 60);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 5; ++k) CHECK(flat[i * 20 + j * 5 + k] == t.at({i, j, k}));
  CHECK(Tensor({60}, flat).reshaped({3, 4, 5}) == t);
  CHECK(cf::flatten_one(t) == flat);
}
