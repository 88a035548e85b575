#include <doctest.h>

#include <numeric>

#include "cf/error.hpp"
#include "cf/forward.hpp"
#include "cf/similarity.hpp"
#include "cf/zoo.hpp"
#include "oracles.hpp"

using cf::Tensor;

namespace {

double rho(const std::vector<double>& x, const std::vector<double>& y) {
  return cf::pearson(std::span<const double>(x), std::span<const double>(y)).rho;
}

// Materialise every activation and average per-image coefficients.
std::vector<double> naive_similarity(const cf::ModelGraph& m, const Tensor& images,
                                     const std::string& tap) {
  const std::string taps[] = {tap};
  const Tensor acts = cf::forward_capture(m, images, taps).taps.at(tap);
  const std::size_t b = acts.dim(0), n = acts.dim(1), area = acts.dim(2) * acts.dim(3);
  std::vector<double> s(n * n, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y) {
        std::vector<double> a(area), c(area);
        for (std::size_t p = 0; p < area; ++p) {
          a[p] = acts[(i * n + x) * area + p];
          c[p] = acts[(i * n + y) * area + p];
        }
        s[x * n + y] += oracle::pearson(a, c) / static_cast<double>(b);
      }
  return s;
}

void check_invariants(const cf::SimilarityMatrix& s) {
  for (std::size_t x = 0; x < s.n; ++x) {
    CHECK(s(x, x) == (s.is_dead(x) ? 0.0 : 1.0));
    for (std::size_t y = 0; y < s.n; ++y) {
      CHECK(s(x, y) == s(y, x));
      CHECK(std::abs(s(x, y)) <= 1.0);
      if (x != y && (s.is_dead(x) || s.is_dead(y))) CHECK(s(x, y) == 0.0);
    }
  }
}

}  // namespace

TEST_CASE("pearson of a vector with itself, its negation and positive affine images") {
  const std::vector<double> x{0.5, -1.0, 2.0, 3.5, 0.0};
  std::vector<double> neg, aff;
  for (double v : x) {
    neg.push_back(-v);
    aff.push_back(3.0 * v + 7.0);
  }
  CHECK(rho(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rho(x, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(rho(x, aff) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("pearson agrees with the two-pass reference") {
  const std::vector<double> x{1, 2, 3, 5}, y{2, 1, 4, 6};
  CHECK(std::abs(rho(x, y) - oracle::pearson(x, y)) <= 1e-9);
  // Frozen: 10.25 / sqrt(8.75 * 14.75).
  CHECK(std::abs(rho(x, y) - 0.9022436386781062) <= 1e-12);
}

TEST_CASE("pearson rejects bad lengths and flags constant inputs") {
  const std::vector<double> a{1, 2, 3}, b{1, 2}, one{1};
  CHECK_THROWS_AS(rho(a, b), cf::Error);
  CHECK_THROWS_AS(rho(one, one), cf::Error);
  const std::vector<double> flat{4, 4, 4};
  const auto r = cf::pearson(std::span<const double>(a), std::span<const double>(flat));
  CHECK(r.degenerate);
  CHECK(r.rho == 0.0);
}

TEST_CASE("pearson is invariant under positive affine maps") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    cf::Rng rng(seed);
    const std::size_t n = 2 + rng.below(200);
    std::vector<double> x(n), y(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = 0.5 * x[i] + rng.normal();
    }
    const double a = rng.uniform(0.01, 100.0), b = rng.uniform(-50, 50);
    for (std::size_t i = 0; i < n; ++i) z[i] = a * x[i] + b;
    CHECK(std::abs(rho(x, y) - rho(z, y)) < 1e-6);
  }
}

TEST_CASE("feature similarity flattens maps row-major") {
  cf::Rng rng(4);
  const Tensor a = oracle::random_tensor(rng, {4, 4});
  const Tensor b = oracle::random_tensor(rng, {4, 4});
  Tensor neg(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) neg[i] = -a[i];
  CHECK(cf::feature_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cf::feature_similarity(a, neg) == doctest::Approx(-1.0));
  const auto fa = cf::flatten_one(a), fb = cf::flatten_one(b);
  CHECK(cf::feature_similarity(a, b) ==
        cf::pearson(std::span<const float>(fa), std::span<const float>(fb)).rho);
  CHECK_THROWS_AS(cf::feature_similarity(a, Tensor({2, 8})), cf::Error);
}

TEST_CASE("duplicated filters are exactly similar") {
  const cf::DuplicateNet net = cf::duplicate_filter_net(3, {});
  const Tensor images = cf::random_images(5, 6, {3, 8, 8});
  const auto s = cf::average_similarity(net.model, images, "relu1");
  const auto& g = net.groups.front();
  REQUIRE(g.size() == 2);
  CHECK(s(g[0], g[1]) == 1.0);
  check_invariants(s);
}

TEST_CASE("average similarity matches the materialising oracle") {
  const cf::ModelGraph m = cf::two_conv_net(21, {3, 8, 8}, 6, 5);
  const Tensor images = cf::random_images(22, 8, {3, 8, 8});
  for (const char* tap : {"relu1", "relu2"}) {
    const auto s = cf::average_similarity(m, images, tap, 3);
    const auto ref = naive_similarity(m, images, tap);
    CHECK(s.sample_count == 8);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(s.values[i] - ref[i]) < 1e-9);
    check_invariants(s);
  }
}

TEST_CASE("a single image gives the per-image matrix") {
  const cf::ModelGraph m = cf::two_conv_net(2, {3, 8, 8}, 5, 5);
  const Tensor image = cf::random_images(1, 1, {3, 8, 8});
  const auto s = cf::average_similarity(m, image, "relu1");
  const auto ref = naive_similarity(m, image, "relu1");
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(s.values[i] - ref[i]) < 1e-9);
  CHECK_THROWS_AS(cf::average_similarity(m, Tensor({0, 3, 8, 8}), "relu1"), cf::Error);
}

TEST_CASE("dead channels are flagged and zeroed") {
  cf::GraphBuilder b({3, 6, 6}, 7);
  const auto conv = b.conv(b.input(), 4, 3, 1, 1, true);
  // Channel 2 is always negative before the relu.
  auto& node = b.node(conv);
  for (std::size_t i = 0; i < 27; ++i) node.tensors.at("weight")[2 * 27 + i] = 0.0f;
  node.tensors.at("bias")[2] = -1.0f;
  const auto r = b.relu(conv);
  const cf::ModelGraph m = b.build(r);
  const auto s = cf::average_similarity(m, cf::random_images(3, 4, {3, 6, 6}), r);
  CHECK(s.dead_channels == std::vector<std::size_t>{2});
  CHECK(s.channel_means[2] == 0.0);
  check_invariants(s);
}

TEST_CASE("average similarity is permutation equivariant") {
  const cf::ModelGraph m = cf::two_conv_net(9, {3, 8, 8}, 6, 4);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<cf::LayerNode> nodes = m.nodes();
  for (auto& n : nodes) {
    if (n.id == "conv1") {
      n.tensors.at("weight") = n.tensors.at("weight").select(0, perm);
      n.tensors.at("bias") = n.tensors.at("bias").select(0, perm);
    }
    if (n.id == "conv2") n.tensors.at("weight") = n.tensors.at("weight").select(1, perm);
  }
  const cf::ModelGraph p(nodes, m.output_id(), m.input_shape());
  const Tensor images = cf::random_images(1, 5, {3, 8, 8});
  const auto s = cf::average_similarity(m, images, "relu1");
  const auto t = cf::average_similarity(p, images, "relu1");
  for (std::size_t x = 0; x < 6; ++x)
    for (std::size_t y = 0; y < 6; ++y) CHECK(std::abs(t(x, y) - s(perm[x], perm[y])) < 1e-12);
}

TEST_CASE("stability report columns") {
  const cf::DuplicateNet net = cf::duplicate_filter_net(1, {});
  const Tensor images = cf::random_images(2, 40, {3, 8, 8});
  const std::size_t same[] = {8, 8};
  const auto r = cf::stability_report(net.model, images, "relu1", same);
  for (const auto& row : r.similarity) CHECK(row[0] == row[1]);
  CHECK(r.max_deviation == std::vector<double>{0.0, 0.0});

  const std::size_t counts[] = {4, 16, 40};
  const auto d = cf::stability_report(net.model, images, "relu1", counts);
  const auto& g = net.groups.front();
  for (std::size_t p = 0; p < d.pairs.size(); ++p) {
    if (d.pairs[p] == std::pair{g[0], g[1]}) {
      for (double v : d.similarity[p]) CHECK(v == 1.0);
    }
  }
  CHECK(d.max_deviation.back() == 0.0);
  const std::size_t too_many[] = {41};
  CHECK_THROWS_AS(cf::stability_report(net.model, images, "relu1", too_many), cf::Error);
}

TEST_CASE("stability on a random net shrinks with more images") {
  const cf::ModelGraph m = cf::two_conv_net(5, {3, 16, 16}, 8, 8);
  const Tensor images = cf::random_images(6, 128, {3, 16, 16});
  const std::size_t counts[] = {16, 32, 64, 128};
  const auto r = cf::stability_report(m, images, "relu1", counts);
  REQUIRE(r.max_deviation.size() == 4);
  MESSAGE("max deviation by count 16/32/64/128: " << r.max_deviation[0] << " " << r.max_deviation[1]
                                                  << " " << r.max_deviation[2] << " " << r.max_deviation[3]);
  CHECK(r.max_deviation[3] == 0.0);
}

TEST_CASE("similarity json round trip") {
  const cf::ModelGraph m = cf::two_conv_net(3, {3, 8, 8}, 4, 4);
  const auto s = cf::average_similarity(m, cf::random_images(1, 3, {3, 8, 8}), "relu1");
  const auto back = cf::similarity_from_json(cf::similarity_to_json(s));
  CHECK(back.values == s.values);
  CHECK(back.dead_channels == s.dead_channels);
  CHECK(back.n == s.n);
  CHECK(back.sample_count == s.sample_count);
  const std::string csv = cf::similarity_to_csv(s);
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 4);
}
