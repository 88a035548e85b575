// Reference implementations used only by tests. Each one follows the textbook
// definition as directly as possible and shares no code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "cf/centrality.hpp"
#include "cf/rng.hpp"
#include "cf/tensor.hpp"

namespace oracle {

inline cf::Tensor random_tensor(cf::Rng& rng, cf::Shape shape, double lo = -1.0, double hi = 1.0) {
  cf::Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Six nested loops over batch, output, input, kernel rows and columns and
// output pixels.
inline cf::Tensor conv(const cf::Tensor& x, const cf::Tensor& w, const std::vector<float>& bias,
                       std::size_t stride, std::size_t pad) {
  const std::size_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  cf::Tensor y({b, cout, oh, ow});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x.at({n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(s)})) *
                       w.at({o, c, u, v});
              }
          y.at({n, o, i, j}) = static_cast<float>(acc);
        }
  return y;
}

// Covariance over the product of population standard deviations.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  cov /= n;
  const double sx = std::sqrt(vx / n), sy = std::sqrt(vy / n);
  if (sx < 1e-8 || sy < 1e-8) return 0.0;
  return std::clamp(cov / (sx * sy), -1.0, 1.0);
}

// Closeness straight from the formula over the explicit neighbour list.
inline double closeness(const cf::SimilarityMatrix& s, const std::vector<std::vector<bool>>& adj,
                        std::size_t j) {
  double k = 0, dist = 0;
  for (std::size_t o = 0; o < s.n; ++o) {
    if (o == j || !adj[j][o]) continue;
    k += 1;
    dist += std::max(1.0 - std::abs(s(j, o)), 1e-8);
  }
  return k == 0 ? 0.0 : k / dist;
}

inline std::vector<std::vector<bool>> adjacency(const cf::SimilarityMatrix& s, double theta) {
  std::vector<std::vector<bool>> adj(s.n, std::vector<bool>(s.n, false));
  for (std::size_t x = 0; x < s.n; ++x)
    for (std::size_t y = 0; y < s.n; ++y)
      adj[x][y] = x != y && !s.is_dead(x) && !s.is_dead(y) && s(x, y) >= theta;
  return adj;
}

// Greedy selection recomputing every score from scratch each round.
inline std::vector<std::size_t> greedy_centrals(const cf::SimilarityMatrix& s, double theta,
                                                bool most_central = true) {
  auto adj = adjacency(s, theta);
  std::vector<bool> alive(s.n, true);
  for (std::size_t c = 0; c < s.n; ++c)
    if (s.is_dead(c)) alive[c] = false;
  std::vector<std::size_t> centrals;
  while (std::count(alive.begin(), alive.end(), true) > 0) {
    std::vector<std::vector<bool>> residual = adj;
    for (std::size_t x = 0; x < s.n; ++x)
      for (std::size_t y = 0; y < s.n; ++y)
        if (!alive[x] || !alive[y]) residual[x][y] = false;
    std::optional<std::size_t> pick;
    double best = 0;
    for (std::size_t j = 0; j < s.n; ++j) {
      if (!alive[j]) continue;
      const double c = closeness(s, residual, j);
      if (!pick || (most_central ? c > best : c < best)) {
        pick = j;
        best = c;
      }
    }
    centrals.push_back(*pick);
    alive[*pick] = false;
    for (std::size_t o = 0; o < s.n; ++o)
      if (residual[*pick][o]) alive[o] = false;
  }
  return centrals;
}

// Random symmetric matrix with unit diagonal and entries uniform in [lo, 1).
inline cf::SimilarityMatrix random_matrix(std::uint64_t seed, std::size_t n, double lo = -1.0) {
  cf::Rng rng(seed);
  cf::SimilarityMatrix s;
  s.layer = "random";
  s.n = n;
  s.sample_count = 1;
  s.values.assign(n * n, 0.0);
  s.channel_means.assign(n, 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    s.values[x * n + x] = 1.0;
    for (std::size_t y = x + 1; y < n; ++y) {
      const double v = rng.uniform(lo, 1.0);
      s.values[x * n + y] = s.values[y * n + x] = v;
    }
  }
  return s;
}

}  // namespace oracle
