#include "cf/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "cf/error.hpp"
#include "cf/forward.hpp"

namespace cf {
namespace {

template <typename T>
PearsonResult pearson_impl(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::InvalidArgument, "pearson of vectors with lengths " +
                                                std::to_string(x.size()) + " and " +
                                                std::to_string(y.size()));
  }
  if (x.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "pearson needs at least two samples");
  }
  const double len = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= len;
  my /= len;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (std::sqrt(sxx / len) < kDegenerateStddev || std::sqrt(syy / len) < kDegenerateStddev) {
    return {0.0, true};
  }
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

void check_calibration(const Tensor& calibration) {
  if (calibration.rank() != 4 || calibration.dim(0) == 0) {
    throw Error(ErrorCode::InvalidArgument,
                "calibration set must be a non-empty [images, channels, h, w] batch, got " +
                    to_string(calibration.shape()));
  }
}

// Feed calibration images chunk by chunk, invoking `sink(tap, activations)`.
template <typename Sink>
void stream_taps(const ModelGraph& model, const Tensor& calibration,
                 std::span<const std::string> taps, std::size_t batch_size, Sink&& sink) {
  check_calibration(calibration);
  const std::size_t total = calibration.dim(0);
  const std::size_t step = std::max<std::size_t>(1, batch_size);
  for (std::size_t begin = 0; begin < total; begin += step) {
    const std::size_t end = std::min(total, begin + step);
    const Tensor chunk = (begin == 0 && end == total) ? calibration : calibration.rows(begin, end);
    ActivationSet acts = forward_capture(model, chunk, taps, false);
    for (const std::string& tap : taps) sink(tap, acts.taps.at(tap));
  }
}

}  // namespace

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
  return pearson_impl(x, y);
}

PearsonResult pearson(std::span<const float> x, std::span<const float> y) {
  return pearson_impl(x, y);
}

double feature_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "feature maps " + to_string(a.shape()) + " and " +
                                              to_string(b.shape()) + " differ");
  }
  const std::vector<float> x = flatten_one(a);
  const std::vector<float> y = flatten_one(b);
  return pearson(std::span<const float>(x), std::span<const float>(y)).rho;
}

bool SimilarityMatrix::is_dead(std::size_t c) const {
  return std::binary_search(dead_channels.begin(), dead_channels.end(), c);
}

double SimilarityMatrix::max_off_diagonal() const {
  double best = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = x + 1; y < n; ++y) best = std::max(best, std::abs((*this)(x, y)));
  }
  return best;
}

SimilarityAccumulator::SimilarityAccumulator(std::size_t channels)
    : n_(channels), sums_(channels * channels, 0.0), live_count_(channels, 0),
      mean_sum_(channels, 0.0), norms_(channels, 0.0) {}

void SimilarityAccumulator::add_batch(const Tensor& activations) {
  if (activations.rank() != 4 || activations.dim(1) != n_) {
    throw Error(ErrorCode::ShapeMismatch, "activations " + to_string(activations.shape()) +
                                              " do not have " + std::to_string(n_) +
                                              " channels");
  }
  const std::size_t area = activations.dim(2) * activations.dim(3);
  for (std::size_t b = 0; b < activations.dim(0); ++b) {
    add_sample(activations.data().subspan(b * n_ * area, n_ * area), area);
  }
}

void SimilarityAccumulator::add_sample(std::span<const float> maps, std::size_t area) {
  if (maps.size() != n_ * area) {
    throw Error(ErrorCode::ShapeMismatch, "sample has " + std::to_string(maps.size()) +
                                              " values, expected " +
                                              std::to_string(n_ * area));
  }
  centered_.resize(n_ * area);
  const double len = static_cast<double>(area);
  std::vector<bool> live(n_, false);
  for (std::size_t c = 0; c < n_; ++c) {
    const float* src = maps.data() + c * area;
    double* z = centered_.data() + c * area;
    double mean = 0.0;
    for (std::size_t i = 0; i < area; ++i) mean += src[i];
    mean /= len;
    mean_sum_[c] += mean;
    for (std::size_t i = 0; i < area; ++i) z[i] = src[i] - mean;
    double ss = 0.0;
    for (std::size_t i = 0; i < area; ++i) ss += z[i] * z[i];
    norms_[c] = ss;
    live[c] = area >= 2 && std::sqrt(ss / len) >= kDegenerateStddev;
    if (live[c]) ++live_count_[c];
  }
  for (std::size_t x = 0; x < n_; ++x) {
    if (!live[x]) continue;
    const double* zx = centered_.data() + x * area;
    for (std::size_t y = x + 1; y < n_; ++y) {
      if (!live[y]) continue;
      const double* zy = centered_.data() + y * area;
      double dot = 0.0;
      for (std::size_t i = 0; i < area; ++i) dot += zx[i] * zy[i];
      sums_[x * n_ + y] += std::clamp(dot / std::sqrt(norms_[x] * norms_[y]), -1.0, 1.0);
    }
  }
  ++samples_;
}

SimilarityMatrix SimilarityAccumulator::result(std::string layer) const {
  if (samples_ == 0) {
    throw Error(ErrorCode::InvalidArgument, "no calibration samples for '" + layer + "'");
  }
  SimilarityMatrix s;
  s.layer = std::move(layer);
  s.n = n_;
  s.sample_count = samples_;
  s.values.assign(n_ * n_, 0.0);
  s.channel_means.resize(n_);
  const double count = static_cast<double>(samples_);
  for (std::size_t c = 0; c < n_; ++c) {
    s.channel_means[c] = mean_sum_[c] / count;
    if (live_count_[c] == 0) {
      s.dead_channels.push_back(c);
    } else {
      s.values[c * n_ + c] = 1.0;
    }
  }
  for (std::size_t x = 0; x < n_; ++x) {
    for (std::size_t y = x + 1; y < n_; ++y) {
      const double v = sums_[x * n_ + y] / count;
      s.values[x * n_ + y] = v;
      s.values[y * n_ + x] = v;
    }
  }
  return s;
}

SimilarityMatrix average_similarity(const ModelGraph& model, const Tensor& calibration,
                                    const std::string& tap, std::size_t batch_size) {
  const std::string taps[] = {tap};
  auto all = average_similarity(model, calibration, taps, batch_size);
  return std::move(all.at(tap));
}

std::map<std::string, SimilarityMatrix> average_similarity(
    const ModelGraph& model, const Tensor& calibration, std::span<const std::string> taps,
    std::size_t batch_size) {
  std::map<std::string, SimilarityAccumulator> acc;
  for (const std::string& tap : taps) {
    acc.emplace(tap, SimilarityAccumulator(model.channels(model.index_of(tap))));
  }
  stream_taps(model, calibration, taps, batch_size,
              [&](const std::string& tap, const Tensor& t) { acc.at(tap).add_batch(t); });
  std::map<std::string, SimilarityMatrix> out;
  for (auto& [tap, a] : acc) out.emplace(tap, a.result(tap));
  return out;
}

StabilityReport stability_report(const ModelGraph& model, const Tensor& calibration,
                                 const std::string& tap, std::span<const std::size_t> counts,
                                 std::size_t batch_size) {
  check_calibration(calibration);
  if (counts.empty()) throw Error(ErrorCode::InvalidArgument, "no sample counts requested");
  if (!std::is_sorted(counts.begin(), counts.end()) || counts.front() == 0) {
    throw Error(ErrorCode::InvalidArgument, "sample counts must be positive and ascending");
  }
  if (counts.back() > calibration.dim(0)) {
    throw Error(ErrorCode::InvalidArgument,
                "sample count " + std::to_string(counts.back()) + " exceeds the " +
                    std::to_string(calibration.dim(0)) + " available images");
  }
  const std::size_t n = model.channels(model.index_of(tap));
  SimilarityAccumulator acc(n);
  std::vector<SimilarityMatrix> snapshots;
  std::size_t next = 0;
  const Tensor used = calibration.rows(0, counts.back());
  const std::string taps[] = {tap};
  stream_taps(model, used, taps, batch_size, [&](const std::string&, const Tensor& t) {
    const std::size_t area = t.dim(2) * t.dim(3);
    for (std::size_t b = 0; b < t.dim(0); ++b) {
      acc.add_sample(t.data().subspan(b * n * area, n * area), area);
      while (next < counts.size() && counts[next] == acc.samples()) {
        snapshots.push_back(acc.result(tap));
        ++next;
      }
    }
  });

  StabilityReport r;
  r.layer = tap;
  r.counts.assign(counts.begin(), counts.end());
  const SimilarityMatrix& last = snapshots.back();
  r.max_deviation.assign(counts.size(), 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = x + 1; y < n; ++y) {
      r.pairs.emplace_back(x, y);
      std::vector<double> row;
      for (std::size_t k = 0; k < snapshots.size(); ++k) {
        row.push_back(snapshots[k](x, y));
        r.max_deviation[k] = std::max(r.max_deviation[k], std::abs(row.back() - last(x, y)));
      }
      r.similarity.push_back(std::move(row));
    }
  }
  return r;
}

std::string similarity_to_json(const SimilarityMatrix& s) {
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t x = 0; x < s.n; ++x) {
    matrix.push_back(std::vector<double>(s.values.begin() + x * s.n,
                                         s.values.begin() + (x + 1) * s.n));
  }
  nlohmann::json j = {{"layer", s.layer},
                      {"n", s.n},
                      {"sample_count", s.sample_count},
                      {"matrix", std::move(matrix)},
                      {"dead_channels", s.dead_channels},
                      {"channel_means", s.channel_means}};
  return j.dump(1) + "\n";
}

SimilarityMatrix similarity_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SimilarityMatrix s;
    s.layer = j.at("layer").get<std::string>();
    s.n = j.at("n").get<std::size_t>();
    s.sample_count = j.at("sample_count").get<std::size_t>();
    const auto& m = j.at("matrix");
    if (m.size() != s.n) throw Error(ErrorCode::Format, "similarity matrix row count mismatch");
    for (const auto& row : m) {
      if (row.size() != s.n) throw Error(ErrorCode::Format, "similarity matrix is not square");
      for (const auto& v : row) s.values.push_back(v.get<double>());
    }
    s.dead_channels = j.value("dead_channels", std::vector<std::size_t>{});
    s.channel_means = j.value("channel_means", std::vector<double>(s.n, 0.0));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("similarity JSON: ") + e.what());
  }
}

std::string similarity_to_csv(const SimilarityMatrix& s) {
  std::ostringstream out;
  out.precision(6);
  out << "channel";
  for (std::size_t y = 0; y < s.n; ++y) out << "," << y;
  out << "\n";
  for (std::size_t x = 0; x < s.n; ++x) {
    out << x;
    for (std::size_t y = 0; y < s.n; ++y) out << "," << s(x, y);
    out << "\n";
  }
  return out.str();
}

std::string stability_to_json(const StabilityReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t p = 0; p < r.pairs.size(); ++p) {
    pairs.push_back({{"x", r.pairs[p].first},
                     {"y", r.pairs[p].second},
                     {"similarity", r.similarity[p]}});
  }
  nlohmann::json j = {{"layer", r.layer},
                      {"counts", r.counts},
                      {"max_deviation", r.max_deviation},
                      {"pairs", std::move(pairs)}};
  return j.dump(1) + "\n";
}

}  // namespace cf
