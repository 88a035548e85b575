#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cf/model.hpp"
#include "cf/tensor.hpp"

namespace cf {

/// Standard deviations below this make a coefficient undefined.
inline constexpr double kDegenerateStddev = 1e-8;

struct PearsonResult {
  double rho = 0.0;
  bool degenerate = false;  // one input (near) constant; rho reported as 0
};

/// Pearson correlation, two-pass in double precision, clamped to [-1, 1].
/// Throws InvalidArgument on length mismatch or fewer than two samples.
PearsonResult pearson(std::span<const double> x, std::span<const double> y);
PearsonResult pearson(std::span<const float> x, std::span<const float> y);

/// Pearson correlation of two equally shaped feature maps, flattened row-major.
double feature_similarity(const Tensor& a, const Tensor& b);

/// Per-layer averaged feature-map similarity.
struct SimilarityMatrix {
  std::string layer;
  std::size_t n = 0;
  std::size_t sample_count = 0;
  std::vector<double> values;                // n*n, row-major, symmetric
  std::vector<std::size_t> dead_channels;    // constant on every sample
  std::vector<double> channel_means;         // mean activation per channel

  double operator()(std::size_t x, std::size_t y) const { return values[x * n + y]; }
  bool is_dead(std::size_t c) const;
  /// Largest off-diagonal |S|.
  double max_off_diagonal() const;
};

/// Running mean of per-sample similarity matrices. Memory is O(n^2)
/// regardless of how many samples stream through.
class SimilarityAccumulator {
 public:
  explicit SimilarityAccumulator(std::size_t channels);

  /// Add every sample of a [batch, channels, h, w] activation tensor.
  void add_batch(const Tensor& activations);
  /// Add one sample given as [channels, h, w] data.
  void add_sample(std::span<const float> maps, std::size_t area);

  std::size_t samples() const noexcept { return samples_; }
  SimilarityMatrix result(std::string layer) const;

 private:
  std::size_t n_;
  std::size_t samples_ = 0;
  std::vector<double> sums_;            // upper triangle used
  std::vector<std::size_t> live_count_; // samples on which channel was non-constant
  std::vector<double> mean_sum_;
  std::vector<double> centered_;
  std::vector<double> norms_;
};

/// Averaged similarity at `tap` over the calibration images, streamed in
/// chunks of `batch_size`.
SimilarityMatrix average_similarity(const ModelGraph& model, const Tensor& calibration,
                                    const std::string& tap, std::size_t batch_size = 32);

/// Several taps in a single streamed pass.
std::map<std::string, SimilarityMatrix> average_similarity(
    const ModelGraph& model, const Tensor& calibration, std::span<const std::string> taps,
    std::size_t batch_size = 32);

struct StabilityReport {
  std::string layer;
  std::vector<std::size_t> counts;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // x < y
  std::vector<std::vector<double>> similarity;             // [pair][count]
  std::vector<double> max_deviation;  // [count]: max over pairs |S_k - S_last|
};

/// Similarity estimated from the first k calibration images, for each k.
StabilityReport stability_report(const ModelGraph& model, const Tensor& calibration,
                                 const std::string& tap, std::span<const std::size_t> counts,
                                 std::size_t batch_size = 32);

std::string similarity_to_json(const SimilarityMatrix& s);
SimilarityMatrix similarity_from_json(const std::string& text);
std::string similarity_to_csv(const SimilarityMatrix& s);
std::string stability_to_json(const StabilityReport& r);

}  // namespace cf
