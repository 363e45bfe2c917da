#pragma once

#include "cabb/nnet.hpp"
#include "cabb/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Ensemble soft pseudolabels: M augmented views through both branches, equal
// weights over all 2M softmax outputs, then temperature sharpening.

namespace cabb::pseudolabel {

/// Feature-vector augmentation: x' = s*x + eps, s ~ U(scale_lo, scale_hi), eps ~ N(0, jitter^2).
struct AugmentSpec {
  int views = 6;
  double jitter_sigma = 0.05;
  double scale_lo = 0.9;
  double scale_hi = 1.1;

  void validate() const;
};

struct SharpenSpec {
  double temperature = 0.5;

  void validate() const;
};

/// Deterministic in (seed, view_index, sample_index).
std::vector<double> augment(std::span<const double> x, const AugmentSpec& spec, std::uint64_t seed,
                            int view_index, std::size_t sample_index);

/// y_k^(1/T) / sum_j y_j^(1/T), evaluated in log space.
ProbVector sharpen(std::span<const double> y, double temperature);

ProbVector ensemble_pseudolabel(std::span<const double> x, const nnet::MlpModel& branch1,
                                const nnet::MlpModel& branch2, const AugmentSpec& aug,
                                const SharpenSpec& sharp, std::uint64_t seed,
                                std::size_t sample_index = 0);

/// Batched form: row r of `x` is target sample `sample_index[r]`.
Matrix ensemble_pseudolabels(const Matrix& x, std::span<const int> sample_index,
                             const nnet::MlpModel& branch1, const nnet::MlpModel& branch2,
                             const AugmentSpec& aug, const SharpenSpec& sharp, std::uint64_t seed);

}  // namespace cabb::pseudolabel
