#pragma once

#include "cabb/types.hpp"

#include <span>
#include <vector>

// Clean/noisy sample separation: per-sample Jensen-Shannon scores between the
// stored pseudolabels and model probabilities, a two-component 1-D Gaussian
// mixture with fixed equal priors over those scores, and a posterior threshold.

namespace cabb::separation {

/// Base-2 Jensen-Shannon divergence; lies in [0,1]. 0*log0 = 0.
double jsd(std::span<const double> y_hat, std::span<const double> p);

/// -sum_k y_k log p_k, natural log clamped at -30.
double cross_entropy_score(std::span<const double> y_hat, std::span<const double> p);

/// Row-wise scores; both matrices are N x C.
std::vector<double> jsd_scores(const Matrix& y_hat, const Matrix& probs);
std::vector<double> ce_scores(const Matrix& y_hat, const Matrix& probs);

inline constexpr double kVarianceFloor = 1e-8;

struct GmmFit {
  double mean_low = 0.0;
  double mean_high = 0.0;
  double var_low = 1.0;
  double var_high = 1.0;
  int iterations_used = 0;
  bool converged = false;
  /// All scores (numerically) identical; split() then treats every sample as clean.
  bool degenerate = false;
  std::vector<double> log_likelihood;  // one entry per completed EM iteration

  static constexpr double prior = 0.5;

  double posterior_low(double x) const;
  double posterior_high(double x) const { return 1.0 - posterior_low(x); }
};

/// EM with priors fixed at (0.5, 0.5). Means start at the 10th/90th percentiles
/// and both variances at the overall variance. Throws ValidationError when
/// N < 10 or a score lies outside [0,1]; throws ContractError if the
/// log-likelihood ever decreases.
GmmFit fit_gmm(std::span<const double> scores, double tol = 1e-6, int max_iter = 100);

struct SampleSplit {
  std::vector<int> clean_idx;
  std::vector<int> noisy_idx;
  std::vector<double> confidence;  // posterior of the low-mean component
  bool all_clean_fallback = false;
};

/// i is clean iff posterior_low(scores[i]) >= delta_t. delta_t must lie in (0,1).
SampleSplit split(std::span<const double> scores, const GmmFit& fit, double delta_t);

/// The k lowest-scoring samples form the clean set (ties broken by index).
SampleSplit split_lowest(std::span<const double> scores, std::size_t k);

/// Fraction of clean samples whose pseudolabel matches the ground truth; 0 for an empty clean set.
double clean_set_precision(const SampleSplit& s, std::span<const int> pseudolabels,
                           std::span<const int> truth);

}  // namespace cabb::separation
