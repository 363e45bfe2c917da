#include "cabb/separation.hpp"

#include "cabb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace cabb::separation {
namespace {

void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("probability vectors differ in length");
}

void require_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("score inputs must have identical shapes");
}

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double jsd(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b);
  double kl_a = 0.0, kl_b = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double m = 0.5 * (a[k] + b[k]);
    if (a[k] > 0) kl_a += a[k] * std::log2(a[k] / m);
    if (b[k] > 0) kl_b += b[k] * std::log2(b[k] / m);
  }
  return std::clamp(0.5 * kl_a + 0.5 * kl_b, 0.0, 1.0);
}

double cross_entropy_score(std::span<const double> y_hat, std::span<const double> p) {
  require_same_length(y_hat, p);
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (y_hat[k] == 0.0) continue;
    const double l = p[k] > 0 ? std::max(std::log(p[k]), -30.0) : -30.0;
    s -= y_hat[k] * l;
  }
  return s;
}

std::vector<double> jsd_scores(const Matrix& y_hat, const Matrix& probs) {
  require_same_shape(y_hat, probs);
  std::vector<double> out(static_cast<std::size_t>(y_hat.rows()));
  for (Eigen::Index i = 0; i < y_hat.rows(); ++i)
    out[static_cast<std::size_t>(i)] = jsd(row_span(y_hat, i), row_span(probs, i));
  return out;
}

std::vector<double> ce_scores(const Matrix& y_hat, const Matrix& probs) {
  require_same_shape(y_hat, probs);
  std::vector<double> out(static_cast<std::size_t>(y_hat.rows()));
  for (Eigen::Index i = 0; i < y_hat.rows(); ++i)
    out[static_cast<std::size_t>(i)] = cross_entropy_score(row_span(y_hat, i), row_span(probs, i));
  return out;
}

double GmmFit::posterior_low(double x) const {
  const double ll = log_normal(x, mean_low, var_low);
  const double lh = log_normal(x, mean_high, var_high);
  return 1.0 / (1.0 + std::exp(lh - ll));
}

GmmFit fit_gmm(std::span<const double> scores, double tol, int max_iter) {
  const std::size_t n = scores.size();
  if (n < 10) throw ValidationError("fit_gmm needs at least 10 scores, got " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (!(scores[i] >= 0.0 && scores[i] <= 1.0))
      throw ValidationError("score " + std::to_string(i) + " lies outside [0,1]");
  if (max_iter < 1) throw ValidationError("max_iter must be >= 1");

  GmmFit fit;
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double x : scores) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.back() - sorted.front() < 1e-12) {
    fit.mean_low = fit.mean_high = mean;
    fit.var_low = fit.var_high = kVarianceFloor;
    fit.degenerate = true;
    fit.converged = true;
    return fit;
  }

  fit.mean_low = percentile(sorted, 0.1);
  fit.mean_high = percentile(sorted, 0.9);
  if (fit.mean_high - fit.mean_low < 1e-12) {
    // Heavy point mass: the symmetric start would never separate.
    fit.mean_low = sorted.front();
    fit.mean_high = sorted.back();
  }
  fit.var_low = fit.var_high = std::max(var, kVarianceFloor);

  std::vector<double> resp(n);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    // E-step and log-likelihood of the current parameters.
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = std::log(GmmFit::prior) + log_normal(scores[i], fit.mean_low, fit.var_low);
      const double b = std::log(GmmFit::prior) + log_normal(scores[i], fit.mean_high, fit.var_high);
      const double lse = log_sum_exp(a, b);
      ll += lse;
      resp[i] = std::exp(a - lse);
    }
    if (!fit.log_likelihood.empty()) {
      const double slack = 1e-9 * std::max(1.0, std::abs(prev_ll));
      if (ll < prev_ll - slack)
        throw ContractError("EM log-likelihood decreased at iteration " + std::to_string(it));
    }
    fit.log_likelihood.push_back(ll);
    fit.iterations_used = it + 1;
    if (std::isfinite(prev_ll) && std::abs(ll - prev_ll) < tol) {
      fit.converged = true;
      break;
    }
    prev_ll = ll;

    // M-step; priors stay fixed.
    double w_low = 0.0, w_high = 0.0, s_low = 0.0, s_high = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w_low += resp[i];
      w_high += 1.0 - resp[i];
      s_low += resp[i] * scores[i];
      s_high += (1.0 - resp[i]) * scores[i];
    }
    if (w_low > 0) fit.mean_low = s_low / w_low;
    if (w_high > 0) fit.mean_high = s_high / w_high;
    double v_low = 0.0, v_high = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v_low += resp[i] * (scores[i] - fit.mean_low) * (scores[i] - fit.mean_low);
      v_high += (1.0 - resp[i]) * (scores[i] - fit.mean_high) * (scores[i] - fit.mean_high);
    }
    if (w_low > 0) fit.var_low = std::max(v_low / w_low, kVarianceFloor);
    if (w_high > 0) fit.var_high = std::max(v_high / w_high, kVarianceFloor);
  }

  if (fit.mean_low > fit.mean_high) {
    std::swap(fit.mean_low, fit.mean_high);
    std::swap(fit.var_low, fit.var_high);
  }
  return fit;
}

SampleSplit split(std::span<const double> scores, const GmmFit& fit, double delta_t) {
  if (!(delta_t > 0.0 && delta_t < 1.0))
    throw ValidationError("delta_t must lie in (0,1), got " + std::to_string(delta_t));
  SampleSplit s;
  s.confidence.resize(scores.size());
  if (fit.degenerate) {
    s.all_clean_fallback = true;
    s.clean_idx.resize(scores.size());
    std::iota(s.clean_idx.begin(), s.clean_idx.end(), 0);
    std::fill(s.confidence.begin(), s.confidence.end(), 1.0);
    return s;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    s.confidence[i] = fit.posterior_low(scores[i]);
    (s.confidence[i] >= delta_t ? s.clean_idx : s.noisy_idx).push_back(static_cast<int>(i));
  }
  return s;
}

SampleSplit split_lowest(std::span<const double> scores, std::size_t k) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)]; });
  k = std::min(k, scores.size());
  SampleSplit s;
  s.confidence.assign(scores.size(), 0.0);
  std::vector<bool> clean(scores.size(), false);
  for (std::size_t r = 0; r < k; ++r) clean[static_cast<std::size_t>(order[r])] = true;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (clean[i]) {
      s.clean_idx.push_back(static_cast<int>(i));
      s.confidence[i] = 1.0;
    } else {
      s.noisy_idx.push_back(static_cast<int>(i));
    }
  }
  return s;
}

double clean_set_precision(const SampleSplit& s, std::span<const int> pseudolabels,
                           std::span<const int> truth) {
  if (pseudolabels.size() != truth.size()) throw DimensionError("label vectors differ in length");
  if (s.clean_idx.empty()) return 0.0;
  std::size_t hits = 0;
  for (int i : s.clean_idx)
    if (pseudolabels[static_cast<std::size_t>(i)] == truth[static_cast<std::size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(s.clean_idx.size());
}

}  // namespace cabb::separation
