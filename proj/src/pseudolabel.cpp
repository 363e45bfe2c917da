#include "cabb/pseudolabel.hpp"

#include "cabb/errors.hpp"
#include "cabb/rng.hpp"

#include <cmath>
#include <limits>

namespace cabb::pseudolabel {

void AugmentSpec::validate() const {
  if (views < 1) throw ValidationError("augmentation needs at least one view");
  if (jitter_sigma < 0) throw ValidationError("jitter_sigma must be nonnegative");
  if (!(scale_lo <= scale_hi) || !(scale_lo > 0)) throw ValidationError("scale range must be a nonempty positive interval");
}

void SharpenSpec::validate() const {
  if (!(temperature > 0 && temperature <= 1)) throw ValidationError("temperature must lie in (0,1]");
}

std::vector<double> augment(std::span<const double> x, const AugmentSpec& spec, std::uint64_t seed,
                            int view_index, std::size_t sample_index) {
  Engine rng(derive_seed(seed, {0xa06, static_cast<std::uint64_t>(view_index), sample_index}));
  double s = spec.scale_lo;
  if (spec.scale_hi > spec.scale_lo) s = std::uniform_real_distribution<double>(spec.scale_lo, spec.scale_hi)(rng);
  std::vector<double> out(x.begin(), x.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& v : out) {
    v *= s;
    if (spec.jitter_sigma > 0) v += spec.jitter_sigma * noise(rng);
  }
  return out;
}

ProbVector sharpen(std::span<const double> y, double temperature) {
  if (!(temperature > 0 && temperature <= 1)) throw ValidationError("temperature must lie in (0,1]");
  ProbVector out(y.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : y)
    if (v > 0) mx = std::max(mx, std::log(v));
  if (!std::isfinite(mx)) return out;
  double sum = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] > 0) out[k] = std::exp((std::log(y[k]) - mx) / temperature);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

Matrix ensemble_pseudolabels(const Matrix& x, std::span<const int> sample_index,
                             const nnet::MlpModel& branch1, const nnet::MlpModel& branch2,
                             const AugmentSpec& aug, const SharpenSpec& sharp, std::uint64_t seed) {
  aug.validate();
  sharp.validate();
  if (static_cast<Eigen::Index>(sample_index.size()) != x.rows())
    throw DimensionError("one sample index per row is required");
  if (branch1.input_dim() != branch2.input_dim() || branch1.class_count() != branch2.class_count())
    throw DimensionError("branches disagree on input width or class count");

  Matrix sum = Matrix::Zero(x.rows(), branch1.class_count());
  Matrix view(x.rows(), x.cols());
  for (int m = 0; m < aug.views; ++m) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto v = augment(row_span(x, r), aug, seed, m, static_cast<std::size_t>(sample_index[static_cast<std::size_t>(r)]));
      for (Eigen::Index d = 0; d < x.cols(); ++d) view(r, d) = v[static_cast<std::size_t>(d)];
    }
    sum += nnet::predict_proba(branch1, view);
    sum += nnet::predict_proba(branch2, view);
  }
  sum /= 2.0 * aug.views;

  Matrix out(sum.rows(), sum.cols());
  for (Eigen::Index r = 0; r < sum.rows(); ++r) {
    const auto s = sharpen(row_span(sum, r), sharp.temperature);
    for (Eigen::Index k = 0; k < sum.cols(); ++k) out(r, k) = s[static_cast<std::size_t>(k)];
  }
  return out;
}

ProbVector ensemble_pseudolabel(std::span<const double> x, const nnet::MlpModel& branch1,
                                const nnet::MlpModel& branch2, const AugmentSpec& aug,
                                const SharpenSpec& sharp, std::uint64_t seed,
                                std::size_t sample_index) {
  Matrix row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t d = 0; d < x.size(); ++d) row(0, static_cast<Eigen::Index>(d)) = x[d];
  const int idx = static_cast<int>(sample_index);
  const Matrix y = ensemble_pseudolabels(row, std::span<const int>(&idx, 1), branch1, branch2, aug, sharp, seed);
  return ProbVector(y.data(), y.data() + y.cols());
}

}  // namespace cabb::pseudolabel
