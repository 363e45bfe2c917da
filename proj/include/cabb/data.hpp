#pragma once

#include "cabb/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace cabb::data {

enum class Domain { source, target };

const char* domain_name(Domain d);

struct LabeledSet {
  Matrix features;          // N x D
  std::vector<int> labels;  // N, in [0, class_count)
  Domain domain = Domain::source;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  int dim() const { return static_cast<int>(features.cols()); }

  /// Rows `idx` of the feature matrix.
  Matrix rows(std::span<const int> idx) const;

  bool operator==(const LabeledSet& other) const;
};

/// Throws ValidationError unless N > 0, features are finite, and every label
/// is in range. `require_all_classes` additionally demands every class appear.
void validate(const LabeledSet& set, bool require_all_classes = false);

/// Source: Gaussian blobs centred on a circle in the first two feature
/// dimensions. Target: the same draws rotated about the circle centre in that
/// plane, scaled, translated, plus isotropic noise.
struct ShiftSpec {
  double rotation_deg = 25.0;
  std::vector<double> translation;  // empty means zero; otherwise length dim
  double scale = 1.0;
  double noise_sigma = 0.15;
  int class_count = 6;
  int samples_per_class = 300;
  int dim = 2;
  double radius = 2.0;
  double blob_sigma = 0.35;

  void validate() const;
};

std::pair<LabeledSet, LabeledSet> make_shifted_pair(const ShiftSpec& spec, std::uint64_t seed);

/// Header line `D,C,N,domain`, then `label,f1,...,fD` per sample.
void write_features(std::ostream& out, const LabeledSet& set);
void write_features(const std::filesystem::path& path, const LabeledSet& set);

/// Throws ParseError (with line number) on malformed input and ValidationError
/// naming the row on out-of-range labels.
LabeledSet read_features(std::istream& in);
LabeledSet load_features(const std::filesystem::path& path);

/// Seeded shuffle of 0..n-1 cut into consecutive batches; the last one may be short.
std::vector<std::vector<int>> minibatches(std::size_t n, std::size_t batch_size,
                                          std::uint64_t seed, std::uint64_t epoch);
std::vector<std::vector<int>> minibatches(const LabeledSet& set, std::size_t batch_size,
                                          std::uint64_t seed, std::uint64_t epoch);

}  // namespace cabb::data
