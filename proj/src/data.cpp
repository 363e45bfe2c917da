#include "cabb/data.hpp"

#include "cabb/errors.hpp"
#include "cabb/rng.hpp"
#include "cabb/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace cabb::data {

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

Matrix LabeledSet::rows(std::span<const int> idx) const {
  Matrix out(static_cast<Eigen::Index>(idx.size()), features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features.row(idx[i]);
  return out;
}

bool LabeledSet::operator==(const LabeledSet& other) const {
  return domain == other.domain && class_count == other.class_count && labels == other.labels &&
         features.rows() == other.features.rows() && features.cols() == other.features.cols() &&
         features == other.features;
}

void validate(const LabeledSet& set, bool require_all_classes) {
  if (set.size() == 0) throw ValidationError("labeled set is empty");
  if (set.class_count < 2) throw ValidationError("class count must be at least 2");
  if (static_cast<std::size_t>(set.features.rows()) != set.size())
    throw ValidationError("feature rows do not match label count");
  if (!set.features.allFinite()) throw ValidationError("features contain non-finite values");
  std::vector<bool> seen(static_cast<std::size_t>(set.class_count), false);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int y = set.labels[i];
    if (y < 0 || y >= set.class_count)
      throw ValidationError("row " + std::to_string(i) + ": label " + std::to_string(y) +
                            " outside [0," + std::to_string(set.class_count) + ")");
    seen[static_cast<std::size_t>(y)] = true;
  }
  if (require_all_classes && std::find(seen.begin(), seen.end(), false) != seen.end())
    throw ValidationError("not every class is represented");
}

void ShiftSpec::validate() const {
  if (class_count < 2) throw ValidationError("class_count must be >= 2");
  if (samples_per_class < 10) throw ValidationError("samples_per_class must be >= 10");
  if (dim < 2) throw ValidationError("dim must be >= 2");
  if (!translation.empty() && static_cast<int>(translation.size()) != dim)
    throw ValidationError("translation length must equal dim");
  if (!(scale > 0) || !std::isfinite(scale)) throw ValidationError("scale must be positive");
  if (noise_sigma < 0 || blob_sigma < 0) throw ValidationError("noise sigmas must be nonnegative");
  if (!(radius > 0)) throw ValidationError("radius must be positive");
  if (!std::isfinite(rotation_deg)) throw ValidationError("rotation must be finite");
}

std::pair<LabeledSet, LabeledSet> make_shifted_pair(const ShiftSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int n = spec.class_count * spec.samples_per_class;
  LabeledSet src{Matrix(n, spec.dim), std::vector<int>(static_cast<std::size_t>(n)),
                 Domain::source, spec.class_count};
  Engine blob_rng(derive_seed(seed, {0x5eed, 1}));
  std::normal_distribution<double> blob(0.0, 1.0);
  for (int k = 0; k < spec.class_count; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / spec.class_count;
    for (int j = 0; j < spec.samples_per_class; ++j) {
      const int i = k * spec.samples_per_class + j;
      src.labels[static_cast<std::size_t>(i)] = k;
      for (int d = 0; d < spec.dim; ++d) src.features(i, d) = spec.blob_sigma * blob(blob_rng);
      src.features(i, 0) += spec.radius * std::cos(angle);
      src.features(i, 1) += spec.radius * std::sin(angle);
    }
  }

  LabeledSet tgt{Matrix(n, spec.dim), src.labels, Domain::target, spec.class_count};
  const double theta = spec.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  Engine noise_rng(derive_seed(seed, {0x5eed, 2}));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < spec.dim; ++d) tgt.features(i, d) = src.features(i, d);
    const double x = src.features(i, 0), y = src.features(i, 1);
    tgt.features(i, 0) = c * x - s * y;
    tgt.features(i, 1) = s * x + c * y;
    for (int d = 0; d < spec.dim; ++d) {
      double v = spec.scale * tgt.features(i, d);
      if (!spec.translation.empty()) v += spec.translation[static_cast<std::size_t>(d)];
      if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(noise_rng);
      tgt.features(i, d) = v;
    }
  }
  validate(src, true);
  validate(tgt, true);
  return {std::move(src), std::move(tgt)};
}

void write_features(std::ostream& out, const LabeledSet& set) {
  out << set.dim() << ',' << set.class_count << ',' << set.size() << ',' << domain_name(set.domain)
      << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.labels[i];
    for (int d = 0; d < set.dim(); ++d)
      out << ',' << text::format_double(set.features(static_cast<Eigen::Index>(i), d));
    out << '\n';
  }
}

void write_features(const std::filesystem::path& path, const LabeledSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_features(out, set);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

LabeledSet read_features(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++line_no;
  auto head = text::split(text::trim(line), ',');
  if (head.size() != 4) throw ParseError("header must be D,C,N,domain", line_no);
  long long dim = 0, classes = 0, n = 0;
  if (!text::parse_int(head[0], dim) || !text::parse_int(head[1], classes) ||
      !text::parse_int(head[2], n) || dim < 1 || classes < 2 || n < 1)
    throw ParseError("header must be D,C,N,domain with D>=1, C>=2, N>=1", line_no);
  LabeledSet set;
  const auto dom = text::trim(head[3]);
  if (dom == "source")
    set.domain = Domain::source;
  else if (dom == "target")
    set.domain = Domain::target;
  else
    throw ParseError("domain must be 'source' or 'target'", line_no);
  set.class_count = static_cast<int>(classes);
  set.features.resize(n, dim);
  set.labels.resize(static_cast<std::size_t>(n));

  for (long long row = 0; row < n; ++row) {
    if (!std::getline(in, line)) throw ParseError("expected " + std::to_string(n) + " rows", line_no + 1);
    ++line_no;
    auto fields = text::split(text::trim(line), ',');
    if (static_cast<long long>(fields.size()) != dim + 1)
      throw ParseError("expected " + std::to_string(dim + 1) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    long long label = 0;
    if (!text::parse_int(fields[0], label)) throw ParseError("bad label '" + std::string(fields[0]) + "'", line_no);
    if (label < 0 || label >= classes)
      throw ValidationError("row " + std::to_string(row) + " (line " + std::to_string(line_no) +
                            "): label " + std::to_string(label) + " outside [0," +
                            std::to_string(classes) + ")");
    set.labels[static_cast<std::size_t>(row)] = static_cast<int>(label);
    for (long long d = 0; d < dim; ++d) {
      const auto f = fields[static_cast<std::size_t>(d + 1)];
      if (!text::parse_double(f, set.features(row, d)))
        throw ParseError("bad number '" + std::string(f) + "'", line_no);
    }
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!text::trim(line).empty()) throw ParseError("unexpected trailing row", line_no);
  }
  validate(set);
  return set;
}

LabeledSet load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_features(in);
}

std::vector<std::vector<int>> minibatches(std::size_t n, std::size_t batch_size,
                                          std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Engine rng(derive_seed(seed, {0xba7c4, epoch}));
  // Fisher-Yates with an explicit bounded draw; std::shuffle's draw pattern is
  // implementation-defined.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<std::vector<int>> minibatches(const LabeledSet& set, std::size_t batch_size,
                                          std::uint64_t seed, std::uint64_t epoch) {
  return minibatches(set.size(), batch_size, seed, epoch);
}

}  // namespace cabb::data
