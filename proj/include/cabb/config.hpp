#pragma once

#include "cabb/blackbox.hpp"
#include "cabb/data.hpp"
#include "cabb/trainer.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

// Plain-text run configuration: `key = value` lines, `#` comments. Every key
// has an explicit default and unknown keys are rejected.

namespace cabb::config {

class UnknownKeyError : public std::invalid_argument {
 public:
  explicit UnknownKeyError(const std::string& key)
      : std::invalid_argument("unknown config key '" + key + "'"), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  data::ShiftSpec shift;
  int source_epochs = 30;
  blackbox::SourceTrainConfig source;
  trainer::AdaptConfig adapt;
  std::vector<std::uint64_t> seeds{0};
  std::string source_file;
  std::string target_file;
  std::string predictor_file;
  std::string output_dir;

  void validate() const;
};

/// Sets one key from its textual value. Throws UnknownKeyError or ValidationError.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Applies `key = value` lines on top of `base`.
RunConfig parse(std::istream& in, RunConfig base = {});
RunConfig load(const std::string& path, RunConfig base = {});

/// Every key, one per line, in a fixed order; parse(format(c)) == c.
std::string format(const RunConfig& cfg);

/// (key, value) pairs in the same order as format().
std::vector<std::pair<std::string, std::string>> entries(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace cabb::config
