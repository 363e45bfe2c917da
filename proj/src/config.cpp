#include "cabb/config.hpp"

#include "cabb/errors.hpp"
#include "cabb/text_io.hpp"

#include <climits>
#include <fstream>
#include <functional>
#include <sstream>

namespace cabb::config {
namespace {

std::string fmt(double v) { return text::format_double(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += text::format_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ValidationError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0;
  if (!text::parse_double(text::trim(s), v)) bad_value(key, s, "a number");
  return v;
}

int to_int(const std::string& key, const std::string& s) {
  long long v = 0;
  if (!text::parse_int(text::trim(s), v) || v < INT_MIN || v > INT_MAX) bad_value(key, s, "an integer");
  return static_cast<int>(v);
}

bool to_bool(const std::string& key, const std::string& s) {
  const auto t = text::trim(s);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  bad_value(key, s, "true/false");
}

std::vector<int> to_int_list(const std::string& key, const std::string& s) {
  std::vector<int> out;
  if (text::trim(s).empty()) return out;
  for (auto t : text::split(s, ',')) out.push_back(to_int(key, std::string(t)));
  return out;
}

std::vector<double> to_double_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  if (text::trim(s).empty()) return out;
  for (auto t : text::split(s, ',')) out.push_back(to_double(key, std::string(t)));
  return out;
}

std::vector<std::uint64_t> to_seed_list(const std::string& key, const std::string& s) {
  std::vector<std::uint64_t> out;
  for (auto t : text::split(s, ',')) {
    long long v = 0;
    if (!text::parse_int(text::trim(t), v) || v < 0) bad_value(key, s, "a comma-separated list of nonnegative seeds");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define CABB_DOUBLE(name, member) \
  Field{name, [](const RunConfig& c) { return fmt(c.member); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }}
#define CABB_INT(name, member) \
  Field{name, [](const RunConfig& c) { return fmt(c.member); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_int(k, v); }}
#define CABB_BOOL(name, member) \
  Field{name, [](const RunConfig& c) { return fmt(c.member); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }}
#define CABB_STRING(name, member) \
  Field{name, [](const RunConfig& c) { return c.member; }, \
        [](RunConfig& c, const std::string&, const std::string& v) { c.member = std::string(text::trim(v)); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      CABB_DOUBLE("shift.rotation_deg", shift.rotation_deg),
      Field{"shift.translation", [](const RunConfig& c) { return fmt_list(c.shift.translation); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.shift.translation = to_double_list(k, v); }},
      CABB_DOUBLE("shift.scale", shift.scale),
      CABB_DOUBLE("shift.noise_sigma", shift.noise_sigma),
      CABB_INT("shift.class_count", shift.class_count),
      CABB_INT("shift.samples_per_class", shift.samples_per_class),
      CABB_INT("shift.dim", shift.dim),
      CABB_DOUBLE("shift.radius", shift.radius),
      CABB_DOUBLE("shift.blob_sigma", shift.blob_sigma),
      CABB_INT("source.epochs", source_epochs),
      CABB_INT("source.batch_size", source.batch_size),
      CABB_DOUBLE("source.lr", source.lr),
      CABB_DOUBLE("source.momentum", source.momentum),
      CABB_DOUBLE("source.weight_decay", source.weight_decay),
      Field{"source.hidden", [](const RunConfig& c) { return fmt_list(c.source.hidden); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.source.hidden = to_int_list(k, v); }},
      CABB_INT("adapt.epochs", adapt.epochs),
      CABB_INT("adapt.iter_distill", adapt.iter_distill),
      CABB_INT("adapt.iter_adapt", adapt.iter_adapt),
      CABB_INT("adapt.batch_size", adapt.batch_size),
      CABB_DOUBLE("adapt.delta_t", adapt.delta_t),
      CABB_DOUBLE("adapt.beta", adapt.beta),
      CABB_DOUBLE("adapt.alpha", adapt.alpha),
      CABB_DOUBLE("adapt.gamma0", adapt.gamma0),
      CABB_DOUBLE("adapt.pinned_gamma", adapt.pinned_gamma),
      CABB_DOUBLE("adapt.temperature", adapt.temperature),
      CABB_INT("adapt.views", adapt.augment.views),
      CABB_DOUBLE("adapt.jitter_sigma", adapt.augment.jitter_sigma),
      CABB_DOUBLE("adapt.scale_lo", adapt.augment.scale_lo),
      CABB_DOUBLE("adapt.scale_hi", adapt.augment.scale_hi),
      CABB_DOUBLE("adapt.ema_momentum", adapt.ema_momentum),
      CABB_INT("adapt.refresh_interval", adapt.refresh_interval),
      CABB_DOUBLE("adapt.label_smoothing", adapt.label_smoothing),
      CABB_DOUBLE("adapt.lr_backbone", adapt.sgd.lr_backbone),
      CABB_DOUBLE("adapt.lr_classifier", adapt.sgd.lr_classifier),
      CABB_DOUBLE("adapt.momentum", adapt.sgd.momentum),
      CABB_DOUBLE("adapt.weight_decay", adapt.sgd.weight_decay),
      Field{"adapt.hidden", [](const RunConfig& c) { return fmt_list(c.adapt.hidden); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.adapt.hidden = to_int_list(k, v); }},
      CABB_BOOL("adapt.use_curriculum", adapt.use_curriculum),
      CABB_BOOL("adapt.use_noisy_loss", adapt.use_noisy_loss),
      CABB_BOOL("adapt.use_entropy_loss", adapt.use_entropy_loss),
      CABB_BOOL("adapt.distill_every_epoch", adapt.distill_every_epoch),
      CABB_BOOL("adapt.parallel_branches", adapt.parallel_branches),
      Field{"seeds", [](const RunConfig& c) { return fmt_list(c.seeds); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.seeds = to_seed_list(k, v); }},
      CABB_STRING("source_file", source_file),
      CABB_STRING("target_file", target_file),
      CABB_STRING("predictor_file", predictor_file),
      CABB_STRING("output_dir", output_dir),
  };
  return table;
}

#undef CABB_DOUBLE
#undef CABB_INT
#undef CABB_BOOL
#undef CABB_STRING

}  // namespace

void RunConfig::validate() const {
  shift.validate();
  source.validate();
  adapt.validate();
  if (source_epochs < 0) throw ValidationError("source.epochs must be nonnegative");
  if (seeds.empty()) throw ValidationError("at least one seed is required");
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(cfg, key, value);
      return;
    }
  throw UnknownKeyError(key);
}

RunConfig parse(std::istream& in, RunConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = text::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key(text::trim(body.substr(0, eq)));
    const std::string value(text::trim(body.substr(eq + 1)));
    set_value(base, key, value);
  }
  return base;
}

RunConfig load(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  return parse(in, std::move(base));
}

std::vector<std::pair<std::string, std::string>> entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string format(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [k, v] : entries(cfg)) out << k << " = " << v << '\n';
  return out.str();
}

bool operator==(const RunConfig& a, const RunConfig& b) { return entries(a) == entries(b); }

}  // namespace cabb::config
