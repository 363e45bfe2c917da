#include "cabb/cli.hpp"

#include "cabb/config.hpp"
#include "cabb/errors.hpp"
#include "cabb/text_io.hpp"
#include "cabb/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace cabb::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

/// Usage-class failure detected by the CLI itself (missing file or directory).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

constexpr const char* kReportHelp =
    "CSV columns for --kind epochs (one row per branch per epoch):\n"
    "  epoch               adaptation epoch, starting at 1\n"
    "  branch              1 or 2\n"
    "  target_accuracy     argmax accuracy of the branch on the target set after the epoch\n"
    "  clean_set_size      samples the peer-scored split marked clean\n"
    "  clean_set_precision fraction of clean samples whose stored hard label is correct\n"
    "  gamma               curriculum factor at the end of the epoch\n"
    "  loss_tc             mean clean-set cross-entropy\n"
    "  loss_tn             mean noisy-set active-passive loss\n"
    "  loss_ent            mean per-sample entropy\n"
    "  loss_eqdiv          mean diversity term\n"
    "  loss_tot            mean total objective\n"
    "CSV columns for --kind gamma (one row per optimisation step):\n"
    "  epoch, branch, iteration, gamma, clean_loss\n"
    "Numbers are printed in shortest round-trip form.";

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value run configuration file");
  cmd->add_option("--set", c.overrides, "override one config key, e.g. --set adapt.epochs=10")
      ->type_name("KEY=VALUE");
}

config::RunConfig resolve_config(const Common& c) {
  config::RunConfig cfg;
  if (!c.config_path.empty()) {
    if (!fs::is_regular_file(c.config_path)) throw UsageError("config file not found: " + c.config_path);
    cfg = config::load(c.config_path, cfg);
  }
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
    config::set_value(cfg, std::string(text::trim(kv.substr(0, eq))), std::string(text::trim(kv.substr(eq + 1))));
  }
  return cfg;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void require_dir(const std::string& path) {
  if (path.empty()) throw UsageError("output directory is required");
  if (!fs::is_directory(path)) throw UsageError("output directory does not exist: " + path);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

blackbox::BlackBoxPredictor load_predictor(const std::string& path) {
  require_file(path, "predictor");
  std::ifstream in(path);
  return blackbox::BlackBoxPredictor::load(in);
}

data::LabeledSet load_target(const std::string& path) {
  require_file(path, "target feature file");
  auto set = data::load_features(path);
  if (set.domain != data::Domain::target) throw ValidationError(path + " holds source-domain data");
  return set;
}

/// Config entries with booleans and numbers typed; lists and paths stay strings.
/// The output directory is left out so that a summary does not depend on where it was written.
ordered_json config_json(const config::RunConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : config::entries(cfg)) {
    if (k == "output_dir") continue;
    long long i = 0;
    double d = 0;
    if (v == "true" || v == "false")
      j[k] = v == "true";
    else if (k == "seeds")
      j[k] = cfg.seeds;
    else if (text::parse_int(v, i))
      j[k] = i;
    else if (text::parse_double(v, d))
      j[k] = d;
    else
      j[k] = v;
  }
  return j;
}

ordered_json record_json(const trainer::MetricsRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["branch"] = r.branch;
  j["target_accuracy"] = r.target_accuracy;
  j["clean_set_size"] = r.clean_set_size;
  j["clean_set_precision"] = r.clean_set_precision;
  j["gamma"] = r.gamma;
  j["losses"] = {{"tc", r.losses.tc},
                 {"tn", r.losses.tn},
                 {"ent", r.losses.ent},
                 {"eqdiv", r.losses.eqdiv},
                 {"tot", r.losses.tot}};
  j["empty_clean_set"] = r.empty_clean_set;
  return j;
}

std::string seed_file(const char* stem, std::uint64_t seed, const char* ext) {
  return std::string(stem) + "_seed" + std::to_string(seed) + ext;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  Common common;
  std::string out_dir;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  auto cfg = resolve_config(a.common);
  cfg.validate();
  require_dir(a.out_dir);
  const auto seed = a.common.seed.value_or(cfg.seeds.front());
  const auto [src, tgt] = data::make_shifted_pair(cfg.shift, seed);
  const fs::path dir(a.out_dir);
  data::write_features(dir / "source.csv", src);
  data::write_features(dir / "target.csv", tgt);
  out << "wrote " << (dir / "source.csv").string() << " and " << (dir / "target.csv").string() << " ("
      << src.size() << " + " << tgt.size() << " samples)\n";
  return kExitOk;
}

// ---- train-source -----------------------------------------------------------

struct TrainSourceArgs {
  Common common;
  std::string source;
  std::string out;
  std::optional<int> epochs;
};

int cmd_train_source(const TrainSourceArgs& a, std::ostream& out) {
  auto cfg = resolve_config(a.common);
  if (!a.source.empty()) cfg.source_file = a.source;
  if (!a.out.empty()) cfg.predictor_file = a.out;
  if (a.epochs) cfg.source_epochs = *a.epochs;
  cfg.validate();
  require_file(cfg.source_file, "source feature file");
  if (cfg.predictor_file.empty()) throw UsageError("predictor output path is required (--out)");
  const auto parent = fs::path(cfg.predictor_file).parent_path();
  if (!parent.empty()) require_dir(parent.string());

  const auto src = data::load_features(cfg.source_file);
  if (src.domain != data::Domain::source) throw ValidationError(cfg.source_file + " holds target-domain data");
  const auto seed = a.common.seed.value_or(cfg.seeds.front());
  const auto bb = blackbox::train_source(src, cfg.source_epochs, seed, cfg.source);

  const auto pred = bb.predict_hard(src.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == src.labels[i]) ++hits;
  auto f = open_out(cfg.predictor_file);
  bb.save(f);
  out << "source_accuracy " << text::format_double(static_cast<double>(hits) / static_cast<double>(src.size()))
      << "\nwrote " << cfg.predictor_file << "\n";
  return kExitOk;
}

// ---- adapt ------------------------------------------------------------------

struct AdaptArgs {
  Common common;
  std::string target;
  std::string predictor;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> ablate;
  int jobs = 1;
};

struct SeedOutcome {
  trainer::RunResult result;
  std::vector<trainer::IterationEvent> gamma_trace;
};

void apply_ablation(trainer::AdaptConfig& c, const std::string& name) {
  if (name == "no-curriculum")
    c.use_curriculum = false;
  else if (name == "no-noisy-loss")
    c.use_noisy_loss = false;
  else if (name == "no-entropy")
    c.use_entropy_loss = false;
  else
    throw UsageError("unknown ablation '" + name + "' (expected no-curriculum, no-noisy-loss, no-entropy)");
}

SeedOutcome run_seed(const config::RunConfig& cfg, const blackbox::BlackBoxPredictor& bb,
                     const data::LabeledSet& target, std::uint64_t seed) {
  SeedOutcome o;
  std::mutex mu;
  trainer::TrainerHooks hooks;
  hooks.on_iteration = [&](const trainer::IterationEvent& e) {
    std::lock_guard lock(mu);
    o.gamma_trace.push_back(e);
  };
  o.result = trainer::run(cfg.adapt, bb, target, seed, hooks);
  std::stable_sort(o.gamma_trace.begin(), o.gamma_trace.end(), [](const auto& x, const auto& y) {
    return std::tie(x.epoch, x.branch, x.iteration) < std::tie(y.epoch, y.branch, y.iteration);
  });
  return o;
}

void write_seed_outputs(const fs::path& dir, const config::RunConfig& cfg, std::uint64_t seed,
                        const SeedOutcome& o) {
  {
    auto f = open_out(dir / seed_file("metrics", seed, ".jsonl"));
    for (const auto& r : o.result.metrics) f << record_json(r).dump() << '\n';
  }
  {
    auto f = open_out(dir / seed_file("gamma", seed, ".jsonl"));
    for (const auto& e : o.gamma_trace) {
      ordered_json j;
      j["epoch"] = e.epoch;
      j["branch"] = e.branch;
      j["iteration"] = e.iteration;
      j["gamma"] = e.gamma;
      j["clean_loss"] = e.clean_loss;
      f << j.dump() << '\n';
    }
  }
  ordered_json s;
  s["source_only_acc"] = o.result.source_only_acc;
  s["branch1_acc"] = o.result.branch1_acc;
  s["branch2_acc"] = o.result.branch2_acc;
  s["mean_acc"] = o.result.mean_acc;
  s["config"] = config_json(cfg);
  s["seed"] = seed;
  auto f = open_out(dir / seed_file("summary", seed, ".json"));
  f << s.dump(2) << '\n';
}

ordered_json mean_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return ordered_json{{"mean", mean}, {"std", sd}};
}

int cmd_adapt(const AdaptArgs& a, std::ostream& out) {
  auto cfg = resolve_config(a.common);
  if (!a.target.empty()) cfg.target_file = a.target;
  if (!a.predictor.empty()) cfg.predictor_file = a.predictor;
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  if (!a.seeds.empty())
    cfg.seeds = a.seeds;
  else if (a.common.seed)
    cfg.seeds = {*a.common.seed};
  for (const auto& name : a.ablate) apply_ablation(cfg.adapt, name);
  cfg.validate();
  if (a.jobs < 1) throw UsageError("--jobs must be at least 1");
  require_dir(cfg.output_dir);

  const auto target = load_target(cfg.target_file);
  const auto bb = load_predictor(cfg.predictor_file);
  const fs::path dir(cfg.output_dir);

  const std::size_t n = cfg.seeds.size();
  std::vector<std::optional<SeedOutcome>> outcomes(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        outcomes[i] = run_seed(cfg, bb, target, cfg.seeds[i]);
        write_seed_outputs(dir, cfg, cfg.seeds[i], *outcomes[i]);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(a.jobs), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = outcomes[i]->result;
    out << "seed " << cfg.seeds[i] << " source_only " << text::format_double(r.source_only_acc) << " branch1 "
        << text::format_double(r.branch1_acc) << " branch2 " << text::format_double(r.branch2_acc) << " mean "
        << text::format_double(r.mean_acc) << '\n';
  }

  if (n > 1) {
    std::vector<double> so, b1, b2, mean;
    for (const auto& o : outcomes) {
      so.push_back(o->result.source_only_acc);
      b1.push_back(o->result.branch1_acc);
      b2.push_back(o->result.branch2_acc);
      mean.push_back(o->result.mean_acc);
    }
    ordered_json agg;
    agg["seeds"] = cfg.seeds;
    agg["source_only_acc"] = mean_std(so);
    agg["branch1_acc"] = mean_std(b1);
    agg["branch2_acc"] = mean_std(b2);
    agg["mean_acc"] = mean_std(mean);
    agg["config"] = config_json(cfg);
    auto f = open_out(dir / "aggregate.json");
    f << agg.dump(2) << '\n';
  }
  return kExitOk;
}

// ---- inspect-split ----------------------------------------------------------

struct InspectArgs {
  Common common;
  std::string target;
  std::string predictor;
  std::string out;
  int branch = 1;
};

int cmd_inspect_split(const InspectArgs& a, std::ostream& out) {
  auto cfg = resolve_config(a.common);
  if (!a.target.empty()) cfg.target_file = a.target;
  if (!a.predictor.empty()) cfg.predictor_file = a.predictor;
  cfg.validate();
  if (a.branch != 1 && a.branch != 2) throw UsageError("--branch must be 1 or 2");
  if (a.out.empty()) throw UsageError("--out is required");
  const auto parent = fs::path(a.out).parent_path();
  if (!parent.empty()) require_dir(parent.string());

  const auto target = load_target(cfg.target_file);
  const auto bb = load_predictor(cfg.predictor_file);
  const auto seed = a.common.seed.value_or(cfg.seeds.front());

  // The state the first adaptation epoch sees: distilled branches, initial store.
  const auto prep = trainer::prepare(cfg.adapt, bb, target, seed);
  const int peer = a.branch == 1 ? 2 : 1;
  const auto& peer_model = prep.branches[static_cast<std::size_t>(peer - 1)].model;
  const auto scores =
      separation::jsd_scores(prep.store.labels(), nnet::predict_proba(peer_model, target.features));
  const auto split = separation::split(scores, separation::fit_gmm(scores), cfg.adapt.delta_t);
  const auto hard = prep.store.hard_labels();

  std::vector<char> clean(target.size(), 0);
  for (int i : split.clean_idx) clean[static_cast<std::size_t>(i)] = 1;
  auto f = open_out(a.out);
  f << "index,score,confidence,clean,store_label,true_label\n";
  for (std::size_t i = 0; i < target.size(); ++i)
    f << i << ',' << text::format_double(scores[i]) << ',' << text::format_double(split.confidence[i]) << ','
      << int(clean[i]) << ',' << hard[i] << ',' << target.labels[i] << '\n';

  ordered_json s;
  s["branch"] = a.branch;
  s["scored_by_branch"] = peer;
  s["seed"] = seed;
  s["clean_set_size"] = split.clean_idx.size();
  s["clean_set_precision"] = separation::clean_set_precision(split, hard, target.labels);
  s["all_clean_fallback"] = split.all_clean_fallback;
  out << s.dump() << '\n';
  return kExitOk;
}

// ---- report -----------------------------------------------------------------

struct ReportArgs {
  std::string metrics;
  std::string kind = "epochs";
  std::string out;
};

std::vector<ordered_json> read_jsonl(const std::string& path) {
  require_file(path, "metrics file");
  std::ifstream in(path);
  std::vector<ordered_json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      rows.push_back(ordered_json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON in ") + path + ": " + e.what(), line_no);
    }
  }
  if (rows.empty()) throw UsageError("metrics file is empty: " + path);
  return rows;
}

std::string num(const ordered_json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw ValidationError(std::string("metrics record lacks '") + key + "'");
  const auto& v = j.at(key);
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return text::format_double(v.get<double>());
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  const auto rows = read_jsonl(a.metrics);
  std::ostringstream csv;
  if (a.kind == "epochs") {
    csv << "epoch,branch,target_accuracy,clean_set_size,clean_set_precision,gamma,"
           "loss_tc,loss_tn,loss_ent,loss_eqdiv,loss_tot\n";
    for (const auto& r : rows) {
      if (!r.contains("losses")) throw ValidationError("metrics record lacks 'losses'");
      const auto& l = r.at("losses");
      csv << num(r, "epoch") << ',' << num(r, "branch") << ',' << num(r, "target_accuracy") << ','
          << num(r, "clean_set_size") << ',' << num(r, "clean_set_precision") << ',' << num(r, "gamma") << ','
          << num(l, "tc") << ',' << num(l, "tn") << ',' << num(l, "ent") << ',' << num(l, "eqdiv") << ','
          << num(l, "tot") << '\n';
    }
  } else if (a.kind == "gamma") {
    csv << "epoch,branch,iteration,gamma,clean_loss\n";
    for (const auto& r : rows)
      csv << num(r, "epoch") << ',' << num(r, "branch") << ',' << num(r, "iteration") << ',' << num(r, "gamma")
          << ',' << num(r, "clean_loss") << '\n';
  } else {
    throw UsageError("--kind must be 'epochs' or 'gamma'");
  }
  if (a.out.empty()) {
    out << csv.str();
  } else {
    const auto parent = fs::path(a.out).parent_path();
    if (!parent.empty()) require_dir(parent.string());
    auto f = open_out(a.out);
    f << csv.str();
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Curriculum-guided adaptation of a hard-label black-box classifier", "cabb"};
  app.require_subcommand(0, 1);

  Common top;
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print every config key with its effective value and exit");
  add_common(&app, top);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic source/target feature files");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--seed", gen.common.seed, "data seed (default: first config seed)");
  gen_cmd->add_option("--out-dir", gen.out_dir, "existing directory for source.csv and target.csv")->required();

  TrainSourceArgs ts;
  auto* ts_cmd = app.add_subcommand("train-source", "train the source classifier and save it sealed");
  add_common(ts_cmd, ts.common);
  ts_cmd->add_option("--seed", ts.common.seed, "training seed (default: first config seed)");
  ts_cmd->add_option("--source", ts.source, "source feature file");
  ts_cmd->add_option("--out", ts.out, "predictor checkpoint to write");
  ts_cmd->add_option("--epochs", ts.epochs, "training epochs (default: source.epochs)");

  AdaptArgs ad;
  auto* ad_cmd = app.add_subcommand("adapt", "adapt two target branches and write metrics and summaries");
  add_common(ad_cmd, ad.common);
  auto* ad_seed = ad_cmd->add_option("--seed", ad.common.seed, "single adaptation seed");
  ad_cmd->add_option("--seeds", ad.seeds, "comma-separated seed sweep")->delimiter(',')->excludes(ad_seed);
  ad_cmd->add_option("--target", ad.target, "target feature file");
  ad_cmd->add_option("--predictor", ad.predictor, "sealed predictor checkpoint");
  ad_cmd->add_option("--out-dir", ad.out_dir, "existing output directory");
  ad_cmd->add_option("--ablate", ad.ablate, "no-curriculum | no-noisy-loss | no-entropy (repeatable)");
  ad_cmd->add_option("--jobs", ad.jobs, "worker threads for seed sweeps, one run per thread");

  InspectArgs in;
  auto* in_cmd = app.add_subcommand(
      "inspect-split", "per-sample clean/noisy split for one branch after distillation, scored by its peer");
  add_common(in_cmd, in.common);
  in_cmd->add_option("--seed", in.common.seed, "adaptation seed (default: first config seed)");
  in_cmd->add_option("--target", in.target, "target feature file");
  in_cmd->add_option("--predictor", in.predictor, "sealed predictor checkpoint");
  in_cmd->add_option("--branch", in.branch, "branch whose training split is shown (1 or 2)");
  in_cmd->add_option("--out", in.out, "per-sample CSV to write");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "convert a metrics JSON-lines file to CSV");
  rep_cmd->add_option("--metrics", rep.metrics, "metrics_seed<S>.jsonl or gamma_seed<S>.jsonl")->required();
  rep_cmd->add_option("--kind", rep.kind, "epochs (default) or gamma");
  rep_cmd->add_option("--out", rep.out, "CSV file to write (default: stdout)");
  rep_cmd->footer(kReportHelp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (print_config) {
      auto cfg = resolve_config(top);
      out << config::format(cfg);
      return kExitOk;
    }
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (ts_cmd->parsed()) return cmd_train_source(ts, out);
    if (ad_cmd->parsed()) return cmd_adapt(ad, out);
    if (in_cmd->parsed()) return cmd_inspect_split(in, out);
    if (rep_cmd->parsed()) return cmd_report(rep, out);
    out << app.help();
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cabb::cli
