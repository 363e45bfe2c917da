// Acceptance suite: one PASS/FAIL line per criterion, plus INFO lines that do
// not gate. Exit status is nonzero when any criterion fails.

#include "../support/oracles.hpp"

#include "cabb/blackbox.hpp"
#include "cabb/curriculum.hpp"
#include "cabb/data.hpp"
#include "cabb/losses.hpp"
#include "cabb/separation.hpp"
#include "cabb/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace cabb;

namespace {

// Pinned tolerances and bounds.
constexpr double kGradStep = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr int kGradSeeds = 20;
constexpr double kGradSeconds = 30;

constexpr int kJsdPairs = 1000;
constexpr double kJsdSymTol = 1e-12;
constexpr double kJsdRef = 0.3113;
constexpr double kJsdRefTol = 1e-4;
constexpr double kJsdSeconds = 5;

constexpr int kGmmN = 2000;
constexpr double kGmmMeanTol = 0.02;
constexpr double kGmmAgreement = 0.98;
constexpr double kGmmSeconds = 5;

constexpr int kCriterionSeeds = 5;
constexpr double kCriterionSlack = 0.01;
constexpr double kCriterionSeconds = 180;

constexpr double kGainPoints = 0.05;
constexpr double kRunSeconds = 120;
constexpr double kAblationSlack = 0.005;
constexpr double kAblationSeconds = 600;

constexpr double kClosedFormTol = 1e-9;
constexpr int kClosedFormSteps = 100;

const std::uint64_t kSeeds[] = {0, 1, 2};
constexpr int kSourceEpochs = 30;

int failures = 0;

void report(bool pass, const std::string& id, const std::string& what) {
  std::printf("%s [%s] %s\n", pass ? "PASS" : "FAIL", id.c_str(), what.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void info(const std::string& id, const std::string& what) {
  std::printf("INFO [%s] %s\n", id.c_str(), what.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// ---- 1 ----------------------------------------------------------------------

void criterion_gradients() {
  Stopwatch sw;
  using LossFn = std::function<losses::LossValue(const Matrix&)>;
  std::map<std::string, double> worst;
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    Engine rng(derive_seed(1234, {static_cast<std::uint64_t>(seed)}));
    const auto model = oracle::gradcheck_model(static_cast<std::uint64_t>(seed));
    const Matrix x = oracle::random_matrix(rng, 6, 3);
    const Matrix y = oracle::random_prob_rows(rng, 6, 4, 0.3);
    const std::vector<int> clean{0, 2, 3}, noisy{1, 4, 5};
    std::uniform_real_distribution<double> ug(0.0, 1.0);
    const double gamma = ug(rng);
    const double beta = 0.5 + ug(rng);
    auto gather = [](const Matrix& m, const std::vector<int>& rows) {
      Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
      return out;
    };
    const std::vector<std::pair<std::string, LossFn>> cases = {
        {"ce_clean", [&](const Matrix& p) { return losses::ce_clean(p, y); }},
        {"nce", [&](const Matrix& p) { return losses::nce(p, y); }},
        {"rce", [&](const Matrix& p) { return losses::rce(p, y); }},
        {"noisy_loss", [&](const Matrix& p) { return losses::noisy_loss(p, y, beta); }},
        {"entropy_loss", [&](const Matrix& p) { return losses::entropy_loss(p); }},
        {"eqdiv_loss", [&](const Matrix& p) { return losses::eqdiv_loss(p); }},
        {"total_loss",
         [&](const Matrix& p) {
           const auto tc = losses::scatter_rows(losses::ce_clean(gather(p, clean), gather(y, clean)), clean, p.rows());
           const auto tn = losses::scatter_rows(losses::noisy_loss(gather(p, noisy), gather(y, noisy), beta), noisy, p.rows());
           return losses::total_loss(tc, tn, losses::entropy_loss(p), losses::eqdiv_loss(p), gamma);
         }},
    };
    for (const auto& [name, fn] : cases) {
      const auto analytic = oracle::analytic_param_grad(model, x, fn);
      const auto numeric = oracle::numeric_param_grad(model, x, [&](const Matrix& p) { return fn(p).value; }, kGradStep);
      worst[name] = std::max(worst[name], oracle::relative_error(analytic, numeric));
    }
  }
  double max_err = 0;
  std::string detail;
  for (const auto& [name, e] : worst) {
    max_err = std::max(max_err, e);
    detail += fmt(" %s=%.1e", name.c_str(), e);
  }
  const double t = sw.seconds();
  report(max_err < kGradRelTol && t < kGradSeconds, "1",
         fmt("gradient check, %d seeds x 7 losses, max rel err %.2e (< %.0e);%s; %.2f s (< %.0f s)", kGradSeeds, max_err,
             kGradRelTol, detail.c_str(), t, kGradSeconds));
}

// ---- 2 ----------------------------------------------------------------------

void criterion_jsd() {
  Stopwatch sw;
  Engine rng(2);
  double max_asym = 0, lo = 1, hi = 0, max_oracle_gap = 0;
  bool zero_iff_equal = true;
  int one_hot_pairs = 0;
  for (int i = 0; i < kJsdPairs; ++i) {
    const int c = 2 + static_cast<int>(rng() % 8);
    const auto a = oracle::random_prob(rng, c, 0.25);
    const auto b = i % 10 == 0 ? a : oracle::random_prob(rng, c, 0.25);
    if (*std::max_element(a.begin(), a.end()) == 1.0 || *std::max_element(b.begin(), b.end()) == 1.0) ++one_hot_pairs;
    const double ab = separation::jsd(a, b), ba = separation::jsd(b, a);
    max_asym = std::max(max_asym, std::abs(ab - ba));
    lo = std::min(lo, ab);
    hi = std::max(hi, ab);
    max_oracle_gap = std::max(max_oracle_gap, std::abs(ab - oracle::jsd_by_entropy(a, b)));
    if ((a == b) != (ab == 0.0)) zero_iff_equal = false;
    if (separation::jsd(a, a) != 0.0) zero_iff_equal = false;
  }
  const std::vector<double> e{1, 0}, h{0.5, 0.5};
  const double ref = separation::jsd(e, h);
  const double t = sw.seconds();
  const bool pass = max_asym < kJsdSymTol && lo >= 0 && hi <= 1 && zero_iff_equal &&
                    std::abs(ref - kJsdRef) <= kJsdRefTol && std::abs(ref - oracle::jsd_by_entropy(e, h)) < 1e-12 &&
                    t < kJsdSeconds;
  report(pass, "2",
         fmt("JSD over %d pairs (%d with a one-hot side): max asymmetry %.1e, range [%.4f, %.4f], zero-iff-equal %s, "
             "oracle gap %.1e; jsd((1,0),(.5,.5)) = %.6f (target %.4f +- %.0e); %.3f s (< %.0f s)",
             kJsdPairs, one_hot_pairs, max_asym, lo, hi, zero_iff_equal ? "yes" : "no", max_oracle_gap, ref, kJsdRef,
             kJsdRefTol, t, kJsdSeconds));
}

// ---- 3 ----------------------------------------------------------------------

void criterion_gmm() {
  Stopwatch sw;
  Engine rng(3);
  std::normal_distribution<double> lo(0.2, 0.05), hi(0.7, 0.05);
  std::vector<double> scores;
  std::vector<int> truth;
  for (int i = 0; i < kGmmN; ++i) {
    const int c = i % 2;
    scores.push_back(std::clamp(c ? hi(rng) : lo(rng), 0.0, 1.0));
    truth.push_back(c);
  }
  const auto fit = separation::fit_gmm(scores);
  const auto s = separation::split(scores, fit, 0.5);
  std::vector<int> assigned(scores.size(), 1);
  for (int i : s.clean_idx) assigned[static_cast<std::size_t>(i)] = 0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) agree += assigned[i] == truth[i];
  const double agreement = static_cast<double>(agree) / static_cast<double>(scores.size());
  bool monotone = true;
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
    if (fit.log_likelihood[i] < fit.log_likelihood[i - 1]) monotone = false;
  const double t = sw.seconds();
  const bool pass = std::abs(fit.mean_low - 0.2) <= kGmmMeanTol && std::abs(fit.mean_high - 0.7) <= kGmmMeanTol &&
                    agreement >= kGmmAgreement && monotone && t < kGmmSeconds;
  report(pass, "3",
         fmt("GMM on %d scores: means (%.4f, %.4f) vs (0.2, 0.7) +- %.2f, agreement %.4f (>= %.2f), "
             "log-likelihood non-decreasing over %zu iterations: %s; %.3f s (< %.0f s)",
             kGmmN, fit.mean_low, fit.mean_high, kGmmMeanTol, agreement, kGmmAgreement, fit.log_likelihood.size(),
             monotone ? "yes" : "no", t, kGmmSeconds));
}

// ---- 4 ----------------------------------------------------------------------

double top_k_precision(const std::vector<double>& scores, std::size_t k, const std::vector<int>& pl,
                       const std::vector<int>& truth) {
  return separation::clean_set_precision(separation::split_lowest(scores, k), pl, truth);
}

void criterion_split_direction() {
  Stopwatch sw;
  double jsd_sum = 0, ce_sum = 0;
  int n = 0;
  std::string detail;
  for (int seed = 0; seed < kCriterionSeeds; ++seed) {
    const auto useed = static_cast<std::uint64_t>(seed);
    const auto [src, tgt] = data::make_shifted_pair(data::ShiftSpec{}, useed);
    const auto bb = blackbox::train_source(src, kSourceEpochs, useed);
    const auto prep = trainer::prepare(trainer::AdaptConfig{}, bb, tgt, useed);
    const auto pl = prep.store.hard_labels();
    for (const auto& br : prep.branches) {
      const Matrix p = nnet::predict_proba(br.model, tgt.features);
      const auto js = separation::jsd_scores(prep.store.labels(), p);
      const auto ce = separation::ce_scores(prep.store.labels(), p);
      const auto k = separation::split(js, separation::fit_gmm(js), 0.5).clean_idx.size();
      const double pj = top_k_precision(js, k, pl, tgt.labels);
      const double pc = top_k_precision(ce, k, pl, tgt.labels);
      jsd_sum += pj;
      ce_sum += pc;
      ++n;
      detail += fmt(" s%d/b%d k=%zu %.3f|%.3f", seed, br.id, k, pj, pc);
    }
  }
  const double mj = jsd_sum / n, mc = ce_sum / n;
  const double t = sw.seconds();
  report(mj >= mc - kCriterionSlack && t < kCriterionSeconds, "4",
         fmt("split criterion after distillation, %d seeds x 2 branches at matched k: JSD precision %.4f vs CE %.4f "
             "(need JSD >= CE - %.2f); per run JSD|CE:%s; %.1f s (< %.0f s)",
             kCriterionSeeds, mj, mc, kCriterionSlack, detail.c_str(), t, kCriterionSeconds));
}

// ---- 5, 6, 7b, 9b -----------------------------------------------------------

struct Observed {
  trainer::RunResult result;
  double seconds = 0;
  bool gamma_ok = true;
  std::uint64_t queries = 0;
  std::set<std::string> calls;
  int init_calls = 0;
};

Observed observed_run(const trainer::AdaptConfig& cfg, const blackbox::BlackBoxPredictor& bb,
                      const data::LabeledSet& tgt, std::uint64_t seed) {
  Observed o;
  std::mutex mu;
  std::map<int, double> last{{1, 1.0}, {2, 1.0}};
  trainer::TrainerHooks hooks;
  hooks.on_iteration = [&](const trainer::IterationEvent& e) {
    std::lock_guard lock(mu);
    if (e.gamma > last[e.branch] || e.gamma < 0 || e.gamma > 1) o.gamma_ok = false;
    last[e.branch] = e.gamma;
  };
  hooks.on_blackbox_call = [&](std::string_view what) {
    std::lock_guard lock(mu);
    o.calls.emplace(what);
    if (what == "init_store") ++o.init_calls;
  };
  const auto q0 = bb.query_count();
  Stopwatch sw;
  o.result = trainer::run(cfg, bb, tgt, seed, hooks);
  o.seconds = sw.seconds();
  o.queries = bb.query_count() - q0;
  return o;
}

struct Variant {
  const char* name;
  void (*apply)(trainer::AdaptConfig&);
};

const Variant kVariants[] = {
    {"full", [](trainer::AdaptConfig&) {}},
    {"no-curriculum", [](trainer::AdaptConfig& c) { c.use_curriculum = false; }},
    {"no-L_tn", [](trainer::AdaptConfig& c) { c.use_noisy_loss = false; }},
    {"no-L_ent", [](trainer::AdaptConfig& c) { c.use_entropy_loss = false; }},
};

struct DeskResults {
  // acc[variant][seed]
  std::vector<std::vector<double>> acc;
  std::vector<double> source_only;
  double max_run_seconds = 0;
  double total_seconds = 0;
  bool gamma_ok = true;
  bool seal_ok = true;
  int runs = 0;
};

DeskResults desk_runs(const data::ShiftSpec& spec, std::size_t variants) {
  DeskResults r;
  r.acc.assign(variants, {});
  for (auto seed : kSeeds) {
    const auto [src, tgt] = data::make_shifted_pair(spec, seed);
    const auto bb = blackbox::train_source(src, kSourceEpochs, seed);
    for (std::size_t v = 0; v < variants; ++v) {
      trainer::AdaptConfig cfg;
      kVariants[v].apply(cfg);
      const auto o = observed_run(cfg, bb, tgt, seed);
      r.acc[v].push_back(o.result.mean_acc);
      if (v == 0) r.source_only.push_back(o.result.source_only_acc);
      r.max_run_seconds = std::max(r.max_run_seconds, o.seconds);
      r.total_seconds += o.seconds;
      r.gamma_ok = r.gamma_ok && o.gamma_ok;
      r.seal_ok = r.seal_ok && o.queries == 1 && o.init_calls == 1 &&
                  o.calls == std::set<std::string>{"init_store", "ema_refresh"};
      ++r.runs;
    }
  }
  return r;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string per_seed(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt("%s%.4f", s.empty() ? "" : "/", x);
  return s;
}

// ---- 7a ---------------------------------------------------------------------

bool closed_form_ok(double& worst) {
  worst = 0;
  for (double alpha : {2e-4, 2e-3, 0.05, 0.5}) {
    for (double loss : {0.01, 0.7, 3.0}) {
      curriculum::CurriculumState s;
      s.alpha = alpha;
      s = curriculum::gamma_step(s, loss);
      for (int n = 1; n <= kClosedFormSteps; ++n) {
        s = curriculum::gamma_step(s, loss);
        worst = std::max(worst, std::abs(s.gamma - std::pow(1 - alpha * std::exp(-1.0), n)));
      }
    }
  }
  return worst < kClosedFormTol;
}

// ---- 8 ----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int sh(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return rc;
}

void criterion_determinism() {
  Stopwatch sw;
  const fs::path base = fs::temp_directory_path() / fmt("cabb_accept_%d", static_cast<int>(std::random_device{}() % 1000000));
  fs::create_directories(base / "run_a");
  fs::create_directories(base / "run_b");
  const std::string exe = CABB_EXE;
  const std::string d = base.string();
  bool ok = sh(exe + " gen-data --seed 5 --out-dir " + d) == 0 &&
            sh(exe + " train-source --seed 5 --source " + d + "/source.csv --out " + d + "/pred.txt") == 0;
  const std::string adapt = exe + " adapt --seeds 5,6 --target " + d + "/target.csv --predictor " + d + "/pred.txt";
  ok = ok && sh(adapt + " --out-dir " + d + "/run_a") == 0 && sh(adapt + " --out-dir " + d + "/run_b") == 0;
  int files = 0;
  bool identical = ok;
  if (ok) {
    for (const char* f : {"metrics_seed5.jsonl", "summary_seed5.json", "gamma_seed5.jsonl", "metrics_seed6.jsonl",
                          "summary_seed6.json", "gamma_seed6.jsonl", "aggregate.json"}) {
      const auto a = slurp(base / "run_a" / f), b = slurp(base / "run_b" / f);
      identical = identical && !a.empty() && a == b;
      ++files;
    }
  }
  fs::remove_all(base);
  report(ok && identical, "8",
         fmt("two `cabb adapt` invocations (seeds 5,6): %d output files byte-identical: %s; %.1f s", files,
             identical ? "yes" : "no", sw.seconds()));
}

// ---- 9a ---------------------------------------------------------------------

template <class T> concept leaks_model = requires(const T& t) { t.model(); };
template <class T> concept leaks_params = requires(const T& t) { t.flat_params(); };
template <class T> concept leaks_layers = requires(const T& t) { t.layers(); };
template <class T> concept leaks_proba = requires(const T& t, const Matrix& x) { t.predict_proba(x); };
template <class T> concept leaks_logits = requires(const T& t, const Matrix& x) { t.logits(x); };
template <class T> concept leaks_soft = requires(const T& t, const Matrix& x) { t.predict_soft(x); };
constexpr bool kInterfaceSealed =
    !leaks_model<blackbox::BlackBoxPredictor> && !leaks_params<blackbox::BlackBoxPredictor> &&
    !leaks_layers<blackbox::BlackBoxPredictor> && !leaks_proba<blackbox::BlackBoxPredictor> &&
    !leaks_logits<blackbox::BlackBoxPredictor> && !leaks_soft<blackbox::BlackBoxPredictor> &&
    !std::is_copy_constructible_v<blackbox::BlackBoxPredictor>;

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion_gradients();
  criterion_jsd();
  criterion_gmm();
  criterion_split_direction();

  const auto desk = desk_runs(data::ShiftSpec{}, 4);
  const double so = mean(desk.source_only), full = mean(desk.acc[0]);
  report(full >= so + kGainPoints && desk.max_run_seconds < kRunSeconds, "5",
         fmt("desk task (C=6, rotation %.0f deg), seeds 0-2: source-only %.4f (%s), full %.4f (%s), gain %+.2f points "
             "(need >= %.0f); slowest run %.1f s (< %.0f s)",
             data::ShiftSpec{}.rotation_deg, so, per_seed(desk.source_only).c_str(), full,
             per_seed(desk.acc[0]).c_str(), 100 * (full - so), 100 * kGainPoints, desk.max_run_seconds, kRunSeconds));

  const double no_cur = mean(desk.acc[1]), no_tn = mean(desk.acc[2]), no_ent = mean(desk.acc[3]);
  const bool ablation_time = desk.total_seconds < kAblationSeconds;
  report(full >= no_cur - kAblationSlack && ablation_time, "6a",
         fmt("full %.4f vs no-curriculum (gamma = 0.5) %.4f (%s); need full >= variant - %.1f points", full, no_cur,
             per_seed(desk.acc[1]).c_str(), 100 * kAblationSlack));
  report(full >= no_tn - kAblationSlack && ablation_time, "6b",
         fmt("full %.4f vs no-L_tn %.4f (%s); need full >= variant - %.1f points", full, no_tn,
             per_seed(desk.acc[2]).c_str(), 100 * kAblationSlack));
  int worst_seeds = 0;
  for (std::size_t s = 0; s < std::size(kSeeds); ++s)
    if (desk.acc[1][s] < std::min(desk.acc[2][s], desk.acc[3][s])) ++worst_seeds;
  report(worst_seeds >= 2 && ablation_time, "6c",
         fmt("no-curriculum is the most degraded ablation on %d of 3 seeds (need >= 2); no-L_ent %.4f (%s); "
             "%d runs in %.1f s (< %.0f s)",
             worst_seeds, no_ent, per_seed(desk.acc[3]).c_str(), desk.runs, desk.total_seconds, kAblationSeconds));

  double worst = 0;
  const bool cf = closed_form_ok(worst);
  report(cf && desk.gamma_ok, "7",
         fmt("curriculum closed form over %d steps, max error %.1e (< %.0e); gamma non-increasing in [0,1] on all "
             "%d logged runs: %s",
             kClosedFormSteps, worst, kClosedFormTol, desk.runs, desk.gamma_ok ? "yes" : "no"));

  criterion_determinism();

  const int nm_rc = std::system("sh " CABB_SEAL_SCRIPT " nm " CABB_LIB " > /dev/null 2>&1");
  report(kInterfaceSealed && nm_rc == 0 && desk.seal_ok, "9",
         fmt("black-box seal: no parameter/probability members %s, exported symbols allowlisted %s, every run made "
             "exactly one hard-label query batch and only init_store/ema_refresh crossed the boundary %s",
             kInterfaceSealed ? "yes" : "no", nm_rc == 0 ? "yes" : "no", desk.seal_ok ? "yes" : "no"));

  // Literal 35-degree geometry for reference; the default desk task uses a smaller rotation.
  data::ShiftSpec literal;
  literal.rotation_deg = 35.0;
  const auto lit = desk_runs(literal, 1);
  info("5@35deg", fmt("rotation 35 deg, seeds 0-2: source-only %.4f (%s), full %.4f (%s), gain %+.2f points",
                      mean(lit.source_only), per_seed(lit.source_only).c_str(), mean(lit.acc[0]),
                      per_seed(lit.acc[0]).c_str(), 100 * (mean(lit.acc[0]) - mean(lit.source_only))));

  std::printf("%s: %d criterion line(s) failed\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}
