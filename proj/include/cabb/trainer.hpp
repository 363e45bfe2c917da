#pragma once

#include "cabb/blackbox.hpp"
#include "cabb/curriculum.hpp"
#include "cabb/data.hpp"
#include "cabb/nnet.hpp"
#include "cabb/pseudolabel.hpp"
#include "cabb/separation.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

// Dual-branch curriculum adaptation against a hard-label black box:
// distillation, per-epoch cross-branch clean/noisy separation, curriculum
// guided updates of each branch, and EMA refresh of the pseudolabel store.

namespace cabb::trainer {

struct AdaptConfig {
  int epochs = 50;
  int iter_distill = -1;  // -1: three passes over the target set
  int iter_adapt = -1;    // -1: one pass per epoch
  int batch_size = 64;
  double delta_t = 0.5;
  double beta = 1.0;
  double alpha = 2e-3;
  double gamma0 = 1.0;
  double pinned_gamma = 0.5;  // used when use_curriculum is off
  double temperature = 0.5;
  pseudolabel::AugmentSpec augment;
  double ema_momentum = 0.6;
  int refresh_interval = 1;
  double label_smoothing = 0.1;
  nnet::SgdConfig sgd;
  std::vector<int> hidden{64, 64};
  bool use_curriculum = true;
  bool use_noisy_loss = true;
  bool use_entropy_loss = true;
  bool distill_every_epoch = false;
  bool parallel_branches = false;

  void validate() const;
  int distill_iterations(std::size_t n_target) const;
  int adapt_iterations(std::size_t n_target) const;
};

struct LossBreakdown {
  double tc = 0.0;
  double tn = 0.0;
  double ent = 0.0;
  double eqdiv = 0.0;
  double tot = 0.0;
};

struct MetricsRecord {
  int epoch = 0;
  int branch = 0;
  double target_accuracy = 0.0;
  std::size_t clean_set_size = 0;
  double clean_set_precision = 0.0;
  double gamma = 0.0;
  LossBreakdown losses;
  bool empty_clean_set = false;
};

struct Branch {
  int id = 0;  // 1 or 2
  nnet::MlpModel model;
  nnet::SgdState optimizer;
  curriculum::CurriculumState curriculum;
};

struct SplitEvent {
  int epoch;
  int trained_branch;
  int scored_by_branch;
  const separation::SampleSplit& split;
};

struct IterationEvent {
  int epoch;
  int branch;
  int iteration;
  double gamma;
  double clean_loss;
};

/// Instrumentation. In parallel_branches mode the callbacks may fire from two
/// threads at once.
struct TrainerHooks {
  std::function<void(const SplitEvent&)> on_split;
  std::function<void(const IterationEvent&)> on_iteration;
  std::function<void(std::string_view)> on_blackbox_call;
};

struct Prepared {
  std::array<Branch, 2> branches;
  blackbox::PseudolabelStore store;
  double source_only_acc = 0.0;
};

struct RunResult {
  std::array<Branch, 2> branches;
  std::vector<MetricsRecord> metrics;  // branch 1 then branch 2 for each epoch
  double source_only_acc = 0.0;
  double branch1_acc = 0.0;
  double branch2_acc = 0.0;
  double mean_acc = 0.0;
};

/// Fraction of rows whose argmax prediction equals the label.
double evaluate(const nnet::MlpModel& model, const data::LabeledSet& set);

/// Fresh branches, the black-box store, and the initial distillation. This is
/// the state every adaptation epoch starts from.
Prepared prepare(const AdaptConfig& config, const blackbox::BlackBoxPredictor& bb,
                 const data::LabeledSet& target, std::uint64_t seed, const TrainerHooks& hooks = {});

/// `iters` CE steps per branch against the label-smoothed store; each branch
/// draws its own batch order.
void distill(std::array<Branch, 2>& branches, const data::LabeledSet& target,
             const blackbox::PseudolabelStore& store, int iters, const AdaptConfig& config,
             std::uint64_t seed, std::uint64_t round = 0);

/// Clean/noisy split of the whole target set for a branch, scored by `peer`.
separation::SampleSplit peer_split(const nnet::MlpModel& peer, const data::LabeledSet& target,
                                   const blackbox::PseudolabelStore& store, double delta_t);

/// One adaptation epoch of `own`. The split comes from `split_peer`; the
/// ensemble pseudolabels average `own` and `ensemble_peer`. Only `own` changes.
MetricsRecord adapt_epoch(Branch& own, const nnet::MlpModel& split_peer, int split_peer_id,
                          const nnet::MlpModel& ensemble_peer, const data::LabeledSet& target,
                          const blackbox::PseudolabelStore& store, const AdaptConfig& config,
                          std::uint64_t seed, int epoch, const TrainerHooks& hooks = {});

/// Soft ensemble pseudolabels for every target sample.
Matrix ensemble_for_target(const std::array<Branch, 2>& branches, const data::LabeledSet& target,
                           const AdaptConfig& config, std::uint64_t seed, int epoch);

RunResult run(const AdaptConfig& config, const blackbox::BlackBoxPredictor& bb,
              const data::LabeledSet& target, std::uint64_t seed, const TrainerHooks& hooks = {});

}  // namespace cabb::trainer
