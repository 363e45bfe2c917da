#include "cabb/trainer.hpp"

#include "cabb/errors.hpp"
#include "cabb/losses.hpp"
#include "cabb/rng.hpp"

#include <cmath>
#include <string>
#include <thread>

namespace cabb::trainer {
namespace {

constexpr std::uint64_t kBranchInit = 0xb7;
constexpr std::uint64_t kDistillBatches = 0xd15;
constexpr std::uint64_t kAdaptBatches = 0xada;
constexpr std::uint64_t kAugment = 0xe45;

void notify_blackbox(const TrainerHooks& hooks, std::string_view what) {
  if (hooks.on_blackbox_call) hooks.on_blackbox_call(what);
}

Matrix gather(const Matrix& m, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void check_finite(double v, const char* what, int branch, int epoch) {
  if (!std::isfinite(v))
    throw TrainingError(std::string(what) + " became non-finite (branch " + std::to_string(branch) +
                        ", epoch " + std::to_string(epoch) + ")");
}

pseudolabel::SharpenSpec sharpen_spec(const AdaptConfig& c) { return {c.temperature}; }

}  // namespace

void AdaptConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be nonnegative");
  if (iter_distill < -1 || iter_adapt < -1) throw ValidationError("iteration counts must be >= 0 (or -1 for auto)");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(delta_t > 0 && delta_t < 1)) throw ValidationError("delta_t must lie in (0,1)");
  if (beta < 0) throw ValidationError("beta must be nonnegative");
  if (alpha < 0 || alpha >= 1) throw ValidationError("alpha must lie in [0,1)");
  if (gamma0 < 0 || gamma0 > 1 || pinned_gamma < 0 || pinned_gamma > 1)
    throw ValidationError("gamma values must lie in [0,1]");
  if (!(temperature > 0 && temperature <= 1)) throw ValidationError("temperature must lie in (0,1]");
  augment.validate();
  if (ema_momentum < 0 || ema_momentum > 1) throw ValidationError("ema_momentum must lie in [0,1]");
  if (refresh_interval < 1) throw ValidationError("refresh_interval must be >= 1");
  if (label_smoothing < 0 || label_smoothing >= 1) throw ValidationError("label_smoothing must lie in [0,1)");
  sgd.validate();
  for (int h : hidden)
    if (h < 1) throw ValidationError("hidden widths must be positive");
}

int AdaptConfig::distill_iterations(std::size_t n) const {
  if (iter_distill >= 0) return iter_distill;
  const auto per_pass = static_cast<int>((n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
  return 3 * per_pass;
}

int AdaptConfig::adapt_iterations(std::size_t n) const {
  if (iter_adapt >= 0) return iter_adapt;
  return static_cast<int>((n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

double evaluate(const nnet::MlpModel& model, const data::LabeledSet& set) {
  if (set.size() == 0) return 0.0;
  const Matrix z = nnet::logits(model, set.features);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    if (static_cast<int>(argmax(row_span(z, i))) == set.labels[static_cast<std::size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

void distill(std::array<Branch, 2>& branches, const data::LabeledSet& target,
             const blackbox::PseudolabelStore& store, int iters, const AdaptConfig& config,
             std::uint64_t seed, std::uint64_t round) {
  if (store.size() != target.size()) throw ContractError("store length differs from the target set");
  if (iters <= 0) return;
  const auto c = store.class_count();
  const double ls = config.label_smoothing;
  const Matrix targets = (1.0 - ls) * store.labels() + Matrix::Constant(store.labels().rows(), c, ls / c);

  for (auto& br : branches) {
    const auto batch_seed = derive_seed(seed, {kDistillBatches, static_cast<std::uint64_t>(br.id), round});
    int done = 0;
    for (std::uint64_t pass = 0; done < iters; ++pass) {
      for (const auto& idx : data::minibatches(target, static_cast<std::size_t>(config.batch_size), batch_seed, pass)) {
        if (done >= iters) break;
        const Matrix x = target.rows(idx);
        auto fw = nnet::forward(br.model, x);
        const auto loss = losses::ce_clean(nnet::softmax_rows(fw.logits), gather(targets, idx));
        check_finite(loss.value, "distillation loss", br.id, 0);
        nnet::sgd_step(br.model, nnet::backward(br.model, fw.cache, loss.grad), br.optimizer, config.sgd);
        ++done;
      }
    }
  }
}

Prepared prepare(const AdaptConfig& config, const blackbox::BlackBoxPredictor& bb,
                 const data::LabeledSet& target, std::uint64_t seed, const TrainerHooks& hooks) {
  config.validate();
  data::validate(target);
  if (target.dim() != bb.input_dim()) throw DimensionError("target width differs from the predictor's input width");

  notify_blackbox(hooks, "init_store");
  auto store = blackbox::init_store(bb, target, config.ema_momentum, config.refresh_interval);

  Prepared p{{}, std::move(store), 0.0};
  const auto hard = p.store.hard_labels();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hard.size(); ++i)
    if (hard[i] == target.labels[i]) ++hits;
  p.source_only_acc = static_cast<double>(hits) / static_cast<double>(target.size());

  for (int b = 0; b < 2; ++b) {
    auto& br = p.branches[static_cast<std::size_t>(b)];
    br.id = b + 1;
    br.model = nnet::MlpModel::make(target.dim(), config.hidden, target.class_count,
                                    derive_seed(seed, {kBranchInit, static_cast<std::uint64_t>(br.id)}));
    br.curriculum.gamma = config.gamma0;
    br.curriculum.alpha = config.alpha;
  }
  distill(p.branches, target, p.store, config.distill_iterations(target.size()), config, seed, 0);
  return p;
}

separation::SampleSplit peer_split(const nnet::MlpModel& peer, const data::LabeledSet& target,
                                   const blackbox::PseudolabelStore& store, double delta_t) {
  const auto scores = separation::jsd_scores(store.labels(), nnet::predict_proba(peer, target.features));
  const auto fit = separation::fit_gmm(scores);
  return separation::split(scores, fit, delta_t);
}

Matrix ensemble_for_target(const std::array<Branch, 2>& branches, const data::LabeledSet& target,
                           const AdaptConfig& config, std::uint64_t seed, int epoch) {
  std::vector<int> all(target.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return pseudolabel::ensemble_pseudolabels(target.features, all, branches[0].model, branches[1].model,
                                            config.augment, sharpen_spec(config),
                                            derive_seed(seed, {kAugment, static_cast<std::uint64_t>(epoch)}));
}

MetricsRecord adapt_epoch(Branch& own, const nnet::MlpModel& split_peer, int split_peer_id,
                          const nnet::MlpModel& ensemble_peer, const data::LabeledSet& target,
                          const blackbox::PseudolabelStore& store, const AdaptConfig& config,
                          std::uint64_t seed, int epoch, const TrainerHooks& hooks) {
  if (store.size() != target.size()) throw ContractError("store length differs from the target set");
  const auto split = peer_split(split_peer, target, store, config.delta_t);
  if (hooks.on_split) hooks.on_split(SplitEvent{epoch, own.id, split_peer_id, split});

  MetricsRecord rec;
  rec.epoch = epoch;
  rec.branch = own.id;
  rec.clean_set_size = split.clean_idx.size();
  rec.clean_set_precision = separation::clean_set_precision(split, store.hard_labels(), target.labels);
  rec.empty_clean_set = split.clean_idx.empty();

  std::vector<char> is_clean(target.size(), 0);
  for (int i : split.clean_idx) is_clean[static_cast<std::size_t>(i)] = 1;

  const int iters = config.adapt_iterations(target.size());
  const auto batch_seed = derive_seed(seed, {kAdaptBatches, static_cast<std::uint64_t>(own.id)});
  const auto aug_seed = derive_seed(seed, {kAugment, static_cast<std::uint64_t>(epoch)});
  const auto sharp = sharpen_spec(config);
  const nnet::MlpModel& first = own.id == 1 ? own.model : ensemble_peer;
  const nnet::MlpModel& second = own.id == 1 ? ensemble_peer : own.model;

  LossBreakdown sum;
  int done = 0;
  for (std::uint64_t pass = 0; done < iters; ++pass) {
    const auto round = static_cast<std::uint64_t>(epoch) * 1000003ULL + pass;
    for (const auto& idx : data::minibatches(target, static_cast<std::size_t>(config.batch_size), batch_seed, round)) {
      if (done >= iters) break;
      const Matrix x = target.rows(idx);
      const auto b = x.rows(), c = static_cast<Eigen::Index>(target.class_count);
      const Matrix y = pseudolabel::ensemble_pseudolabels(x, idx, first, second, config.augment, sharp, aug_seed);

      auto fw = nnet::forward(own.model, x);
      const Matrix p = nnet::softmax_rows(fw.logits);

      std::vector<int> clean_rows, noisy_rows;
      for (std::size_t r = 0; r < idx.size(); ++r)
        (is_clean[static_cast<std::size_t>(idx[r])] ? clean_rows : noisy_rows).push_back(static_cast<int>(r));

      auto l_tc = losses::LossValue::zero(b, c);
      if (!clean_rows.empty())
        l_tc = losses::scatter_rows(losses::ce_clean(gather(p, clean_rows), gather(y, clean_rows)), clean_rows, b);
      auto l_tn = losses::LossValue::zero(b, c);
      if (config.use_noisy_loss && !noisy_rows.empty())
        l_tn = losses::scatter_rows(
            losses::noisy_loss(gather(p, noisy_rows), gather(y, noisy_rows), config.beta), noisy_rows, b);
      auto l_ent = config.use_entropy_loss ? losses::entropy_loss(p) : losses::LossValue::zero(b, c);
      const auto l_div = losses::eqdiv_loss(p);

      double gamma = config.pinned_gamma;
      if (config.use_curriculum) {
        if (!clean_rows.empty()) own.curriculum = curriculum::gamma_step(own.curriculum, l_tc.value);
        gamma = own.curriculum.gamma;
      }
      const auto total = losses::total_loss(l_tc, l_tn, l_ent, l_div, gamma);
      check_finite(total.value, "adaptation loss", own.id, epoch);
      if (hooks.on_iteration) hooks.on_iteration(IterationEvent{epoch, own.id, done, gamma, l_tc.value});

      nnet::sgd_step(own.model, nnet::backward(own.model, fw.cache, total.grad), own.optimizer, config.sgd);

      sum.tc += l_tc.value;
      sum.tn += l_tn.value;
      sum.ent += l_ent.value;
      sum.eqdiv += l_div.value;
      sum.tot += total.value;
      ++done;
    }
  }
  if (done > 0) {
    rec.losses = {sum.tc / done, sum.tn / done, sum.ent / done, sum.eqdiv / done, sum.tot / done};
  }
  rec.gamma = config.use_curriculum ? own.curriculum.gamma : config.pinned_gamma;
  rec.target_accuracy = evaluate(own.model, target);
  return rec;
}

RunResult run(const AdaptConfig& config, const blackbox::BlackBoxPredictor& bb,
              const data::LabeledSet& target, std::uint64_t seed, const TrainerHooks& hooks) {
  auto prep = prepare(config, bb, target, seed, hooks);
  auto& [b1, b2] = prep.branches;
  auto& store = prep.store;
  RunResult res;
  res.source_only_acc = prep.source_only_acc;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.distill_every_epoch && epoch > 1)
      distill(prep.branches, target, store, config.distill_iterations(target.size()), config, seed,
              static_cast<std::uint64_t>(epoch));

    const nnet::MlpModel snap1 = b1.model;
    const nnet::MlpModel snap2 = b2.model;
    MetricsRecord r1, r2;
    if (config.parallel_branches) {
      std::thread worker([&] { r2 = adapt_epoch(b2, snap1, 1, snap1, target, store, config, seed, epoch, hooks); });
      try {
        r1 = adapt_epoch(b1, snap2, 2, snap2, target, store, config, seed, epoch, hooks);
      } catch (...) {
        worker.join();
        throw;
      }
      worker.join();
    } else {
      r1 = adapt_epoch(b1, snap2, 2, b2.model, target, store, config, seed, epoch, hooks);
      r2 = adapt_epoch(b2, snap1, 1, b1.model, target, store, config, seed, epoch, hooks);
    }
    res.metrics.push_back(r1);
    res.metrics.push_back(r2);

    if (epoch % config.refresh_interval == 0) {
      notify_blackbox(hooks, "ema_refresh");
      blackbox::ema_refresh(store, ensemble_for_target(prep.branches, target, config, seed, epoch));
    }
  }

  res.branch1_acc = evaluate(b1.model, target);
  res.branch2_acc = evaluate(b2.model, target);
  res.mean_acc = 0.5 * (res.branch1_acc + res.branch2_acc);
  res.branches = std::move(prep.branches);
  return res;
}

}  // namespace cabb::trainer
