#pragma once

#include "cabb/data.hpp"
#include "cabb/nnet.hpp"
#include "cabb/types.hpp"

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

// The source model behind a hard-label-only interface, plus the store of
// source pseudolabels for the target set.

namespace cabb::blackbox {

struct SourceTrainConfig {
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> hidden{64, 64};

  void validate() const;
};

class BlackBoxPredictor;

BlackBoxPredictor train_source(const data::LabeledSet& source, int epochs, std::uint64_t seed,
                               const SourceTrainConfig& config = {});

/// Owns the source model. Only argmax class indices leave this object; there
/// is no accessor for parameters, logits or probabilities.
class BlackBoxPredictor {
 public:
  BlackBoxPredictor(BlackBoxPredictor&&) noexcept = default;
  BlackBoxPredictor& operator=(BlackBoxPredictor&&) noexcept = default;
  BlackBoxPredictor(const BlackBoxPredictor&) = delete;
  BlackBoxPredictor& operator=(const BlackBoxPredictor&) = delete;

  /// One class index per row. Throws DimensionError on a width mismatch.
  std::vector<int> predict_hard(const Matrix& batch) const;

  int input_dim() const;
  int class_count() const;

  /// Number of predict_hard calls served so far.
  std::uint64_t query_count() const;

  /// Model checkpoint flagged sealed.
  void save(std::ostream& out) const;
  /// Rejects checkpoints that are not flagged sealed.
  static BlackBoxPredictor load(std::istream& in);

 private:
  explicit BlackBoxPredictor(nnet::MlpModel model);

  nnet::MlpModel model_;
  std::unique_ptr<std::atomic<std::uint64_t>> queries_;

  friend BlackBoxPredictor train_source(const data::LabeledSet&, int, std::uint64_t,
                                        const SourceTrainConfig&);
};

/// Per-target-sample soft labels, initialised one-hot from the black box and
/// blended towards target-model predictions by EMA.
class PseudolabelStore {
 public:
  PseudolabelStore(Matrix labels, double ema_momentum, int refresh_interval_epochs = 1);

  const Matrix& labels() const { return labels_; }
  std::span<const double> row(std::size_t i) const {
    return row_span(labels_, static_cast<Eigen::Index>(i));
  }
  std::size_t size() const { return static_cast<std::size_t>(labels_.rows()); }
  int class_count() const { return static_cast<int>(labels_.cols()); }
  double ema_momentum() const { return ema_momentum_; }
  int refresh_interval_epochs() const { return refresh_interval_; }

  std::vector<int> hard_labels() const;

  /// Text matrix: `N,C,momentum,interval` header then one row per sample.
  void save(std::ostream& out) const;
  static PseudolabelStore load(std::istream& in);

 private:
  friend void ema_refresh(PseudolabelStore& store, const Matrix& target_soft_preds);

  Matrix labels_;
  double ema_momentum_;
  int refresh_interval_;
};

PseudolabelStore init_store(const BlackBoxPredictor& bb, const data::LabeledSet& target,
                            double ema_momentum = 0.6, int refresh_interval_epochs = 1);

/// entry <- m*entry + (1-m)*pred, renormalised. Throws ContractError on a shape mismatch.
void ema_refresh(PseudolabelStore& store, const Matrix& target_soft_preds);

}  // namespace cabb::blackbox
