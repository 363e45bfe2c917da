#pragma once

#include "cabb/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

// Small dense feed-forward classifier with hand-written backprop.
//
// A model is a stack of dense layers. Every layer but the last is a backbone
// layer followed by the nonlinearity; the last layer is the classifier head and
// emits raw logits. Backbone and head keep separate learning rates in the
// optimizer.

namespace cabb::nnet {

enum class Activation { relu, identity };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

class MlpModel {
 public:
  MlpModel();
  /// `layers.back()` is the classifier head. Throws DimensionError if widths do not chain.
  explicit MlpModel(std::vector<DenseLayer> layers, Activation activation = Activation::relu);

  MlpModel(const MlpModel& other);
  MlpModel& operator=(const MlpModel& other);
  MlpModel(MlpModel&&) noexcept = default;
  MlpModel& operator=(MlpModel&&) noexcept = default;

  /// Seeded symmetric-uniform fan-in initialisation.
  static MlpModel make(int input_dim, std::span<const int> hidden, int classes,
                       std::uint64_t seed, Activation activation = Activation::relu);

  int input_dim() const;
  int class_count() const;
  std::size_t param_count() const;
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t backbone_depth() const { return layers_.size() - 1; }
  Activation activation() const { return activation_; }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  const DenseLayer& classifier() const { return layers_.back(); }

  /// Mutable access bumps the revision so that outstanding caches become stale.
  DenseLayer& mutable_layer(std::size_t i);

  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);

  bool all_finite() const;

  std::uint64_t uid() const { return uid_; }
  std::uint64_t revision() const { return revision_; }
  void bump_revision() { ++revision_; }

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::relu;
  std::uint64_t uid_;
  std::uint64_t revision_ = 0;
};

struct ForwardCache {
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> pre_activation;  // backbone pre-activations
  std::uint64_t model_uid = 0;
  std::uint64_t model_revision = 0;
};

struct ForwardResult {
  Matrix logits;  // B x C
  ForwardCache cache;
};

/// Same layout as the model's layers.
struct Gradients {
  std::vector<DenseLayer> layers;

  std::vector<double> flat() const;
};

struct SgdConfig {
  double lr_backbone = 1e-3;
  double lr_classifier = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-3;

  void validate() const;
};

struct SgdState {
  std::vector<DenseLayer> velocity;  // lazily shaped on the first step
};

ForwardResult forward(const MlpModel& model, const Matrix& batch);

/// Logits only; no cache retained.
Matrix logits(const MlpModel& model, const Matrix& batch);
Matrix predict_proba(const MlpModel& model, const Matrix& batch);

ProbVector softmax(std::span<const double> logits);
Matrix softmax_rows(const Matrix& logits);

/// Throws ContractError when `cache` was not produced by `model` at its current revision.
Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& grad_logits);

/// v <- m*v + g + wd*theta ; theta <- theta - lr*v. Throws TrainingError on non-finite parameters.
void sgd_step(MlpModel& model, const Gradients& grads, SgdState& state, const SgdConfig& config);

/// Text checkpoint: header, layer shapes, then row-major parameters in
/// shortest round-trip decimal form.
void save_checkpoint(std::ostream& out, const MlpModel& model, bool sealed = false);

struct LoadedCheckpoint {
  MlpModel model;
  bool sealed = false;
};

LoadedCheckpoint load_checkpoint(std::istream& in);

}  // namespace cabb::nnet
