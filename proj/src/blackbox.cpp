#include "cabb/blackbox.hpp"

#include "cabb/errors.hpp"
#include "cabb/losses.hpp"
#include "cabb/rng.hpp"
#include "cabb/text_io.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace cabb::blackbox {

void SourceTrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("source batch_size must be >= 1");
  if (lr < 0 || weight_decay < 0) throw ValidationError("source lr/weight_decay must be nonnegative");
  if (momentum < 0 || momentum >= 1) throw ValidationError("source momentum must lie in [0,1)");
}

BlackBoxPredictor::BlackBoxPredictor(nnet::MlpModel model)
    : model_(std::move(model)), queries_(std::make_unique<std::atomic<std::uint64_t>>(0)) {}

std::vector<int> BlackBoxPredictor::predict_hard(const Matrix& batch) const {
  const Matrix z = nnet::logits(model_, batch);
  queries_->fetch_add(1, std::memory_order_relaxed);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<int>(argmax(row_span(z, i)));
  return out;
}

int BlackBoxPredictor::input_dim() const { return model_.input_dim(); }
int BlackBoxPredictor::class_count() const { return model_.class_count(); }
std::uint64_t BlackBoxPredictor::query_count() const { return queries_->load(); }

void BlackBoxPredictor::save(std::ostream& out) const { nnet::save_checkpoint(out, model_, true); }

BlackBoxPredictor BlackBoxPredictor::load(std::istream& in) {
  auto ck = nnet::load_checkpoint(in);
  if (!ck.sealed) throw ValidationError("checkpoint is not flagged as a sealed predictor");
  return BlackBoxPredictor(std::move(ck.model));
}

BlackBoxPredictor train_source(const data::LabeledSet& source, int epochs, std::uint64_t seed,
                               const SourceTrainConfig& config) {
  data::validate(source);
  config.validate();
  if (epochs < 0) throw ValidationError("epochs must be nonnegative");
  auto model = nnet::MlpModel::make(source.dim(), config.hidden, source.class_count,
                                    derive_seed(seed, {0x50c, 0}));
  const nnet::SgdConfig sgd{config.lr, config.lr, config.momentum, config.weight_decay};
  nnet::SgdState state;
  const auto c = source.class_count;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (const auto& idx :
         data::minibatches(source, static_cast<std::size_t>(config.batch_size),
                           derive_seed(seed, {0x50c, 1}), static_cast<std::uint64_t>(epoch))) {
      const Matrix x = source.rows(idx);
      Matrix y = Matrix::Zero(x.rows(), c);
      for (std::size_t i = 0; i < idx.size(); ++i)
        y(static_cast<Eigen::Index>(i), source.labels[static_cast<std::size_t>(idx[i])]) = 1.0;
      auto fw = nnet::forward(model, x);
      const auto loss = losses::ce_clean(nnet::softmax_rows(fw.logits), y);
      if (!std::isfinite(loss.value))
        throw TrainingError("source training diverged at epoch " + std::to_string(epoch));
      nnet::sgd_step(model, nnet::backward(model, fw.cache, loss.grad), state, sgd);
    }
  }
  return BlackBoxPredictor(std::move(model));
}

PseudolabelStore::PseudolabelStore(Matrix labels, double ema_momentum, int refresh_interval_epochs)
    : labels_(std::move(labels)), ema_momentum_(ema_momentum), refresh_interval_(refresh_interval_epochs) {
  if (ema_momentum_ < 0 || ema_momentum_ > 1) throw ValidationError("ema_momentum must lie in [0,1]");
  if (refresh_interval_ < 1) throw ValidationError("refresh interval must be >= 1 epoch");
  for (Eigen::Index i = 0; i < labels_.rows(); ++i)
    if (!is_prob_vector(row_span(labels_, i), 1e-9))
      throw ValidationError("store row " + std::to_string(i) + " is not a probability vector");
}

std::vector<int> PseudolabelStore::hard_labels() const {
  std::vector<int> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<int>(argmax(row(i)));
  return out;
}

void PseudolabelStore::save(std::ostream& out) const {
  out << labels_.rows() << ',' << labels_.cols() << ',' << text::format_double(ema_momentum_) << ','
      << refresh_interval_ << '\n';
  for (Eigen::Index i = 0; i < labels_.rows(); ++i) {
    for (Eigen::Index k = 0; k < labels_.cols(); ++k) {
      if (k) out << ',';
      out << text::format_double(labels_(i, k));
    }
    out << '\n';
  }
}

PseudolabelStore PseudolabelStore::load(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing store header", line_no);
  auto head = text::split(text::trim(line), ',');
  long long n = 0, c = 0, interval = 0;
  double m = 0;
  if (head.size() != 4 || !text::parse_int(head[0], n) || !text::parse_int(head[1], c) ||
      !text::parse_double(head[2], m) || !text::parse_int(head[3], interval) || n < 0 || c < 1)
    throw ParseError("store header must be N,C,momentum,interval", line_no);
  Matrix labels(n, c);
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ParseError("truncated store", line_no + 1);
    ++line_no;
    auto f = text::split(text::trim(line), ',');
    if (static_cast<long long>(f.size()) != c) throw ParseError("store row has wrong length", line_no);
    for (long long k = 0; k < c; ++k)
      if (!text::parse_double(f[static_cast<std::size_t>(k)], labels(i, k)))
        throw ParseError("bad number in store", line_no);
  }
  return PseudolabelStore(std::move(labels), m, static_cast<int>(interval));
}

PseudolabelStore init_store(const BlackBoxPredictor& bb, const data::LabeledSet& target,
                            double ema_momentum, int refresh_interval_epochs) {
  if (target.class_count != bb.class_count())
    throw DimensionError("target class count differs from the predictor's");
  const auto hard = bb.predict_hard(target.features);
  Matrix labels = Matrix::Zero(static_cast<Eigen::Index>(hard.size()), bb.class_count());
  for (std::size_t i = 0; i < hard.size(); ++i) labels(static_cast<Eigen::Index>(i), hard[i]) = 1.0;
  return PseudolabelStore(std::move(labels), ema_momentum, refresh_interval_epochs);
}

void ema_refresh(PseudolabelStore& store, const Matrix& preds) {
  if (preds.rows() != store.labels_.rows() || preds.cols() != store.labels_.cols())
    throw ContractError("ema_refresh: prediction matrix shape differs from the store");
  const double m = store.ema_momentum_;
  for (Eigen::Index i = 0; i < preds.rows(); ++i) {
    auto row = store.labels_.row(i);
    row = m * row + (1.0 - m) * preds.row(i);
    row = row.cwiseMax(0.0);
    const double s = row.sum();
    if (s > 0) row /= s;
  }
}

}  // namespace cabb::blackbox
