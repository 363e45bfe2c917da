#include "cabb/nnet.hpp"

#include "cabb/errors.hpp"
#include "cabb/rng.hpp"
#include "cabb/text_io.hpp"

#include <atomic>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace cabb::nnet {
namespace {

std::uint64_t next_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

const char* activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

}  // namespace

MlpModel::MlpModel() : uid_(next_uid()) {}

MlpModel::MlpModel(std::vector<DenseLayer> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation), uid_(next_uid()) {
  if (layers_.empty()) throw DimensionError("model needs at least a classifier layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.rows() == 0 || l.weight.cols() == 0)
      throw DimensionError("layer " + std::to_string(i) + " has an empty weight matrix");
    if (l.bias.size() != l.weight.rows())
      throw DimensionError("layer " + std::to_string(i) + " bias length does not match rows");
    if (i > 0 && l.in_dim() != layers_[i - 1].out_dim())
      throw DimensionError("layer " + std::to_string(i) + " input width " +
                           std::to_string(l.in_dim()) + " does not match previous output " +
                           std::to_string(layers_[i - 1].out_dim()));
  }
}

MlpModel::MlpModel(const MlpModel& other)
    : layers_(other.layers_), activation_(other.activation_), uid_(next_uid()) {}

MlpModel& MlpModel::operator=(const MlpModel& other) {
  if (this != &other) {
    layers_ = other.layers_;
    activation_ = other.activation_;
    uid_ = next_uid();
    revision_ = 0;
  }
  return *this;
}

MlpModel MlpModel::make(int input_dim, std::span<const int> hidden, int classes,
                        std::uint64_t seed, Activation activation) {
  if (input_dim < 1 || classes < 1) throw DimensionError("input_dim and classes must be positive");
  Engine rng(seed);
  std::vector<DenseLayer> layers;
  int in = input_dim;
  auto add = [&](int out) {
    if (out < 1) throw DimensionError("layer width must be positive");
    DenseLayer l{Matrix(out, in), Vector(out)};
    // He-uniform bound for the weights, 1/sqrt(fan_in) for the bias.
    std::uniform_real_distribution<double> wdist(-std::sqrt(6.0 / in), std::sqrt(6.0 / in));
    std::uniform_real_distribution<double> bdist(-1.0 / std::sqrt(in), 1.0 / std::sqrt(in));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = wdist(rng);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = bdist(rng);
    layers.push_back(std::move(l));
    in = out;
  };
  for (int h : hidden) add(h);
  add(classes);
  return MlpModel(std::move(layers), activation);
}

int MlpModel::input_dim() const { return static_cast<int>(layers_.front().in_dim()); }
int MlpModel::class_count() const { return static_cast<int>(layers_.back().out_dim()); }

std::size_t MlpModel::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

DenseLayer& MlpModel::mutable_layer(std::size_t i) {
  ++revision_;
  return layers_.at(i);
}

std::vector<double> MlpModel::flat_params() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

void MlpModel::set_flat_params(std::span<const double> flat) {
  if (flat.size() != param_count()) throw DimensionError("flat parameter length mismatch");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = flat[k++];
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = flat[k++];
  }
  ++revision_;
}

bool MlpModel::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

std::vector<double> Gradients::flat() const {
  std::vector<double> out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

void SgdConfig::validate() const {
  if (lr_backbone < 0 || lr_classifier < 0 || weight_decay < 0)
    throw ValidationError("learning rates and weight decay must be nonnegative");
  if (momentum < 0 || momentum >= 1) throw ValidationError("momentum must lie in [0,1)");
}

ForwardResult forward(const MlpModel& model, const Matrix& batch) {
  if (batch.cols() != model.input_dim())
    throw DimensionError("batch width " + std::to_string(batch.cols()) +
                         " does not match model input width " +
                         std::to_string(model.input_dim()));
  ForwardResult res;
  auto& cache = res.cache;
  cache.model_uid = model.uid();
  cache.model_revision = model.revision();
  const auto& layers = model.layers();
  Matrix act = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Matrix z = act * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    cache.inputs.push_back(std::move(act));
    if (i + 1 == layers.size()) {
      res.logits = std::move(z);
      break;
    }
    act = model.activation() == Activation::relu ? Matrix(z.cwiseMax(0.0)) : z;
    cache.pre_activation.push_back(std::move(z));
  }
  return res;
}

Matrix logits(const MlpModel& model, const Matrix& batch) {
  if (batch.cols() != model.input_dim())
    throw DimensionError("batch width does not match model input width");
  const auto& layers = model.layers();
  Matrix act = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Matrix z = act * layers[i].weight.transpose();
    z.rowwise() += layers[i].bias.transpose();
    if (i + 1 < layers.size() && model.activation() == Activation::relu)
      act = z.cwiseMax(0.0);
    else
      act = std::move(z);
  }
  return act;
}

Matrix predict_proba(const MlpModel& model, const Matrix& batch) {
  return softmax_rows(logits(model, batch));
}

ProbVector softmax(std::span<const double> z) {
  ProbVector p(z.size());
  if (z.empty()) return p;
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    p[k] = std::exp(z[k] - mx);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto row = softmax(row_span(z, r));
    for (Eigen::Index c = 0; c < z.cols(); ++c) p(r, c) = row[static_cast<std::size_t>(c)];
  }
  return p;
}

Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& grad_logits) {
  if (cache.model_uid != model.uid() || cache.model_revision != model.revision())
    throw ContractError("forward cache is stale: model changed since the forward pass");
  const auto& layers = model.layers();
  if (cache.inputs.size() != layers.size())
    throw ContractError("forward cache does not match model depth");
  const Eigen::Index batch = cache.inputs.front().rows();
  if (grad_logits.rows() != batch || grad_logits.cols() != model.class_count())
    throw DimensionError("upstream gradient shape does not match logits");

  Gradients g;
  g.layers.resize(layers.size());
  Matrix delta = grad_logits;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& in = cache.inputs[i];
    g.layers[i].weight = delta.transpose() * in;
    g.layers[i].bias = delta.colwise().sum().transpose();
    if (i == 0) break;
    Matrix upstream = delta * layers[i].weight;
    if (model.activation() == Activation::relu) {
      const auto& pre = cache.pre_activation[i - 1];
      upstream = upstream.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    }
    delta = std::move(upstream);
  }
  return g;
}

void sgd_step(MlpModel& model, const Gradients& grads, SgdState& state, const SgdConfig& config) {
  const std::size_t n = model.layer_count();
  if (grads.layers.size() != n) throw DimensionError("gradient depth does not match model");
  if (state.velocity.empty()) {
    state.velocity.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& l = model.layers()[i];
      state.velocity[i].weight = Matrix::Zero(l.weight.rows(), l.weight.cols());
      state.velocity[i].bias = Vector::Zero(l.bias.size());
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& l = model.mutable_layer(i);
    const auto& g = grads.layers[i];
    if (g.weight.rows() != l.weight.rows() || g.weight.cols() != l.weight.cols() ||
        g.bias.size() != l.bias.size())
      throw DimensionError("gradient shape mismatch at layer " + std::to_string(i));
    auto& v = state.velocity[i];
    const double lr = (i + 1 == n) ? config.lr_classifier : config.lr_backbone;
    v.weight = config.momentum * v.weight + g.weight + config.weight_decay * l.weight;
    v.bias = config.momentum * v.bias + g.bias + config.weight_decay * l.bias;
    l.weight -= lr * v.weight;
    l.bias -= lr * v.bias;
  }
  if (!model.all_finite()) throw TrainingError("non-finite parameters after optimizer step");
}

void save_checkpoint(std::ostream& out, const MlpModel& model, bool sealed) {
  out << "cabb-mlp 1\n";
  out << "sealed " << (sealed ? 1 : 0) << "\n";
  out << "activation " << activation_name(model.activation()) << "\n";
  out << "layers " << model.layer_count() << "\n";
  for (const auto& l : model.layers()) {
    out << "layer " << l.out_dim() << " " << l.in_dim() << "\n";
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
        if (c) out << ' ';
        out << text::format_double(l.weight(r, c));
      }
      out << '\n';
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
      if (r) out << ' ';
      out << text::format_double(l.bias(r));
    }
    out << '\n';
  }
}

namespace {

struct LineReader {
  std::istream& in;
  std::size_t line_no = 0;

  std::vector<std::string_view> tokens(std::string& buf) {
    if (!std::getline(in, buf)) throw ParseError("unexpected end of checkpoint", line_no + 1);
    ++line_no;
    std::vector<std::string_view> out;
    for (auto t : text::split(text::trim(buf), ' '))
      if (!t.empty()) out.push_back(t);
    return out;
  }

  long long expect_int(std::string_view tok) {
    long long v = 0;
    if (!text::parse_int(tok, v)) throw ParseError("expected integer, got '" + std::string(tok) + "'", line_no);
    return v;
  }
};

}  // namespace

LoadedCheckpoint load_checkpoint(std::istream& in) {
  LineReader rd{in};
  std::string buf;
  auto t = rd.tokens(buf);
  if (t.size() != 2 || t[0] != "cabb-mlp" || t[1] != "1")
    throw ParseError("not a version-1 model checkpoint", rd.line_no);
  t = rd.tokens(buf);
  if (t.size() != 2 || t[0] != "sealed") throw ParseError("expected 'sealed <0|1>'", rd.line_no);
  const bool sealed = rd.expect_int(t[1]) != 0;
  t = rd.tokens(buf);
  if (t.size() != 2 || t[0] != "activation") throw ParseError("expected activation", rd.line_no);
  Activation act;
  if (t[1] == "relu")
    act = Activation::relu;
  else if (t[1] == "identity")
    act = Activation::identity;
  else
    throw ParseError("unknown activation '" + std::string(t[1]) + "'", rd.line_no);
  t = rd.tokens(buf);
  if (t.size() != 2 || t[0] != "layers") throw ParseError("expected layer count", rd.line_no);
  const auto n = rd.expect_int(t[1]);
  if (n < 1) throw ParseError("layer count must be positive", rd.line_no);

  std::vector<DenseLayer> layers;
  for (long long i = 0; i < n; ++i) {
    t = rd.tokens(buf);
    if (t.size() != 3 || t[0] != "layer") throw ParseError("expected 'layer <out> <in>'", rd.line_no);
    const auto out_dim = rd.expect_int(t[1]);
    const auto in_dim = rd.expect_int(t[2]);
    if (out_dim < 1 || in_dim < 1) throw ParseError("layer dimensions must be positive", rd.line_no);
    DenseLayer l{Matrix(out_dim, in_dim), Vector(out_dim)};
    for (long long r = 0; r < out_dim; ++r) {
      t = rd.tokens(buf);
      if (static_cast<long long>(t.size()) != in_dim) throw ParseError("weight row has wrong length", rd.line_no);
      for (long long c = 0; c < in_dim; ++c)
        if (!text::parse_double(t[static_cast<std::size_t>(c)], l.weight(r, c)))
          throw ParseError("bad number '" + std::string(t[static_cast<std::size_t>(c)]) + "'", rd.line_no);
    }
    t = rd.tokens(buf);
    if (static_cast<long long>(t.size()) != out_dim) throw ParseError("bias row has wrong length", rd.line_no);
    for (long long r = 0; r < out_dim; ++r)
      if (!text::parse_double(t[static_cast<std::size_t>(r)], l.bias(r)))
        throw ParseError("bad number '" + std::string(t[static_cast<std::size_t>(r)]) + "'", rd.line_no);
    layers.push_back(std::move(l));
  }
  try {
    return {MlpModel(std::move(layers), act), sealed};
  } catch (const DimensionError& e) {
    throw ParseError(e.what(), rd.line_no);
  }
}

}  // namespace cabb::nnet
