#include "cabb/losses.hpp"

#include "cabb/errors.hpp"

#include <cmath>
#include <string>

namespace cabb::losses {
namespace {

// Clamped log and its derivative (zero where the clamp is active).
inline double clog(double p, double floor) {
  if (!(p > 0.0)) return floor;
  return std::max(std::log(p), floor);
}

inline double dclog(double p, double floor) {
  if (!(p > 0.0) || std::log(p) < floor) return 0.0;
  return 1.0 / p;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(what) + ": probability and target shapes differ");
}

}  // namespace

void LossWeights::validate() const {
  if (beta < 0) throw ValidationError("beta must be nonnegative");
  if (gamma_n < 0 || gamma_n > 1) throw ValidationError("gamma_n must lie in [0,1]");
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  require_same_shape(probs, grad_probs, "softmax_backward");
  Matrix dz(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double dot = probs.row(i).dot(grad_probs.row(i));
    dz.row(i) = probs.row(i).cwiseProduct(grad_probs.row(i).array().matrix() -
                                          Eigen::RowVectorXd::Constant(probs.cols(), dot));
  }
  return dz;
}

LossValue ce_clean(const Matrix& probs, const Matrix& targets) {
  require_same_shape(probs, targets, "ce_clean");
  const auto b = probs.rows();
  if (b == 0) return LossValue::zero(0, probs.cols());
  Matrix gp(b, probs.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      total -= targets(i, k) * clog(probs(i, k), kLogFloor);
      gp(i, k) = -targets(i, k) * dclog(probs(i, k), kLogFloor) / static_cast<double>(b);
    }
  return {total / static_cast<double>(b), softmax_backward(probs, gp)};
}

LossValue nce(const Matrix& probs, const Matrix& targets) {
  require_same_shape(probs, targets, "nce");
  const auto b = probs.rows(), c = probs.cols();
  if (c < 2) throw ValidationError("nce needs at least two classes");
  if (b == 0) return LossValue::zero(0, c);
  Matrix gp(b, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) {
      const double l = clog(probs(i, k), kLogFloor);
      num += targets(i, k) * l;
      den += l;
    }
    // den <= 0; keep it away from zero.
    if (den > -1e-12) den = -1e-12;
    total += num / den;
    for (Eigen::Index k = 0; k < c; ++k) {
      const double dl = targets(i, k) / den - num / (den * den);
      gp(i, k) = dl * dclog(probs(i, k), kLogFloor) / static_cast<double>(b);
    }
  }
  return {total / static_cast<double>(b), softmax_backward(probs, gp)};
}

LossValue rce(const Matrix& probs, const Matrix& targets) {
  require_same_shape(probs, targets, "rce");
  const auto b = probs.rows();
  if (b == 0) return LossValue::zero(0, probs.cols());
  Matrix gp(b, probs.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double ly = clog(targets(i, k), kRceLogFloor);
      total -= probs(i, k) * ly;
      gp(i, k) = -ly / static_cast<double>(b);
    }
  return {total / static_cast<double>(b), softmax_backward(probs, gp)};
}

LossValue noisy_loss(const Matrix& probs, const Matrix& targets, double beta) {
  if (beta < 0) throw ValidationError("beta must be nonnegative");
  auto a = nce(probs, targets);
  if (beta == 0.0) return a;
  auto r = rce(probs, targets);
  a.value += beta * r.value;
  a.grad += beta * r.grad;
  return a;
}

LossValue entropy_loss(const Matrix& probs) {
  const auto b = probs.rows();
  if (b == 0) return LossValue::zero(0, probs.cols());
  Matrix gp(b, probs.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double p = probs(i, k);
      const double l = clog(p, kLogFloor);
      total -= p * l;
      gp(i, k) = -(l + p * dclog(p, kLogFloor)) / static_cast<double>(b);
    }
  return {total / static_cast<double>(b), softmax_backward(probs, gp)};
}

LossValue eqdiv_loss(const Matrix& probs) {
  const auto b = probs.rows(), c = probs.cols();
  if (b == 0) throw ValidationError("eqdiv_loss needs a nonempty batch");
  const Eigen::RowVectorXd qhat = probs.colwise().mean();
  const double q = 1.0 / static_cast<double>(c);
  double value = 0.0;
  Eigen::RowVectorXd dq(c);
  for (Eigen::Index k = 0; k < c; ++k) {
    value += q * (std::log(q) - clog(qhat(k), kLogFloor));
    dq(k) = -q * dclog(qhat(k), kLogFloor);
  }
  Matrix gp = dq.replicate(b, 1) / static_cast<double>(b);
  return {value, softmax_backward(probs, gp)};
}

LossValue total_loss(const LossValue& clean_part, const LossValue& noisy_part,
                     const LossValue& ent, const LossValue& eqdiv, double gamma_n) {
  if (gamma_n < 0 || gamma_n > 1) throw ValidationError("gamma_n must lie in [0,1]");
  const auto r = eqdiv.grad.rows(), c = eqdiv.grad.cols();
  for (const auto* p : {&clean_part, &noisy_part, &ent})
    if (p->grad.rows() != r || p->grad.cols() != c)
      throw DimensionError("total_loss parts must share one gradient shape");
  LossValue out;
  out.value = gamma_n * clean_part.value + (1.0 - gamma_n) * noisy_part.value + eqdiv.value +
              (1.0 - gamma_n) * ent.value;
  out.grad = gamma_n * clean_part.grad + (1.0 - gamma_n) * noisy_part.grad + eqdiv.grad +
             (1.0 - gamma_n) * ent.grad;
  return out;
}

LossValue scatter_rows(const LossValue& part, std::span<const int> rows, Eigen::Index batch_rows) {
  if (static_cast<Eigen::Index>(rows.size()) != part.grad.rows())
    throw DimensionError("scatter_rows: row list does not match gradient rows");
  LossValue out{part.value, Matrix::Zero(batch_rows, part.grad.cols())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= batch_rows) throw DimensionError("scatter_rows: row out of range");
    out.grad.row(rows[i]) += part.grad.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace cabb::losses
