#pragma once

#include "cabb/types.hpp"

#include <span>

// Training objectives. Each takes softmax probabilities (B x C) and returns the
// batch-mean value together with its gradient with respect to the logits that
// produced those probabilities. Natural logs throughout.

namespace cabb::losses {

/// log clamp used by every loss except RCE.
inline constexpr double kLogFloor = -30.0;
/// RCE's clamp on log(target).
inline constexpr double kRceLogFloor = -4.0;

struct LossValue {
  double value = 0.0;
  Matrix grad;  // d value / d logits, B x C

  static LossValue zero(Eigen::Index rows, Eigen::Index cols) {
    return {0.0, Matrix::Zero(rows, cols)};
  }
};

struct LossWeights {
  double beta = 1.0;
  double gamma_n = 1.0;

  void validate() const;
};

/// Pulls an upstream gradient w.r.t. probabilities back through softmax:
/// dz_j = p_j * (g_j - sum_k p_k g_k).
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

/// mean_i -sum_k y_ik log p_ik
LossValue ce_clean(const Matrix& probs, const Matrix& targets);

/// Per sample (sum_k y_k log p_k) / (sum_j log p_j): the denominator is the
/// cross-entropy against every one-hot label, whatever the target softness.
LossValue nce(const Matrix& probs, const Matrix& targets);

/// mean_i -sum_k p_ik max(log y_ik, -4)
LossValue rce(const Matrix& probs, const Matrix& targets);

LossValue noisy_loss(const Matrix& probs, const Matrix& targets, double beta);

/// Mean Shannon entropy of the predictions (minimising sharpens them).
LossValue entropy_loss(const Matrix& probs);

/// KL(uniform || batch-mean prediction).
LossValue eqdiv_loss(const Matrix& probs);

/// L_t = g*clean + (1-g)*noisy ; L_IM = eqdiv + (1-g)*ent ; total = L_t + L_IM.
/// All parts must share one shape.
LossValue total_loss(const LossValue& clean_part, const LossValue& noisy_part,
                     const LossValue& ent, const LossValue& eqdiv, double gamma_n);

/// Embeds a loss computed on a row subset into a full batch of `batch_rows`
/// rows. The value is unchanged and rows outside `rows` get zero gradient.
LossValue scatter_rows(const LossValue& part, std::span<const int> rows, Eigen::Index batch_rows);

}  // namespace cabb::losses
