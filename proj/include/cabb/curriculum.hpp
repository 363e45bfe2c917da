#pragma once

#include <cstdint>
#include <optional>

namespace cabb::curriculum {

/// Weight on the clean-set objective. Decays multiplicatively with a step that
/// depends on the ratio of successive clean-set losses.
struct CurriculumState {
  double gamma = 1.0;
  std::optional<double> prev_clean_loss;
  double alpha = 2e-4;
  std::int64_t iteration = 0;
};

inline constexpr double kLossRatioFloor = 1e-8;

/// 1 - alpha * exp(-ratio)
double step_factor(double alpha, double loss_ratio);

/// The first call only records the loss. Later calls apply
/// gamma <- gamma * (1 - alpha * exp(-L_now / L_prev)), clamped to [0,1].
/// Throws ValidationError on a negative loss.
CurriculumState gamma_step(CurriculumState state, double clean_loss_now);

}  // namespace cabb::curriculum
