#include "cabb/curriculum.hpp"

#include "cabb/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cabb::curriculum {

double step_factor(double alpha, double loss_ratio) { return 1.0 - alpha * std::exp(-loss_ratio); }

CurriculumState gamma_step(CurriculumState state, double clean_loss_now) {
  if (!(clean_loss_now >= 0.0)) throw ValidationError("clean loss must be nonnegative");
  if (state.prev_clean_loss) {
    const double ratio = clean_loss_now / std::max(*state.prev_clean_loss, kLossRatioFloor);
    state.gamma = std::clamp(state.gamma * step_factor(state.alpha, ratio), 0.0, 1.0);
  }
  state.prev_clean_loss = clean_loss_now;
  ++state.iteration;
  return state;
}

}  // namespace cabb::curriculum
