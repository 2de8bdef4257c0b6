#include "gblab/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gblab/errors.hpp"

namespace gblab {

void GecoState::validate() const {
  if (!(beta_min > 0) || !(beta_max > beta_min))
    throw InvalidArgument("beta bounds must satisfy 0 < beta_min < beta_max");
  if (!(beta >= beta_min) || !(beta <= beta_max))
    throw InvalidArgument("beta outside [beta_min, beta_max]");
  if (!(ema_decay > 0) || !(ema_decay < 1))
    throw InvalidArgument("ema_decay must lie in (0, 1)");
  if (!(step_size > 0)) throw InvalidArgument("step_size must be positive");
  if (!std::isfinite(goal)) throw InvalidArgument("goal must be finite");
}

GecoState geco_init(double goal, double ema_decay, double step_size) {
  GecoState state;
  state.goal = goal;
  state.ema_decay = ema_decay;
  state.step_size = step_size;
  state.validate();
  return state;
}

GecoState geco_step(const GecoState& state, double batch_err, int64_t step) {
  if (!std::isfinite(batch_err))
    throw DivergenceError("non-finite reconstruction error at step " + std::to_string(step));
  GecoState next = state;
  next.err_ema = next.err_ema
                     ? state.ema_decay * *next.err_ema + (1 - state.ema_decay) * batch_err
                     : batch_err;
  next.beta = std::clamp(state.beta * std::exp(state.step_size * (state.goal - *next.err_ema)),
                         state.beta_min, state.beta_max);
  if (!next.steps_to_goal && *next.err_ema <= state.goal) next.steps_to_goal = step;
  return next;
}

template <typename T>
ad::Var<T> total_loss(ad::Var<T> nll_per_pixel, ad::Var<T> kl_mask,
                      ad::Var<T> kl_component, const GecoState& state) {
  return ad::add(nll_per_pixel,
                 ad::scale(ad::add(kl_mask, kl_component), static_cast<T>(state.beta)));
}

template ad::Var<float> total_loss(ad::Var<float>, ad::Var<float>, ad::Var<float>,
                                   const GecoState&);
template ad::Var<double> total_loss(ad::Var<double>, ad::Var<double>, ad::Var<double>,
                                    const GecoState&);

}  // namespace gblab
