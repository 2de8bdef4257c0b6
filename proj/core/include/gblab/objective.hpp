#pragma once

#include <cstdint>
#include <optional>

#include "gblab/autodiff.hpp"

namespace gblab {

// Constrained-optimisation state: a Lagrange multiplier on the KL that is
// updated multiplicatively from the moving average of the reconstruction
// error, so reconstruction is prioritised until the goal is met.
struct GecoState {
  double beta = 1.0;
  std::optional<double> err_ema;  // unset until the first observed batch
  double goal = 0.5655;
  double ema_decay = 0.99;
  double step_size = 1e-5;
  double beta_min = 1e-10;
  double beta_max = 1e2;
  std::optional<int64_t> steps_to_goal;

  void validate() const;
};

// Fresh state with beta = 1 and no error history.
GecoState geco_init(double goal, double ema_decay = 0.99, double step_size = 1e-5);

// One multiplier update after observing a batch reconstruction error.
// err_ema warm-starts at the first observation, then relaxes with ema_decay;
// beta <- clamp(beta * exp(step_size * (goal - err_ema)), beta_min, beta_max).
// steps_to_goal records the first step whose err_ema reaches the goal.
GecoState geco_step(const GecoState& state, double batch_err, int64_t step);

// loss = nll + beta * (kl_mask + kl_component); beta enters as a constant.
template <typename T>
ad::Var<T> total_loss(ad::Var<T> nll_per_pixel, ad::Var<T> kl_mask,
                      ad::Var<T> kl_component, const GecoState& state);

}  // namespace gblab
