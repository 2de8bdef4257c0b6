#pragma once

#include "gblab/autodiff.hpp"
#include "gblab/tensor.hpp"

namespace gblab::dist {

// log_var is clamped to this symmetric range before exponentiation.
inline constexpr double kLogVarClamp = 14.0;

// Diagonal Gaussian as plain tensors (storage, fixtures, oracles).
template <typename T>
struct DiagGauss {
  Tensor<T> mean;
  Tensor<T> log_var;
};

// Diagonal Gaussian whose parameters live on a tape.
template <typename T>
struct DiagGaussVar {
  ad::Var<T> mean;
  ad::Var<T> log_var;

  DiagGauss<T> detach() const {
    return {mean.value().clone(), log_var.value().clone()};
  }
};

// mean + exp(0.5 * log_var) * noise; differentiable w.r.t. mean and log_var.
template <typename T>
ad::Var<T> sample_reparam(const DiagGaussVar<T>& d, ad::Var<T> noise);

// Analytic KL(q || p) for (B, L) Gaussians, summed over L: one value per row.
template <typename T>
ad::Var<T> kl_diag_gauss(const DiagGaussVar<T>& q, const DiagGaussVar<T>& p);

// Elementwise log N(x; mean, sigma^2), constant included.
template <typename T>
ad::Var<T> gauss_log_prob(ad::Var<T> x, ad::Var<T> mean, T sigma);

}  // namespace gblab::dist
