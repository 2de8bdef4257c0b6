#include "gblab/distributions.hpp"

#include <cmath>

#include "gblab/errors.hpp"

namespace gblab::dist {

namespace ad = gblab::ad;

template <typename T>
ad::Var<T> sample_reparam(const DiagGaussVar<T>& d, ad::Var<T> noise) {
  require_same_shape(d.mean.value(), d.log_var.value(), "sample_reparam");
  require_same_shape(d.mean.value(), noise.value(), "sample_reparam");
  ad::Var<T> lv = ad::clamp(d.log_var, -static_cast<T>(kLogVarClamp),
                            static_cast<T>(kLogVarClamp));
  ad::Var<T> std = ad::exp_of(ad::scale(lv, T(0.5)));
  return ad::add(d.mean, ad::mul(std, noise));
}

template <typename T>
ad::Var<T> kl_diag_gauss(const DiagGaussVar<T>& q, const DiagGaussVar<T>& p) {
  require_same_shape(q.mean.value(), q.log_var.value(), "kl_diag_gauss");
  require_same_shape(q.mean.value(), p.mean.value(), "kl_diag_gauss");
  require_same_shape(p.mean.value(), p.log_var.value(), "kl_diag_gauss");
  if (q.mean.value().ndim() != 2)
    throw InvalidArgument("kl_diag_gauss: expected (batch, latent) inputs");
  const T c = static_cast<T>(kLogVarClamp);
  ad::Var<T> lq = ad::clamp(q.log_var, -c, c);
  ad::Var<T> lp = ad::clamp(p.log_var, -c, c);
  ad::Var<T> dl = ad::sub(lq, lp);
  ad::Var<T> dm = ad::sub(q.mean, p.mean);
  ad::Var<T> term = ad::add(ad::exp_of(dl), ad::mul(ad::mul(dm, dm), ad::exp_of(ad::neg(lp))));
  term = ad::add(term, ad::add_scalar(ad::neg(dl), T(-1)));
  return ad::scale(ad::row_sum(term), T(0.5));
}

template <typename T>
ad::Var<T> gauss_log_prob(ad::Var<T> x, ad::Var<T> mean, T sigma) {
  if (!(sigma > T(0))) throw InvalidArgument("gauss_log_prob: sigma must be positive");
  require_same_shape(x.value(), mean.value(), "gauss_log_prob");
  const T log_const = static_cast<T>(-0.5 * std::log(2.0 * M_PI * static_cast<double>(sigma) *
                                                     static_cast<double>(sigma)));
  ad::Var<T> d = ad::sub(x, mean);
  return ad::add_scalar(ad::scale(ad::mul(d, d), T(-0.5) / (sigma * sigma)), log_const);
}

#define GBLAB_INSTANTIATE(T)                                                      \
  template ad::Var<T> sample_reparam(const DiagGaussVar<T>&, ad::Var<T>);         \
  template ad::Var<T> kl_diag_gauss(const DiagGaussVar<T>&, const DiagGaussVar<T>&); \
  template ad::Var<T> gauss_log_prob(ad::Var<T>, ad::Var<T>, T);

GBLAB_INSTANTIATE(float)
GBLAB_INSTANTIATE(double)

#undef GBLAB_INSTANTIATE

}  // namespace gblab::dist
