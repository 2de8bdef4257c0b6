#include "gblab/nn.hpp"

#include <cmath>

#include "gblab/errors.hpp"

namespace gblab::nn {

namespace ad = gblab::ad;

template <typename T>
Tensor<T> ParamSet<T>::add_param(const std::string& name, Tensor<T> t) {
  if (index_.count(name)) throw InvalidArgument("duplicate parameter name: " + name);
  params_.emplace_back(name, std::move(t));
  index_[name] = static_cast<int>(params_.size());
  return params_.back().second;
}

template <typename T>
Tensor<T> ParamSet<T>::add_buffer(const std::string& name, Tensor<T> t) {
  if (index_.count(name)) throw InvalidArgument("duplicate parameter name: " + name);
  buffers_.emplace_back(name, std::move(t));
  index_[name] = -static_cast<int>(buffers_.size());
  return buffers_.back().second;
}

template <typename T>
Tensor<T>* ParamSet<T>::find(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) return nullptr;
  return it->second > 0 ? &params_[it->second - 1].second
                        : &buffers_[-it->second - 1].second;
}

template <typename T>
int64_t ParamSet<T>::param_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
ad::Var<T> Binding<T>::operator()(const Tensor<T>& param) {
  auto it = memo_.find(param.data());
  if (it != memo_.end()) return it->second;
  ad::Var<T> v = tape_->leaf(param, true);
  memo_.emplace(param.data(), v);
  return v;
}

template <typename T>
const ad::Var<T>* Binding<T>::find(const Tensor<T>& param) const {
  auto it = memo_.find(param.data());
  return it == memo_.end() ? nullptr : &it->second;
}

namespace {

// Fan-in-scaled uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  return Tensor<T>::rand_uniform(std::move(shape), rng, -bound, bound);
}

}  // namespace

template <typename T>
Linear<T>::Linear(ParamSet<T>& ps, const std::string& name, int64_t in, int64_t out, Rng& rng) {
  w_ = ps.add_param(name + ".w", fan_in_uniform<T>({out, in}, in, rng));
  b_ = ps.add_param(name + ".b", fan_in_uniform<T>({out}, in, rng));
}

template <typename T>
ad::Var<T> Linear<T>::operator()(Binding<T>& bind, ad::Var<T> x) {
  return ad::linear(x, bind(w_), bind(b_));
}

template <typename T>
Conv2d<T>::Conv2d(ParamSet<T>& ps, const std::string& name, int64_t in, int64_t out,
                  int64_t kernel, int stride, int pad, Rng& rng)
    : stride_(stride), pad_(pad) {
  const int64_t fan_in = in * kernel * kernel;
  w_ = ps.add_param(name + ".w", fan_in_uniform<T>({out, in, kernel, kernel}, fan_in, rng));
  b_ = ps.add_param(name + ".b", fan_in_uniform<T>({out}, fan_in, rng));
}

template <typename T>
ad::Var<T> Conv2d<T>::operator()(Binding<T>& bind, ad::Var<T> x) {
  return ad::conv2d(x, bind(w_), bind(b_), stride_, pad_);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(ParamSet<T>& ps, const std::string& name, int64_t in,
                                    int64_t out, int64_t kernel, int stride, int pad,
                                    int out_pad, Rng& rng)
    : stride_(stride), pad_(pad), out_pad_(out_pad) {
  const int64_t fan_in = out * kernel * kernel;
  w_ = ps.add_param(name + ".w", fan_in_uniform<T>({in, out, kernel, kernel}, fan_in, rng));
  b_ = ps.add_param(name + ".b", fan_in_uniform<T>({out}, fan_in, rng));
}

template <typename T>
ad::Var<T> ConvTranspose2d<T>::operator()(Binding<T>& bind, ad::Var<T> x) {
  return ad::conv_transpose2d(x, bind(w_), bind(b_), stride_, pad_, out_pad_);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParamSet<T>& ps, const std::string& name, int64_t channels) {
  gamma_ = ps.add_param(name + ".gamma", Tensor<T>::full({channels}, T(1)));
  beta_ = ps.add_param(name + ".beta", Tensor<T>::zeros({channels}));
  running_mean_ = ps.add_buffer(name + ".running_mean", Tensor<T>::zeros({channels}));
  running_var_ = ps.add_buffer(name + ".running_var", Tensor<T>::full({channels}, T(1)));
}

template <typename T>
ad::Var<T> BatchNorm2d<T>::operator()(Binding<T>& bind, ad::Var<T> x) {
  return ad::batch_norm2d(x, bind(gamma_), bind(beta_), running_mean_, running_var_,
                          bind.training(), momentum_, eps_);
}

template <typename T>
LstmCell<T>::LstmCell(ParamSet<T>& ps, const std::string& name, int64_t in, int64_t hidden,
                      Rng& rng)
    : hidden_(hidden) {
  w_ih_ = ps.add_param(name + ".w_ih", fan_in_uniform<T>({4 * hidden, in}, hidden, rng));
  w_hh_ = ps.add_param(name + ".w_hh", fan_in_uniform<T>({4 * hidden, hidden}, hidden, rng));
  b_ih_ = ps.add_param(name + ".b_ih", fan_in_uniform<T>({4 * hidden}, hidden, rng));
  b_hh_ = ps.add_param(name + ".b_hh", fan_in_uniform<T>({4 * hidden}, hidden, rng));
}

template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> LstmCell<T>::operator()(Binding<T>& bind, ad::Var<T> x,
                                                          ad::Var<T> h, ad::Var<T> c) {
  ad::Var<T> gates = ad::add(ad::linear(x, bind(w_ih_), bind(b_ih_)),
                             ad::linear(h, bind(w_hh_), bind(b_hh_)));
  const int64_t H = hidden_;
  ad::Var<T> i = ad::sigmoid(ad::slice_cols(gates, 0, H));
  ad::Var<T> f = ad::sigmoid(ad::slice_cols(gates, H, 2 * H));
  ad::Var<T> g = ad::tanh_of(ad::slice_cols(gates, 2 * H, 3 * H));
  ad::Var<T> o = ad::sigmoid(ad::slice_cols(gates, 3 * H, 4 * H));
  ad::Var<T> c_next = ad::add(ad::mul(f, c), ad::mul(i, g));
  ad::Var<T> h_next = ad::mul(o, ad::tanh_of(c_next));
  return {h_next, c_next};
}

template <typename T>
Adam<T>::Adam(ParamSet<T>& ps, T lr, T beta1, T beta2, T eps)
    : ps_(&ps), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : ps.params()) {
    m_.push_back(Tensor<T>::zeros(t.shape()));
    v_.push_back(Tensor<T>::zeros(t.shape()));
  }
}

template <typename T>
void Adam<T>::step(Binding<T>& bind) {
  ++t_;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
  const auto& params = ps_->params();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const ad::Var<T>* var = bind.find(params[pi].second);
    if (!var) continue;
    const Tensor<T>& g = bind.tape().grad_buffer(*var);
    Tensor<T> p = params[pi].second;
    T* pd = p.data();
    T* md = m_[pi].data();
    T* vd = v_[pi].data();
    const T* gd = g.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      md[i] = beta1_ * md[i] + (T(1) - beta1_) * gd[i];
      vd[i] = beta2_ * vd[i] + (T(1) - beta2_) * gd[i] * gd[i];
      const T mhat = md[i] / bc1;
      const T vhat = vd[i] / bc2;
      pd[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

#define GBLAB_INSTANTIATE(T)     \
  template class ParamSet<T>;    \
  template class Binding<T>;     \
  template class Linear<T>;      \
  template class Conv2d<T>;      \
  template class ConvTranspose2d<T>; \
  template class BatchNorm2d<T>; \
  template class LstmCell<T>;    \
  template class Adam<T>;

GBLAB_INSTANTIATE(float)
GBLAB_INSTANTIATE(double)

#undef GBLAB_INSTANTIATE

}  // namespace gblab::nn
