#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gblab/autodiff.hpp"
#include "gblab/rng.hpp"
#include "gblab/tensor.hpp"

namespace gblab::nn {

// Registry of named tensors. Params are optimised; buffers (batch-norm
// running statistics) are saved but not optimised. Registration order is
// construction order and therefore deterministic.
template <typename T>
class ParamSet {
 public:
  // Returned handles share storage with the registered tensor.
  Tensor<T> add_param(const std::string& name, Tensor<T> t);
  Tensor<T> add_buffer(const std::string& name, Tensor<T> t);

  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& buffers() const { return buffers_; }

  // Params first, then buffers; nullptr when absent.
  Tensor<T>* find(const std::string& name);

  int64_t param_elements() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::pair<std::string, Tensor<T>>> buffers_;
  std::unordered_map<std::string, int> index_;  // +i params, -(i+1) buffers
};

// Places parameters on a tape for one forward/backward pass, memoised so a
// parameter used twice maps to a single leaf whose gradient accumulates.
template <typename T>
class Binding {
 public:
  Binding(ad::Tape<T>& tape, bool training) : tape_(&tape), training_(training) {}

  ad::Var<T> operator()(const Tensor<T>& param);
  const ad::Var<T>* find(const Tensor<T>& param) const;

  ad::Tape<T>& tape() { return *tape_; }
  bool training() const { return training_; }

 private:
  ad::Tape<T>* tape_;
  bool training_;
  std::unordered_map<const T*, ad::Var<T>> memo_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet<T>& ps, const std::string& name, int64_t in, int64_t out, Rng& rng);
  ad::Var<T> operator()(Binding<T>& bind, ad::Var<T> x);

 private:
  Tensor<T> w_, b_;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamSet<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t kernel,
         int stride, int pad, Rng& rng);
  ad::Var<T> operator()(Binding<T>& bind, ad::Var<T> x);

 private:
  Tensor<T> w_, b_;
  int stride_ = 1, pad_ = 0;
};

template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamSet<T>& ps, const std::string& name, int64_t in, int64_t out,
                  int64_t kernel, int stride, int pad, int out_pad, Rng& rng);
  ad::Var<T> operator()(Binding<T>& bind, ad::Var<T> x);

 private:
  Tensor<T> w_, b_;
  int stride_ = 1, pad_ = 0, out_pad_ = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamSet<T>& ps, const std::string& name, int64_t channels);
  ad::Var<T> operator()(Binding<T>& bind, ad::Var<T> x);

 private:
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  T momentum_ = T(0.1), eps_ = T(1e-5);
};

// Single LSTM step; gate order (input, forget, cell, output).
template <typename T>
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParamSet<T>& ps, const std::string& name, int64_t in, int64_t hidden, Rng& rng);
  // (x, h, c) -> (h', c')
  std::pair<ad::Var<T>, ad::Var<T>> operator()(Binding<T>& bind, ad::Var<T> x, ad::Var<T> h,
                                               ad::Var<T> c);
  int64_t hidden() const { return hidden_; }

 private:
  Tensor<T> w_ih_, w_hh_, b_ih_, b_hh_;
  int64_t hidden_ = 0;
};

// Adam with bias correction. Parameters whose leaf is absent from the binding
// (unused branches) are left untouched for that step.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamSet<T>& ps, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8));
  void step(Binding<T>& bind);
  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  int64_t steps() const { return t_; }

 private:
  ParamSet<T>* ps_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace gblab::nn
