#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "gblab/tensor.hpp"

namespace gblab::ad {

template <typename T>
class Tape;

// Handle to a tape node. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int32_t id = -1;

  bool defined() const { return tape != nullptr; }
  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape. Forward runs eagerly; backward() replays recorded
// closures in reverse order. One tape per training step.
template <typename T>
class Tape {
 public:
  Var<T> leaf(Tensor<T> value, bool requires_grad);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Seeds d(root)=1 and propagates to every reachable node. Root must be scalar.
  void backward(Var<T> root);

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  const Tensor<T>& grad(Var<T> v) const { return nodes_[v.id].grad; }

  // Grad buffer, zero-initialised on first access; ops accumulate into it.
  Tensor<T>& grad_buffer(Var<T> v);
  void accumulate(Var<T> v, const Tensor<T>& g);

  size_t size() const { return nodes_.size(); }

  // Internal: used by op implementations.
  Var<T> emit(Tensor<T> value, bool requires_grad, std::function<void()> backprop);
  void set_backprop(Var<T> v, std::function<void()> backprop);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> backprop;
    bool requires_grad = false;
  };
  // Deque keeps value()/grad() references stable while later emits grow the tape.
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}
template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape->grad(*this);
}

// ---- elementwise ----
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
// b is broadcast against a: trailing-aligned, every b-dim equal or 1.
template <typename T> Var<T> add_bc(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T c);
template <typename T> Var<T> add_scalar(Var<T> a, T c);
template <typename T> Var<T> neg(Var<T> a);
template <typename T> Var<T> exp_of(Var<T> a);
template <typename T> Var<T> log_of(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh_of(Var<T> a);
template <typename T> Var<T> elu(Var<T> a);
template <typename T> Var<T> softplus(Var<T> a);
template <typename T> Var<T> clamp(Var<T> a, T lo, T hi);

// ---- shape ----
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(Var<T> a, int64_t c0, int64_t c1);
template <typename T> Var<T> concat_batch(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_batch(Var<T> a, int64_t b0, int64_t b1);
// Columns [c0, c1) of a 2-d tensor.
template <typename T> Var<T> slice_cols(Var<T> a, int64_t c0, int64_t c1);
// (B, L) -> (B, L, h, w), every spatial site a copy of the row.
template <typename T> Var<T> broadcast_spatial(Var<T> z, int64_t h, int64_t w);

// ---- reductions ----
template <typename T> Var<T> reduce_sum_all(Var<T> a);    // -> shape {1}
template <typename T> Var<T> reduce_mean_all(Var<T> a);   // -> shape {1}
template <typename T> Var<T> row_sum(Var<T> a);           // (N, F) -> (N)
template <typename T> Var<T> vec_mean(Var<T> a);          // (N) -> {1}
// Elementwise log(sum_k exp(v_k)) over a list of same-shape tensors.
template <typename T> Var<T> logsumexp_list(const std::vector<Var<T>>& parts);

// ---- linear algebra ----
// x (N, In), w (Out, In), optional bias (Out) -> (N, Out) = x * w^T + b
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

// x (B, Cin, H, W), w (Cout, Cin, kh, kw), optional bias (Cout)
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad);

// x (B, Cin, H, W), w (Cin, Cout, kh, kw), optional bias (Cout)
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad, int out_pad);

// Per-channel batch normalisation over (N, H, W). In training mode the batch
// statistics are used and running stats are updated in place (biased variance
// throughout); in eval mode the running stats are used.
template <typename T>
Var<T> batch_norm2d(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, bool training, T momentum, T eps);

// First half gated by sigmoid of second half, along dim 1 (4-d) or dim 1 (2-d).
template <typename T> Var<T> glu(Var<T> a);

}  // namespace gblab::ad
