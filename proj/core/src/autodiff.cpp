#include "gblab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "blas.hpp"
#include "fastmath.hpp"

namespace gblab::ad {

namespace {

// Scratch reused by conv im2col/col2im per thread.
template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

// cols(C*k*k, OH*OW) from image(C, H, W); sampling grid stride/pad.
template <typename T>
void im2col(const T* im, int C, int H, int W, int k, int stride, int pad, int OH, int OW,
            T* cols) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = cols + ((static_cast<int64_t>(c) * k + ki) * k + kj) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + OW, T(0));
            dst += OW;
            continue;
          }
          const T* src = im + (static_cast<int64_t>(c) * H + ih) * W;
          int iw = -pad + kj;
          for (int ow = 0; ow < OW; ++ow, ++dst, iw += stride)
            *dst = (iw >= 0 && iw < W) ? src[iw] : T(0);
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int k, int stride, int pad, int OH, int OW,
                T* im) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = cols + ((static_cast<int64_t>(c) * k + ki) * k + kj) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) {
            src += OW;
            continue;
          }
          T* dst = im + (static_cast<int64_t>(c) * H + ih) * W;
          int iw = -pad + kj;
          for (int ow = 0; ow < OW; ++ow, ++src, iw += stride)
            if (iw >= 0 && iw < W) dst[iw] += *src;
        }
      }
    }
  }
}

int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

// ---- tape ----

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return emit(std::move(value), requires_grad, nullptr);
}

template <typename T>
Var<T> Tape<T>::emit(Tensor<T> value, bool requires_grad, std::function<void()> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var<T> v) {
  Node& n = nodes_[v.id];
  if (!n.grad.defined()) n.grad = Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, const Tensor<T>& g) {
  if (!nodes_[v.id].requires_grad) return;
  Tensor<T>& buf = grad_buffer(v);
  const T* src = g.data();
  T* dst = buf.data();
  const int64_t n = buf.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.value().numel() != 1) throw InvalidArgument("backward root must be scalar");
  grad_buffer(root).fill(T(1));
  for (int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.defined() && n.backprop) n.backprop();
  }
}

// ---- elementwise ops ----
// Closures need the result id, so ops emit first and wire the closure after.

template <typename T>
void Tape<T>::set_backprop(Var<T> v, std::function<void()> backprop) {
  nodes_[v.id].backprop = std::move(backprop);
}

#define GBLAB_UNARY_OP(NAME, FWD_EXPR, BWD_EXPR)                                      \
  template <typename T>                                                               \
  Var<T> NAME(Var<T> a) {                                                             \
    Tape<T>* tape = a.tape;                                                           \
    const Tensor<T>& av = a.value();                                                  \
    Tensor<T> out(av.shape());                                                        \
    {                                                                                 \
      const T* x = av.data();                                                         \
      T* y = out.data();                                                              \
      const int64_t n = out.numel();                                                  \
      for (int64_t i = 0; i < n; ++i) y[i] = (FWD_EXPR);                              \
    }                                                                                 \
    const bool req = tape->requires_grad(a);                                          \
    Var<T> res{};                                                                     \
    res = tape->emit(std::move(out), req, nullptr);                                   \
    if (req) {                                                                        \
      auto bp = [tape, a, res]() {                                                    \
        const T* x = a.value().data();                                                \
        const T* y = res.value().data();                                              \
        const T* dy = res.grad().data();                                              \
        Tensor<T>& gbuf = tape->grad_buffer(a);                                       \
        T* dx = gbuf.data();                                                          \
        const int64_t n = gbuf.numel();                                               \
        for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (BWD_EXPR);                  \
        (void)x;                                                                      \
        (void)y;                                                                      \
      };                                                                              \
      tape->set_backprop(res, bp);                                                    \
    }                                                                                 \
    return res;                                                                       \
  }

// Forward via the fast-math kernels in fastmath.cpp; backward stays here where
// the expressions are cheap in y or x.
#define GBLAB_UNARY_KERNEL_OP(NAME, FWD_KERNEL, BWD_EXPR)                             \
  template <typename T>                                                               \
  Var<T> NAME(Var<T> a) {                                                             \
    Tape<T>* tape = a.tape;                                                           \
    const Tensor<T>& av = a.value();                                                  \
    Tensor<T> out(av.shape());                                                        \
    detail::FWD_KERNEL(av.data(), out.data(), out.numel());                           \
    const bool req = tape->requires_grad(a);                                          \
    Var<T> res = tape->emit(std::move(out), req, nullptr);                            \
    if (req) {                                                                        \
      auto bp = [tape, a, res]() {                                                    \
        const T* x = a.value().data();                                                \
        const T* y = res.value().data();                                              \
        const T* dy = res.grad().data();                                              \
        Tensor<T>& gbuf = tape->grad_buffer(a);                                       \
        T* dx = gbuf.data();                                                          \
        const int64_t n = gbuf.numel();                                               \
        for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (BWD_EXPR);                  \
        (void)x;                                                                      \
        (void)y;                                                                      \
      };                                                                              \
      tape->set_backprop(res, bp);                                                    \
    }                                                                                 \
    return res;                                                                       \
  }

GBLAB_UNARY_KERNEL_OP(exp_of, vexp, y[i])
GBLAB_UNARY_KERNEL_OP(log_of, vlog, T(1) / x[i])
GBLAB_UNARY_KERNEL_OP(sigmoid, vsigmoid, y[i] * (T(1) - y[i]))
GBLAB_UNARY_KERNEL_OP(tanh_of, vtanh, T(1) - y[i] * y[i])
GBLAB_UNARY_KERNEL_OP(elu, velu, x[i] > T(0) ? T(1) : y[i] + T(1))
GBLAB_UNARY_OP(neg, -x[i], T(-1))

template <typename T>
Var<T> softplus(Var<T> a) {
  Tape<T>* tape = a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  detail::vsoftplus(av.data(), out.data(), out.numel());
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res]() {
      Tensor<T>& gbuf = tape->grad_buffer(a);
      detail::vsigmoid_mul_acc(a.value().data(), res.grad().data(), gbuf.data(), gbuf.numel());
    });
  return res;
}

#undef GBLAB_UNARY_OP
#undef GBLAB_UNARY_KERNEL_OP

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>* tape = a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  const T* x = av.data();
  T* y = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) y[i] = x[i] * c;
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res, c]() {
      const T* dy = res.grad().data();
      Tensor<T>& g = tape->grad_buffer(a);
      T* dx = g.data();
      for (int64_t i = 0; i < g.numel(); ++i) dx[i] += dy[i] * c;
    });
  return res;
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  Tape<T>* tape = a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  const T* x = av.data();
  T* y = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) y[i] = x[i] + c;
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res]() { tape->accumulate(a, res.grad()); });
  return res;
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  Tape<T>* tape = a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  const T* x = av.data();
  T* y = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) y[i] = std::min(std::max(x[i], lo), hi);
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res, lo, hi]() {
      const T* x = a.value().data();
      const T* dy = res.grad().data();
      Tensor<T>& g = tape->grad_buffer(a);
      T* dx = g.data();
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x[i] > lo && x[i] < hi) dx[i] += dy[i];
    });
  return res;
}

namespace {

template <typename T, typename Fn>
Var<T> binary_same_shape(Var<T> a, Var<T> b, const char* what, Fn fn,
                         std::function<void()> (*make_bp)(Tape<T>*, Var<T>, Var<T>, Var<T>)) {
  require_same_shape(a.value(), b.value(), what);
  Tape<T>* tape = a.tape;
  Tensor<T> out(a.value().shape());
  const T* xa = a.value().data();
  const T* xb = b.value().data();
  T* y = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) y[i] = fn(xa[i], xb[i]);
  const bool req = tape->requires_grad(a) || tape->requires_grad(b);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req) tape->set_backprop(res, make_bp(tape, a, b, res));
  return res;
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary_same_shape<T>(
      a, b, "add", [](T x, T y) { return x + y; },
      +[](Tape<T>* tape, Var<T> a, Var<T> b, Var<T> res) -> std::function<void()> {
        return [tape, a, b, res]() {
          tape->accumulate(a, res.grad());
          tape->accumulate(b, res.grad());
        };
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary_same_shape<T>(
      a, b, "sub", [](T x, T y) { return x - y; },
      +[](Tape<T>* tape, Var<T> a, Var<T> b, Var<T> res) -> std::function<void()> {
        return [tape, a, b, res]() {
          tape->accumulate(a, res.grad());
          if (!tape->requires_grad(b)) return;
          const T* dy = res.grad().data();
          Tensor<T>& g = tape->grad_buffer(b);
          T* db = g.data();
          for (int64_t i = 0; i < g.numel(); ++i) db[i] -= dy[i];
        };
      });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary_same_shape<T>(
      a, b, "mul", [](T x, T y) { return x * y; },
      +[](Tape<T>* tape, Var<T> a, Var<T> b, Var<T> res) -> std::function<void()> {
        return [tape, a, b, res]() {
          const T* dy = res.grad().data();
          const T* xa = a.value().data();
          const T* xb = b.value().data();
          if (tape->requires_grad(a)) {
            Tensor<T>& g = tape->grad_buffer(a);
            T* da = g.data();
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += dy[i] * xb[i];
          }
          if (tape->requires_grad(b)) {
            Tensor<T>& g = tape->grad_buffer(b);
            T* db = g.data();
            for (int64_t i = 0; i < g.numel(); ++i) db[i] += dy[i] * xa[i];
          }
        };
      });
}

template <typename T>
Var<T> add_bc(Var<T> a, Var<T> b) {
  Tape<T>* tape = a.tape;
  const Shape& sa = a.value().shape();
  Shape sb = b.value().shape();
  if (sb.size() > sa.size()) throw InvalidArgument("add_bc: b has higher rank than a");
  while (sb.size() < sa.size()) sb.insert(sb.begin(), 1);
  const size_t nd = sa.size();
  for (size_t d = 0; d < nd; ++d)
    if (sb[d] != sa[d] && sb[d] != 1)
      throw InvalidArgument("add_bc: incompatible shapes " + shape_str(sa) + " vs " +
                            shape_str(b.value().shape()));
  // Strides of b over a's index space (0 where broadcast).
  std::vector<int64_t> bstride(nd), adim(sa.begin(), sa.end());
  int64_t acc = 1;
  for (size_t d = nd; d-- > 0;) {
    bstride[d] = (sb[d] == 1) ? 0 : acc;
    acc *= sb[d];
  }
  Tensor<T> out(sa);
  const T* xa = a.value().data();
  const T* xb = b.value().data();
  T* y = out.data();
  const int64_t n = out.numel();
  std::vector<int64_t> idx(nd, 0);
  int64_t boff = 0;
  for (int64_t i = 0; i < n; ++i) {
    y[i] = xa[i] + xb[boff];
    for (size_t d = nd; d-- > 0;) {
      ++idx[d];
      boff += bstride[d];
      if (idx[d] < adim[d]) break;
      boff -= bstride[d] * adim[d];
      idx[d] = 0;
    }
  }
  const bool req = tape->requires_grad(a) || tape->requires_grad(b);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, b, res, bstride, adim, nd]() {
      tape->accumulate(a, res.grad());
      if (!tape->requires_grad(b)) return;
      const T* dy = res.grad().data();
      Tensor<T>& g = tape->grad_buffer(b);
      T* db = g.data();
      const int64_t n = res.grad().numel();
      std::vector<int64_t> idx(nd, 0);
      int64_t boff = 0;
      for (int64_t i = 0; i < n; ++i) {
        db[boff] += dy[i];
        for (size_t d = nd; d-- > 0;) {
          ++idx[d];
          boff += bstride[d];
          if (idx[d] < adim[d]) break;
          boff -= bstride[d] * adim[d];
          idx[d] = 0;
        }
      }
    });
  return res;
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>* tape = a.tape;
  Tensor<T> out = a.value().reshape(shape);
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res]() {
      tape->accumulate(a, res.grad().reshape(a.value().shape()));
    });
  return res;
}

namespace {

// Concat along dim 1 for rank >= 2 tensors; dims other than 1 must agree.
template <typename T>
Var<T> concat_dim1(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat: empty part list");
  Tape<T>* tape = parts[0].tape;
  const Shape& s0 = parts[0].value().shape();
  if (s0.size() < 2) throw InvalidArgument("concat: rank must be >= 2");
  int64_t outer = s0[0];
  int64_t inner = 1;
  for (size_t d = 2; d < s0.size(); ++d) inner *= s0[d];
  int64_t total_c = 0;
  bool req = false;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != s0.size() || s[0] != outer)
      throw InvalidArgument("concat: incompatible part shapes");
    for (size_t d = 2; d < s.size(); ++d)
      if (s[d] != s0[d]) throw InvalidArgument("concat: incompatible part shapes");
    total_c += s[1];
    req = req || tape->requires_grad(p);
  }
  Shape os = s0;
  os[1] = total_c;
  Tensor<T> out(os);
  T* y = out.data();
  for (int64_t b = 0; b < outer; ++b) {
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t block = p.value().shape()[1] * inner;
      const T* src = p.value().data() + b * block;
      std::copy(src, src + block, y + b * total_c * inner + off);
      off += block;
    }
  }
  std::vector<Var<T>> parts_copy = parts;
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, parts_copy, res, outer, inner, total_c]() {
      const T* dy = res.grad().data();
      for (int64_t b = 0; b < outer; ++b) {
        int64_t off = 0;
        for (const auto& p : parts_copy) {
          const int64_t block = p.value().shape()[1] * inner;
          if (tape->requires_grad(p)) {
            T* dst = tape->grad_buffer(p).data() + b * block;
            const T* src = dy + b * total_c * inner + off;
            for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
          off += block;
        }
      }
    });
  return res;
}

}  // namespace

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  return concat_dim1(parts);
}

template <typename T>
Var<T> slice_channels(Var<T> a, int64_t c0, int64_t c1) {
  Tape<T>* tape = a.tape;
  const Shape& s = a.value().shape();
  if (s.size() < 2 || c0 < 0 || c1 > s[1] || c0 >= c1)
    throw InvalidArgument("slice_channels: bad range");
  int64_t inner = 1;
  for (size_t d = 2; d < s.size(); ++d) inner *= s[d];
  const int64_t outer = s[0], C = s[1], W = c1 - c0;
  Shape os = s;
  os[1] = W;
  Tensor<T> out(os);
  const T* x = a.value().data();
  T* y = out.data();
  for (int64_t b = 0; b < outer; ++b)
    std::copy(x + (b * C + c0) * inner, x + (b * C + c1) * inner, y + b * W * inner);
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res, c0, inner, outer, C, W]() {
      const T* dy = res.grad().data();
      T* dx = tape->grad_buffer(a).data();
      for (int64_t b = 0; b < outer; ++b) {
        T* dst = dx + (b * C + c0) * inner;
        const T* src = dy + b * W * inner;
        for (int64_t i = 0; i < W * inner; ++i) dst[i] += src[i];
      }
    });
  return res;
}

template <typename T>
Var<T> slice_cols(Var<T> a, int64_t c0, int64_t c1) {
  return slice_channels(a, c0, c1);
}

template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_batch: empty part list");
  Tape<T>* tape = parts[0].tape;
  const Shape& s0 = parts[0].value().shape();
  int64_t inner = 1;
  for (size_t d = 1; d < s0.size(); ++d) inner *= s0[d];
  int64_t total_b = 0;
  bool req = false;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != s0.size()) throw InvalidArgument("concat_batch: rank mismatch");
    for (size_t d = 1; d < s.size(); ++d)
      if (s[d] != s0[d]) throw InvalidArgument("concat_batch: incompatible part shapes");
    total_b += s[0];
    req = req || tape->requires_grad(p);
  }
  Shape os = s0;
  os[0] = total_b;
  Tensor<T> out(os);
  T* y = out.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t n = p.value().numel();
    std::copy(p.value().data(), p.value().data() + n, y + off);
    off += n;
  }
  std::vector<Var<T>> parts_copy = parts;
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, parts_copy, res]() {
      const T* dy = res.grad().data();
      int64_t off = 0;
      for (const auto& p : parts_copy) {
        const int64_t n = p.value().numel();
        if (tape->requires_grad(p)) {
          T* dst = tape->grad_buffer(p).data();
          for (int64_t i = 0; i < n; ++i) dst[i] += dy[off + i];
        }
        off += n;
      }
    });
  return res;
}

template <typename T>
Var<T> slice_batch(Var<T> a, int64_t b0, int64_t b1) {
  Tape<T>* tape = a.tape;
  const Shape& s = a.value().shape();
  if (b0 < 0 || b1 > s[0] || b0 >= b1) throw InvalidArgument("slice_batch: bad range");
  int64_t inner = 1;
  for (size_t d = 1; d < s.size(); ++d) inner *= s[d];
  Shape os = s;
  os[0] = b1 - b0;
  Tensor<T> out(os);
  std::copy(a.value().data() + b0 * inner, a.value().data() + b1 * inner, out.data());
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res, b0, inner]() {
      const T* dy = res.grad().data();
      T* dx = tape->grad_buffer(a).data() + b0 * inner;
      const int64_t n = res.grad().numel();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
    });
  return res;
}

template <typename T>
Var<T> broadcast_spatial(Var<T> z, int64_t h, int64_t w) {
  Tape<T>* tape = z.tape;
  const Shape& s = z.value().shape();
  if (s.size() != 2) throw InvalidArgument("broadcast_spatial: expected (B, L)");
  const int64_t B = s[0], L = s[1], hw = h * w;
  Tensor<T> out({B, L, h, w});
  const T* x = z.value().data();
  T* y = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l)
      std::fill(y + (b * L + l) * hw, y + (b * L + l + 1) * hw, x[b * L + l]);
  const bool req = tape->requires_grad(z);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, z, res, B, L, hw]() {
      const T* dy = res.grad().data();
      T* dz = tape->grad_buffer(z).data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t l = 0; l < L; ++l) {
          double acc = 0.0;
          const T* src = dy + (b * L + l) * hw;
          for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(src[i]);
          dz[b * L + l] += static_cast<T>(acc);
        }
    });
  return res;
}

// ---- reductions ----

template <typename T>
Var<T> reduce_sum_all(Var<T> a) {
  Tape<T>* tape = a.tape;
  const T* x = a.value().data();
  double acc = 0.0;
  for (int64_t i = 0; i < a.value().numel(); ++i) acc += static_cast<double>(x[i]);
  Tensor<T> out = Tensor<T>::full({1}, static_cast<T>(acc));
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res]() {
      const T dy = res.grad()[0];
      Tensor<T>& g = tape->grad_buffer(a);
      T* dx = g.data();
      for (int64_t i = 0; i < g.numel(); ++i) dx[i] += dy;
    });
  return res;
}

template <typename T>
Var<T> reduce_mean_all(Var<T> a) {
  const T inv = T(1) / static_cast<T>(a.value().numel());
  return scale(reduce_sum_all(a), inv);
}

template <typename T>
Var<T> row_sum(Var<T> a) {
  Tape<T>* tape = a.tape;
  const Shape& s = a.value().shape();
  if (s.size() != 2) throw InvalidArgument("row_sum: expected rank-2 input");
  const int64_t N = s[0], F = s[1];
  Tensor<T> out({N});
  const T* x = a.value().data();
  for (int64_t i = 0; i < N; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < F; ++j) acc += static_cast<double>(x[i * F + j]);
    out[i] = static_cast<T>(acc);
  }
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res, N, F]() {
      const T* dy = res.grad().data();
      T* dx = tape->grad_buffer(a).data();
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < F; ++j) dx[i * F + j] += dy[i];
    });
  return res;
}

template <typename T>
Var<T> vec_mean(Var<T> a) {
  if (a.value().ndim() != 1) throw InvalidArgument("vec_mean: expected rank-1 input");
  return reduce_mean_all(a);
}

template <typename T>
Var<T> logsumexp_list(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("logsumexp: empty part list");
  Tape<T>* tape = parts[0].tape;
  const Shape& s = parts[0].value().shape();
  for (const auto& p : parts) require_same_shape(parts[0].value(), p.value(), "logsumexp");
  const int64_t n = parts[0].value().numel();
  const size_t K = parts.size();
  Tensor<T> out(s);
  T* y = out.data();
  std::vector<const T*> xs(K);
  for (size_t k = 0; k < K; ++k) xs[k] = parts[k].value().data();
  for (int64_t i = 0; i < n; ++i) {
    T m = xs[0][i];
    for (size_t k = 1; k < K; ++k) m = std::max(m, xs[k][i]);
    if (!(m > -std::numeric_limits<T>::infinity())) {
      y[i] = -std::numeric_limits<T>::infinity();
      continue;
    }
    double acc = 0.0;
    for (size_t k = 0; k < K; ++k) acc += std::exp(static_cast<double>(xs[k][i] - m));
    y[i] = m + static_cast<T>(std::log(acc));
  }
  bool req = false;
  for (const auto& p : parts) req = req || tape->requires_grad(p);
  std::vector<Var<T>> parts_copy = parts;
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, parts_copy, res, n]() {
      const T* y = res.value().data();
      const T* dy = res.grad().data();
      for (const auto& p : parts_copy) {
        if (!tape->requires_grad(p)) continue;
        const T* x = p.value().data();
        T* dx = tape->grad_buffer(p).data();
        for (int64_t i = 0; i < n; ++i) {
          if (!(y[i] > -std::numeric_limits<T>::infinity())) continue;
          dx[i] += dy[i] * std::exp(x[i] - y[i]);
        }
      }
    });
  return res;
}

// ---- linear algebra ----

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>* tape = x.tape;
  const Shape& xs = x.value().shape();
  const Shape& ws = w.value().shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw InvalidArgument("linear: x " + shape_str(xs) + " w " + shape_str(ws));
  const int N = static_cast<int>(xs[0]), In = static_cast<int>(xs[1]),
            Out = static_cast<int>(ws[0]);
  Tensor<T> out({N, Out});
  detail::gemm(false, true, N, Out, In, T(1), x.value().data(), In, w.value().data(), In, T(0),
               out.data(), Out);
  if (b.defined()) {
    if (b.value().numel() != Out) throw InvalidArgument("linear: bias size mismatch");
    T* y = out.data();
    const T* bias = b.value().data();
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < Out; ++j) y[i * Out + j] += bias[j];
  }
  bool req = tape->requires_grad(x) || tape->requires_grad(w) ||
             (b.defined() && tape->requires_grad(b));
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, x, w, b, res, N, In, Out]() {
      const T* dy = res.grad().data();
      if (tape->requires_grad(x))
        detail::gemm(false, false, N, In, Out, T(1), dy, Out, w.value().data(), In, T(1),
                     tape->grad_buffer(x).data(), In);
      if (tape->requires_grad(w))
        detail::gemm(true, false, Out, In, N, T(1), dy, Out, x.value().data(), In, T(1),
                     tape->grad_buffer(w).data(), In);
      if (b.defined() && tape->requires_grad(b)) {
        T* db = tape->grad_buffer(b).data();
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < Out; ++j) db[j] += dy[i * Out + j];
      }
    });
  return res;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Tape<T>* tape = x.tape;
  const Shape& xs = x.value().shape();
  const Shape& ws = w.value().shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
    throw InvalidArgument("conv2d: x " + shape_str(xs) + " w " + shape_str(ws));
  const int B = static_cast<int>(xs[0]), Cin = static_cast<int>(xs[1]),
            H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
  const int Cout = static_cast<int>(ws[0]), k = static_cast<int>(ws[2]);
  const int OH = conv_out_size(H, k, stride, pad), OW = conv_out_size(W, k, stride, pad);
  const int64_t ck2 = static_cast<int64_t>(Cin) * k * k, ohw = static_cast<int64_t>(OH) * OW;
  Tensor<T> out({B, Cout, OH, OW});
  auto& cols = scratch<T>();
  cols.resize(static_cast<size_t>(ck2 * ohw));
  for (int bi = 0; bi < B; ++bi) {
    im2col(x.value().data() + static_cast<int64_t>(bi) * Cin * H * W, Cin, H, W, k, stride, pad,
           OH, OW, cols.data());
    detail::gemm(false, false, Cout, static_cast<int>(ohw), static_cast<int>(ck2), T(1),
                 w.value().data(), static_cast<int>(ck2), cols.data(), static_cast<int>(ohw),
                 T(0), out.data() + static_cast<int64_t>(bi) * Cout * ohw,
                 static_cast<int>(ohw));
  }
  if (b.defined()) {
    if (b.value().numel() != Cout) throw InvalidArgument("conv2d: bias size mismatch");
    const T* bias = b.value().data();
    T* y = out.data();
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < Cout; ++c) {
        T* p = y + (static_cast<int64_t>(bi) * Cout + c) * ohw;
        const T v = bias[c];
        for (int64_t i = 0; i < ohw; ++i) p[i] += v;
      }
  }
  bool req = tape->requires_grad(x) || tape->requires_grad(w) ||
             (b.defined() && tape->requires_grad(b));
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, x, w, b, res, B, Cin, H, W, Cout, k, stride, pad, OH, OW,
                             ck2, ohw]() {
      const T* dy = res.grad().data();
      auto& cols = scratch<T>();
      cols.resize(static_cast<size_t>(ck2 * ohw));
      const bool need_dx = tape->requires_grad(x);
      const bool need_dw = tape->requires_grad(w);
      T* dx = need_dx ? tape->grad_buffer(x).data() : nullptr;
      T* dw = need_dw ? tape->grad_buffer(w).data() : nullptr;
      for (int bi = 0; bi < B; ++bi) {
        const T* dyb = dy + static_cast<int64_t>(bi) * Cout * ohw;
        if (need_dw) {
          im2col(x.value().data() + static_cast<int64_t>(bi) * Cin * H * W, Cin, H, W, k,
                 stride, pad, OH, OW, cols.data());
          detail::gemm(false, true, Cout, static_cast<int>(ck2), static_cast<int>(ohw), T(1),
                       dyb, static_cast<int>(ohw), cols.data(), static_cast<int>(ohw), T(1),
                       dw, static_cast<int>(ck2));
        }
        if (need_dx) {
          detail::gemm(true, false, static_cast<int>(ck2), static_cast<int>(ohw), Cout, T(1),
                       w.value().data(), static_cast<int>(ck2), dyb, static_cast<int>(ohw),
                       T(0), cols.data(), static_cast<int>(ohw));
          col2im_add(cols.data(), Cin, H, W, k, stride, pad, OH, OW,
                     dx + static_cast<int64_t>(bi) * Cin * H * W);
        }
      }
      if (b.defined() && tape->requires_grad(b)) {
        T* db = tape->grad_buffer(b).data();
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < Cout; ++c) {
            const T* p = dy + (static_cast<int64_t>(bi) * Cout + c) * ohw;
            double acc = 0.0;
            for (int64_t i = 0; i < ohw; ++i) acc += static_cast<double>(p[i]);
            db[c] += static_cast<T>(acc);
          }
      }
    });
  return res;
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad, int out_pad) {
  Tape<T>* tape = x.tape;
  const Shape& xs = x.value().shape();
  const Shape& ws = w.value().shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0])
    throw InvalidArgument("conv_transpose2d: x " + shape_str(xs) + " w " + shape_str(ws));
  const int B = static_cast<int>(xs[0]), Cin = static_cast<int>(xs[1]),
            IH = static_cast<int>(xs[2]), IW = static_cast<int>(xs[3]);
  const int Cout = static_cast<int>(ws[1]), k = static_cast<int>(ws[2]);
  const int OH = (IH - 1) * stride - 2 * pad + k + out_pad;
  const int OW = (IW - 1) * stride - 2 * pad + k + out_pad;
  const int64_t ck2 = static_cast<int64_t>(Cout) * k * k, ihw = static_cast<int64_t>(IH) * IW;
  Tensor<T> out({B, Cout, OH, OW});
  auto& cols = scratch<T>();
  cols.resize(static_cast<size_t>(ck2 * ihw));
  for (int bi = 0; bi < B; ++bi) {
    detail::gemm(true, false, static_cast<int>(ck2), static_cast<int>(ihw), Cin, T(1),
                 w.value().data(), static_cast<int>(ck2),
                 x.value().data() + static_cast<int64_t>(bi) * Cin * ihw,
                 static_cast<int>(ihw), T(0), cols.data(), static_cast<int>(ihw));
    col2im_add(cols.data(), Cout, OH, OW, k, stride, pad, IH, IW,
               out.data() + static_cast<int64_t>(bi) * Cout * OH * OW);
  }
  if (b.defined()) {
    if (b.value().numel() != Cout) throw InvalidArgument("conv_transpose2d: bias size mismatch");
    const T* bias = b.value().data();
    T* y = out.data();
    const int64_t ohw = static_cast<int64_t>(OH) * OW;
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < Cout; ++c) {
        T* p = y + (static_cast<int64_t>(bi) * Cout + c) * ohw;
        const T v = bias[c];
        for (int64_t i = 0; i < ohw; ++i) p[i] += v;
      }
  }
  bool req = tape->requires_grad(x) || tape->requires_grad(w) ||
             (b.defined() && tape->requires_grad(b));
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, x, w, b, res, B, Cin, IH, IW, Cout, k, stride, pad, OH, OW,
                             ck2, ihw]() {
      const T* dy = res.grad().data();
      auto& cols = scratch<T>();
      cols.resize(static_cast<size_t>(ck2 * ihw));
      const bool need_dx = tape->requires_grad(x);
      const bool need_dw = tape->requires_grad(w);
      const int64_t ohw = static_cast<int64_t>(OH) * OW;
      for (int bi = 0; bi < B; ++bi) {
        const T* dyb = dy + static_cast<int64_t>(bi) * Cout * ohw;
        im2col(dyb, Cout, OH, OW, k, stride, pad, IH, IW, cols.data());
        if (need_dx)
          detail::gemm(false, false, Cin, static_cast<int>(ihw), static_cast<int>(ck2), T(1),
                       w.value().data(), static_cast<int>(ck2), cols.data(),
                       static_cast<int>(ihw), T(1),
                       tape->grad_buffer(x).data() + static_cast<int64_t>(bi) * Cin * ihw,
                       static_cast<int>(ihw));
        if (need_dw)
          detail::gemm(false, true, Cin, static_cast<int>(ck2), static_cast<int>(ihw), T(1),
                       x.value().data() + static_cast<int64_t>(bi) * Cin * ihw,
                       static_cast<int>(ihw), cols.data(), static_cast<int>(ihw), T(1),
                       tape->grad_buffer(w).data(), static_cast<int>(ck2));
      }
      if (b.defined() && tape->requires_grad(b)) {
        T* db = tape->grad_buffer(b).data();
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < Cout; ++c) {
            const T* p = dy + (static_cast<int64_t>(bi) * Cout + c) * ohw;
            double acc = 0.0;
            for (int64_t i = 0; i < ohw; ++i) acc += static_cast<double>(p[i]);
            db[c] += static_cast<T>(acc);
          }
      }
    });
  return res;
}

template <typename T>
Var<T> batch_norm2d(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, bool training, T momentum, T eps) {
  Tape<T>* tape = x.tape;
  const Shape& s = x.value().shape();
  if (s.size() != 4) throw InvalidArgument("batch_norm2d: expected rank-4 input");
  const int64_t N = s[0], C = s[1], HW = s[2] * s[3];
  const int64_t m = N * HW;
  Tensor<T> mean({C}), invstd({C});
  if (training) {
    const T* xd = x.value().data();
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) acc += static_cast<double>(p[i]);
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * static_cast<T>(mu);
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * static_cast<T>(var);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> out(s);
  {
    const T* xd = x.value().data();
    const T* g = gamma.value().data();
    const T* bt = beta.value().data();
    T* y = out.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T mu = mean[c], is = invstd[c], gc = g[c] * is, bc = bt[c];
        const T* p = xd + (n * C + c) * HW;
        T* q = y + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) q[i] = (p[i] - mu) * gc + bc;
      }
  }
  bool req = tape->requires_grad(x) || tape->requires_grad(gamma) || tape->requires_grad(beta);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, x, gamma, beta, res, mean, invstd, training, N, C, HW, m]() {
      const T* xd = x.value().data();
      const T* dy = res.grad().data();
      const T* g = gamma.value().data();
      const bool need_dx = tape->requires_grad(x);
      for (int64_t c = 0; c < C; ++c) {
        const T mu = mean[c], is = invstd[c];
        double s1 = 0.0, s2 = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const T* py = dy + (n * C + c) * HW;
          const T* px = xd + (n * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) {
            s1 += static_cast<double>(py[i]);
            s2 += static_cast<double>(py[i]) * static_cast<double>((px[i] - mu) * is);
          }
        }
        if (tape->requires_grad(beta)) tape->grad_buffer(beta)[c] += static_cast<T>(s1);
        if (tape->requires_grad(gamma)) tape->grad_buffer(gamma)[c] += static_cast<T>(s2);
        if (!need_dx) continue;
        T* dx = tape->grad_buffer(x).data();
        if (training) {
          const T c1 = static_cast<T>(s1 / static_cast<double>(m));
          const T c2 = static_cast<T>(s2 / static_cast<double>(m));
          for (int64_t n = 0; n < N; ++n) {
            const T* py = dy + (n * C + c) * HW;
            const T* px = xd + (n * C + c) * HW;
            T* pd = dx + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              const T xhat = (px[i] - mu) * is;
              pd[i] += g[c] * is * (py[i] - c1 - xhat * c2);
            }
          }
        } else {
          for (int64_t n = 0; n < N; ++n) {
            const T* py = dy + (n * C + c) * HW;
            T* pd = dx + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) pd[i] += g[c] * is * py[i];
          }
        }
      }
    });
  return res;
}

template <typename T>
Var<T> glu(Var<T> a) {
  Tape<T>* tape = a.tape;
  const Shape& s = a.value().shape();
  if (s.size() < 2) throw InvalidArgument("glu: rank must be >= 2");
  if (s[1] % 2 != 0) throw InvalidArgument("glu: channel count must be even");
  const int64_t outer = s[0], C = s[1], M = C / 2;
  int64_t inner = 1;
  for (size_t d = 2; d < s.size(); ++d) inner *= s[d];
  Shape os = s;
  os[1] = M;
  Tensor<T> out(os);
  const T* x = a.value().data();
  T* y = out.data();
  for (int64_t b = 0; b < outer; ++b) {
    const T* pa = x + b * C * inner;
    detail::vglu_forward(pa, pa + M * inner, y + b * M * inner, M * inner);
  }
  const bool req = tape->requires_grad(a);
  Var<T> res = tape->emit(std::move(out), req, nullptr);
  if (req)
    tape->set_backprop(res, [tape, a, res, outer, C, M, inner]() {
      const T* x = a.value().data();
      const T* dy = res.grad().data();
      T* dx = tape->grad_buffer(a).data();
      for (int64_t b = 0; b < outer; ++b) {
        const T* pa = x + b * C * inner;
        T* da = dx + b * C * inner;
        detail::vglu_backward(pa, pa + M * inner, dy + b * M * inner, da, da + M * inner,
                              M * inner);
      }
    });
  return res;
}

// ---- explicit instantiation ----

#define GBLAB_INSTANTIATE(T)                                                              \
  template class Tape<T>;                                                                 \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                    \
  template Var<T> add_bc(Var<T>, Var<T>);                                                 \
  template Var<T> scale(Var<T>, T);                                                       \
  template Var<T> add_scalar(Var<T>, T);                                                  \
  template Var<T> neg(Var<T>);                                                            \
  template Var<T> exp_of(Var<T>);                                                         \
  template Var<T> log_of(Var<T>);                                                         \
  template Var<T> sigmoid(Var<T>);                                                        \
  template Var<T> tanh_of(Var<T>);                                                        \
  template Var<T> elu(Var<T>);                                                            \
  template Var<T> softplus(Var<T>);                                                       \
  template Var<T> clamp(Var<T>, T, T);                                                    \
  template Var<T> reshape(Var<T>, Shape);                                                 \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                            \
  template Var<T> slice_channels(Var<T>, int64_t, int64_t);                               \
  template Var<T> concat_batch(const std::vector<Var<T>>&);                               \
  template Var<T> slice_batch(Var<T>, int64_t, int64_t);                                  \
  template Var<T> slice_cols(Var<T>, int64_t, int64_t);                                   \
  template Var<T> broadcast_spatial(Var<T>, int64_t, int64_t);                            \
  template Var<T> reduce_sum_all(Var<T>);                                                 \
  template Var<T> reduce_mean_all(Var<T>);                                                \
  template Var<T> row_sum(Var<T>);                                                        \
  template Var<T> vec_mean(Var<T>);                                                       \
  template Var<T> logsumexp_list(const std::vector<Var<T>>&);                             \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                         \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                               \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, Var<T>, int, int, int);                \
  template Var<T> batch_norm2d(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, bool, T, T); \
  template Var<T> glu(Var<T>);

GBLAB_INSTANTIATE(float)
GBLAB_INSTANTIATE(double)

#undef GBLAB_INSTANTIATE

}  // namespace gblab::ad
