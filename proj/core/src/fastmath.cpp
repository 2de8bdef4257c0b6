// Compiled with -ffast-math (see core/CMakeLists.txt): the loops below are
// branch-free over finite inputs so the math calls vectorise via libmvec.
// Keep any code that must honour NaN/inf out of this file.
#include "fastmath.hpp"

#include <cmath>

namespace gblab::detail {

namespace {

// exp(-|x|) is always in (0, 1], so neither branch can overflow.
template <typename T>
inline T sigmoid_one(T x) {
  const T e = std::exp(-std::abs(x));
  const T s = T(1) / (T(1) + e);
  return x >= T(0) ? s : T(1) - s;
}

}  // namespace

template <typename T>
void vexp(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

template <typename T>
void vlog(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
}

template <typename T>
void vsigmoid(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = sigmoid_one(x[i]);
}

template <typename T>
void vtanh(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
void velu(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : std::expm1(x[i]);
}

template <typename T>
void vsoftplus(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    y[i] = std::max(x[i], T(0)) + std::log1p(std::exp(-std::abs(x[i])));
}

template <typename T>
void vsigmoid_mul_acc(const T* x, const T* dy, T* dx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * sigmoid_one(x[i]);
}

template <typename T>
void vglu_forward(const T* a, const T* b, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * sigmoid_one(b[i]);
}

template <typename T>
void vglu_backward(const T* a, const T* b, const T* dy, T* da, T* db, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const T s = sigmoid_one(b[i]);
    da[i] += dy[i] * s;
    db[i] += dy[i] * a[i] * s * (T(1) - s);
  }
}

#define GBLAB_FASTMATH_INSTANTIATE(T)                                  \
  template void vexp(const T*, T*, int64_t);                           \
  template void vlog(const T*, T*, int64_t);                           \
  template void vsigmoid(const T*, T*, int64_t);                       \
  template void vtanh(const T*, T*, int64_t);                          \
  template void velu(const T*, T*, int64_t);                           \
  template void vsoftplus(const T*, T*, int64_t);                      \
  template void vsigmoid_mul_acc(const T*, const T*, T*, int64_t);     \
  template void vglu_forward(const T*, const T*, T*, int64_t);         \
  template void vglu_backward(const T*, const T*, const T*, T*, T*, int64_t);

GBLAB_FASTMATH_INSTANTIATE(float)
GBLAB_FASTMATH_INSTANTIATE(double)

#undef GBLAB_FASTMATH_INSTANTIATE

}  // namespace gblab::detail
