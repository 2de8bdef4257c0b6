#pragma once

#include <cstdint>

// Vectorised elementwise transcendental kernels, implemented in a translation
// unit compiled with -ffast-math so exp/log/tanh lower to SIMD libmvec calls.
// Callers must pass finite inputs: no NaN/inf semantics are preserved here.
namespace gblab::detail {

template <typename T> void vexp(const T* x, T* y, int64_t n);
template <typename T> void vlog(const T* x, T* y, int64_t n);
template <typename T> void vsigmoid(const T* x, T* y, int64_t n);
template <typename T> void vtanh(const T* x, T* y, int64_t n);
template <typename T> void velu(const T* x, T* y, int64_t n);
template <typename T> void vsoftplus(const T* x, T* y, int64_t n);

// dx[i] += dy[i] * sigmoid(x[i])  (softplus backward)
template <typename T> void vsigmoid_mul_acc(const T* x, const T* dy, T* dx, int64_t n);

// y[i] = a[i] * sigmoid(b[i])  (gated linear unit forward)
template <typename T> void vglu_forward(const T* a, const T* b, T* y, int64_t n);

// da[i] += dy[i]*s; db[i] += dy[i]*a[i]*s*(1-s) with s = sigmoid(b[i])
template <typename T>
void vglu_backward(const T* a, const T* b, const T* dy, T* da, T* db, int64_t n);

}  // namespace gblab::detail
