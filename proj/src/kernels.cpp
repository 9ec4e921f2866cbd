#include "xmdpt/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

namespace xmdpt::kern {

namespace scalar {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < m; ++p) acc += a[p * k + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(const T* x, T alpha, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
void fill(T* x, T v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = v;
}

template <typename T>
T sum(const T* x, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T max_value(const T* x, std::size_t n) {
  T best = x[0];
  for (std::size_t i = 1; i < n; ++i) best = std::max(best, x[i]);
  return best;
}

#define XMDPT_INSTANTIATE_SCALAR(T)                                          \
  template void gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, \
                           std::size_t, bool);                               \
  template void gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, \
                           std::size_t, bool);                               \
  template void gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, \
                           std::size_t, bool);                               \
  template void add<T>(const T*, const T*, T*, std::size_t);                 \
  template void sub<T>(const T*, const T*, T*, std::size_t);                 \
  template void mul<T>(const T*, const T*, T*, std::size_t);                 \
  template void axpy<T>(T, const T*, T*, std::size_t);                       \
  template void scale<T>(const T*, T, T*, std::size_t);                      \
  template void fill<T>(T*, T, std::size_t);                                 \
  template T sum<T>(const T*, std::size_t);                                  \
  template T dot<T>(const T*, const T*, std::size_t);                        \
  template T max_value<T>(const T*, std::size_t);

XMDPT_INSTANTIATE_SCALAR(float)
XMDPT_INSTANTIATE_SCALAR(double)
#undef XMDPT_INSTANTIATE_SCALAR

}  // namespace scalar

#ifndef XMDPT_HAVE_AVX2_TU
namespace avx2 {
bool available() { return false; }
}
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::string backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

namespace {

Backend resolve_default() {
  if (const char* env = std::getenv("XMDPT_KERNELS")) {
    std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2") {
      if (!cpu_has_avx2() || !avx2::available())
        throw std::runtime_error("XMDPT_KERNELS=avx2 but AVX2 is unavailable");
      return Backend::avx2;
    }
    throw std::runtime_error("unknown XMDPT_KERNELS value: " + v);
  }
  return (cpu_has_avx2() && avx2::available()) ? Backend::avx2
                                               : Backend::scalar;
}

Backend& active_slot() {
  static Backend b = resolve_default();
  return b;
}

}  // namespace

Backend active() { return active_slot(); }

void select(Backend b) {
  if (b == Backend::avx2 && (!cpu_has_avx2() || !avx2::available()))
    throw std::runtime_error("AVX2 backend requested but unavailable");
  active_slot() = b;
}

#ifdef XMDPT_HAVE_AVX2_TU
#define XMDPT_DISPATCH(fn, ...)                                      \
  do {                                                               \
    if (active_slot() == Backend::avx2) return avx2::fn(__VA_ARGS__); \
    return scalar::fn(__VA_ARGS__);                                  \
  } while (0)
#else
#define XMDPT_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  XMDPT_DISPATCH(gemm_nn, a, b, c, m, k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  XMDPT_DISPATCH(gemm_nt, a, b, c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  XMDPT_DISPATCH(gemm_tn, a, b, c, m, k, n, accumulate);
}

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  XMDPT_DISPATCH(add, a, b, out, n);
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  XMDPT_DISPATCH(sub, a, b, out, n);
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  XMDPT_DISPATCH(mul, a, b, out, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  XMDPT_DISPATCH(axpy, alpha, x, y, n);
}

template <typename T>
void scale(const T* x, T alpha, T* out, std::size_t n) {
  XMDPT_DISPATCH(scale, x, alpha, out, n);
}

template <typename T>
void fill(T* x, T v, std::size_t n) {
  XMDPT_DISPATCH(fill, x, v, n);
}

template <typename T>
T sum(const T* x, std::size_t n) {
  XMDPT_DISPATCH(sum, x, n);
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  XMDPT_DISPATCH(dot, a, b, n);
}

template <typename T>
T max_value(const T* x, std::size_t n) {
  XMDPT_DISPATCH(max_value, x, n);
}

#undef XMDPT_DISPATCH

#define XMDPT_INSTANTIATE_DISPATCH(T)                                        \
  template void gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, \
                           std::size_t, bool);                               \
  template void gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, \
                           std::size_t, bool);                               \
  template void gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, \
                           std::size_t, bool);                               \
  template void add<T>(const T*, const T*, T*, std::size_t);                 \
  template void sub<T>(const T*, const T*, T*, std::size_t);                 \
  template void mul<T>(const T*, const T*, T*, std::size_t);                 \
  template void axpy<T>(T, const T*, T*, std::size_t);                       \
  template void scale<T>(const T*, T, T*, std::size_t);                      \
  template void fill<T>(T*, T, std::size_t);                                 \
  template T sum<T>(const T*, std::size_t);                                  \
  template T dot<T>(const T*, const T*, std::size_t);                        \
  template T max_value<T>(const T*, std::size_t);

XMDPT_INSTANTIATE_DISPATCH(float)
XMDPT_INSTANTIATE_DISPATCH(double)
#undef XMDPT_INSTANTIATE_DISPATCH

}  // namespace xmdpt::kern
