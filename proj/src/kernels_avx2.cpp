#include <immintrin.h>

#include <algorithm>
#include <cstddef>

#include "xmdpt/kernels.hpp"

// Compiled as a separate translation unit with -mavx2 -mfma. Nothing here
// may run before kern::cpu_has_avx2() has been checked by the dispatcher.

namespace xmdpt::kern::avx2 {

bool available() { return true; }

namespace {

// 256-bit pack: 8 floats or 4 doubles.
template <typename T>
struct Pack;

template <>
struct Pack<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg zero() { return _mm256_setzero_ps(); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
  static float reduce_add(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
  }
  static float reduce_max(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
  }
};

template <>
struct Pack<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg zero() { return _mm256_setzero_pd(); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
  static double reduce_add(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
    return _mm_cvtsd_f64(lo);
  }
  static double reduce_max(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_max_pd(lo, hi);
    lo = _mm_max_sd(lo, _mm_unpackhi_pd(lo, lo));
    return _mm_cvtsd_f64(lo);
  }
};

// y[0..n) += s * x[0..n)
template <typename T>
void axpy_row(T s, const T* x, T* y, std::size_t n) {
  using P = Pack<T>;
  typename P::reg vs = P::set1(s);
  std::size_t i = 0;
  for (; i + P::width <= n; i += P::width)
    P::store(y + i, P::fmadd(vs, P::load(x + i), P::load(y + i)));
  for (; i < n; ++i) y[i] += s * x[i];
}

}  // namespace

template <typename T>
void fill(T* x, T v, std::size_t n) {
  using P = Pack<T>;
  typename P::reg vv = P::set1(v);
  std::size_t i = 0;
  for (; i + P::width <= n; i += P::width) P::store(x + i, vv);
  for (; i < n; ++i) x[i] = v;
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) fill(crow, T(0), n);
    for (std::size_t p = 0; p < k; ++p) axpy_row(a[i * k + p], b + p * n, crow, n);
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      T v = dot(arow, b + j * k, k);
      c[i * n + j] = accumulate ? c[i * n + j] + v : v;
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) fill(c, T(0), k * n);
  for (std::size_t p = 0; p < m; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < k; ++i) axpy_row(a[p * k + i], brow, c + i * n, n);
  }
}

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  using P = Pack<T>;
  std::size_t i = 0;
  for (; i + P::width <= n; i += P::width)
    P::store(out + i, P::add(P::load(a + i), P::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  using P = Pack<T>;
  std::size_t i = 0;
  for (; i + P::width <= n; i += P::width)
    P::store(out + i, P::sub(P::load(a + i), P::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  using P = Pack<T>;
  std::size_t i = 0;
  for (; i + P::width <= n; i += P::width)
    P::store(out + i, P::mul(P::load(a + i), P::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  axpy_row(alpha, x, y, n);
}

template <typename T>
void scale(const T* x, T alpha, T* out, std::size_t n) {
  using P = Pack<T>;
  typename P::reg va = P::set1(alpha);
  std::size_t i = 0;
  for (; i + P::width <= n; i += P::width)
    P::store(out + i, P::mul(va, P::load(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
T sum(const T* x, std::size_t n) {
  using P = Pack<T>;
  typename P::reg acc0 = P::zero(), acc1 = P::zero();
  std::size_t i = 0;
  for (; i + 2 * P::width <= n; i += 2 * P::width) {
    acc0 = P::add(acc0, P::load(x + i));
    acc1 = P::add(acc1, P::load(x + i + P::width));
  }
  for (; i + P::width <= n; i += P::width) acc0 = P::add(acc0, P::load(x + i));
  T tail = T(0);
  for (; i < n; ++i) tail += x[i];
  return P::reduce_add(P::add(acc0, acc1)) + tail;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  using P = Pack<T>;
  typename P::reg acc0 = P::zero(), acc1 = P::zero();
  std::size_t i = 0;
  for (; i + 2 * P::width <= n; i += 2 * P::width) {
    acc0 = P::fmadd(P::load(a + i), P::load(b + i), acc0);
    acc1 = P::fmadd(P::load(a + i + P::width), P::load(b + i + P::width), acc1);
  }
  for (; i + P::width <= n; i += P::width)
    acc0 = P::fmadd(P::load(a + i), P::load(b + i), acc0);
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return P::reduce_add(P::add(acc0, acc1)) + tail;
}

template <typename T>
T max_value(const T* x, std::size_t n) {
  using P = Pack<T>;
  std::size_t i = 0;
  T best = x[0];
  if (n >= P::width) {
    typename P::reg acc = P::load(x);
    for (i = P::width; i + P::width <= n; i += P::width)
      acc = P::max(acc, P::load(x + i));
    best = P::reduce_max(acc);
  }
  for (; i < n; ++i) best = std::max(best, x[i]);
  return best;
}

#define XMDPT_INSTANTIATE_AVX2(T)                                            \
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

XMDPT_INSTANTIATE_AVX2(float)
XMDPT_INSTANTIATE_AVX2(double)
#undef XMDPT_INSTANTIATE_AVX2

}  // namespace xmdpt::kern::avx2
