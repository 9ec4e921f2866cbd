#pragma once

#include <cstddef>
#include <string>

// Low-level numeric kernels used by the tensor engine. Every routine has a
// scalar reference implementation and, on x86-64, an AVX2+FMA variant.
// The backend is picked at runtime: the XMDPT_KERNELS environment variable
// ("scalar" or "avx2") wins, otherwise the CPU is probed.

namespace xmdpt::kern {

enum class Backend { scalar, avx2 };

Backend active();
void select(Backend b);
bool cpu_has_avx2();
std::string backend_name(Backend b);

// Row-major GEMM family. With accumulate=false the destination is
// overwritten, otherwise the product is added onto it.
//   gemm_nn: c[m x n] (+)= a[m x k] * b[k x n]
//   gemm_nt: c[m x n] (+)= a[m x k] * b[n x k]^T
//   gemm_tn: c[k x n] (+)= a[m x k]^T * b[m x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

template <typename T> void add(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::size_t n);
// y += alpha * x
template <typename T> void axpy(T alpha, const T* x, T* y, std::size_t n);
// out = alpha * x
template <typename T> void scale(const T* x, T alpha, T* out, std::size_t n);
template <typename T> void fill(T* x, T v, std::size_t n);

template <typename T> T sum(const T* x, std::size_t n);
template <typename T> T dot(const T* a, const T* b, std::size_t n);
template <typename T> T max_value(const T* x, std::size_t n);

// Individual backends, exposed so tests can compare them directly.
// The avx2 namespace must only be entered when cpu_has_avx2() is true.
namespace scalar {
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T> void add(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T> void scale(const T* x, T alpha, T* out, std::size_t n);
template <typename T> void fill(T* x, T v, std::size_t n);
template <typename T> T sum(const T* x, std::size_t n);
template <typename T> T dot(const T* a, const T* b, std::size_t n);
template <typename T> T max_value(const T* x, std::size_t n);
}  // namespace scalar

namespace avx2 {
bool available();
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
template <typename T> void add(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T> void scale(const T* x, T alpha, T* out, std::size_t n);
template <typename T> void fill(T* x, T v, std::size_t n);
template <typename T> T sum(const T* x, std::size_t n);
template <typename T> T dot(const T* a, const T* b, std::size_t n);
template <typename T> T max_value(const T* x, std::size_t n);
}  // namespace avx2

}  // namespace xmdpt::kern
