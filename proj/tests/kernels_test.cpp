#include "xmdpt/kernels.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "xmdpt/rng.hpp"

using namespace xmdpt;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, std::size_t n, double amp = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(amp * rng.normal());
  return v;
}

template <typename T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::fabs(double(a[i])), std::fabs(double(b[i])), 1.0});
    worst = std::max(worst, std::fabs(double(a[i]) - double(b[i])) / denom);
  }
  return worst;
}

template <typename T>
double rel_tol() {
  return std::is_same_v<T, float> ? 2e-5 : 1e-12;
}

}  // namespace

TEST_CASE_TEMPLATE("gemm variants agree across backends", T, float, double) {
  if (!kern::avx2::available() || !kern::cpu_has_avx2()) return;
  Rng rng(101);
  // Odd sizes exercise the vector tails.
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1},
                         {3, 5, 7},
                         {16, 16, 16},
                         {13, 31, 9},
                         {2, 64, 33}}) {
    auto a = random_vec<T>(rng, m * k);
    auto b_nn = random_vec<T>(rng, k * n);
    auto b_nt = random_vec<T>(rng, n * k);
    auto b_tn = random_vec<T>(rng, m * n);
    auto seed_c = random_vec<T>(rng, m * n);
    auto seed_tn = random_vec<T>(rng, k * n);

    for (bool acc : {false, true}) {
      auto c0 = seed_c, c1 = seed_c;
      kern::scalar::gemm_nn(a.data(), b_nn.data(), c0.data(), m, k, n, acc);
      kern::avx2::gemm_nn(a.data(), b_nn.data(), c1.data(), m, k, n, acc);
      CHECK(max_rel_diff(c0, c1) < rel_tol<T>());

      c0 = seed_c;
      c1 = seed_c;
      kern::scalar::gemm_nt(a.data(), b_nt.data(), c0.data(), m, k, n, acc);
      kern::avx2::gemm_nt(a.data(), b_nt.data(), c1.data(), m, k, n, acc);
      CHECK(max_rel_diff(c0, c1) < rel_tol<T>());

      auto d0 = seed_tn, d1 = seed_tn;
      kern::scalar::gemm_tn(a.data(), b_tn.data(), d0.data(), m, k, n, acc);
      kern::avx2::gemm_tn(a.data(), b_tn.data(), d1.data(), m, k, n, acc);
      CHECK(max_rel_diff(d0, d1) < rel_tol<T>());
    }
  }
}

TEST_CASE_TEMPLATE("gemm_nn matches hand-checked products", T, float, double) {
  // Identity times a known matrix.
  std::vector<T> eye = {1, 0, 0, 1};
  std::vector<T> m = {1, 2, 3, 4};
  std::vector<T> out(4, T(7));
  kern::gemm_nn(eye.data(), m.data(), out.data(), 2, 2, 2, false);
  CHECK(out == m);

  // Row times column: [[1,2]] * [[3],[4]] = [[11]].
  std::vector<T> r = {1, 2}, c = {3, 4}, s(1);
  kern::gemm_nn(r.data(), c.data(), s.data(), 1, 2, 1, false);
  CHECK(s[0] == T(11));

  // Accumulate adds onto the destination.
  std::vector<T> t = {5};
  kern::gemm_nn(r.data(), c.data(), t.data(), 1, 2, 1, true);
  CHECK(t[0] == T(16));
}

TEST_CASE_TEMPLATE("elementwise and reduction backends agree", T, float, double) {
  if (!kern::avx2::available() || !kern::cpu_has_avx2()) return;
  Rng rng(202);
  for (std::size_t n : {1, 2, 7, 8, 9, 63, 64, 257, 1000}) {
    auto a = random_vec<T>(rng, n);
    auto b = random_vec<T>(rng, n);
    std::vector<T> o0(n), o1(n);

    kern::scalar::add(a.data(), b.data(), o0.data(), n);
    kern::avx2::add(a.data(), b.data(), o1.data(), n);
    CHECK(o0 == o1);

    kern::scalar::sub(a.data(), b.data(), o0.data(), n);
    kern::avx2::sub(a.data(), b.data(), o1.data(), n);
    CHECK(o0 == o1);

    kern::scalar::mul(a.data(), b.data(), o0.data(), n);
    kern::avx2::mul(a.data(), b.data(), o1.data(), n);
    CHECK(o0 == o1);

    kern::scalar::scale(a.data(), T(1.5), o0.data(), n);
    kern::avx2::scale(a.data(), T(1.5), o1.data(), n);
    CHECK(o0 == o1);

    o0 = b;
    o1 = b;
    kern::scalar::axpy(T(0.5), a.data(), o0.data(), n);
    kern::avx2::axpy(T(0.5), a.data(), o1.data(), n);
    // FMA contraction can differ from separate mul+add in the last ulp.
    CHECK(max_rel_diff(o0, o1) < rel_tol<T>());

    double s0 = kern::scalar::sum(a.data(), n);
    double s1 = kern::avx2::sum(a.data(), n);
    CHECK(std::fabs(s0 - s1) / std::max(1.0, std::fabs(s0)) < rel_tol<T>());

    double d0 = kern::scalar::dot(a.data(), b.data(), n);
    double d1 = kern::avx2::dot(a.data(), b.data(), n);
    CHECK(std::fabs(d0 - d1) / std::max(1.0, std::fabs(d0)) < rel_tol<T>());

    CHECK(kern::scalar::max_value(a.data(), n) == kern::avx2::max_value(a.data(), n));
  }
}

TEST_CASE("backend selection honours overrides") {
  kern::Backend initial = kern::active();
  kern::select(kern::Backend::scalar);
  CHECK(kern::active() == kern::Backend::scalar);
  CHECK(kern::backend_name(kern::active()) == "scalar");
  if (kern::cpu_has_avx2() && kern::avx2::available()) {
    kern::select(kern::Backend::avx2);
    CHECK(kern::active() == kern::Backend::avx2);
  }
  kern::select(initial);
}
