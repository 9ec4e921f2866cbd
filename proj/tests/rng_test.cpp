#include "xmdpt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"

using xmdpt::Rng;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(43);
  bool all_equal = true;
  Rng a2(42);
  for (int i = 0; i < 16; ++i) all_equal &= (a2.next_u64() == c.next_u64());
  CHECK_FALSE(all_equal);
}

TEST_CASE("state save/load resumes bit-exactly, including the normal spare") {
  Rng a(7);
  a.normal();  // leaves a cached spare inside
  auto st = a.save_state();
  std::vector<double> expect;
  for (int i = 0; i < 64; ++i) expect.push_back(a.normal());

  Rng b(999);
  b.load_state(st);
  for (int i = 0; i < 64; ++i) CHECK(b.normal() == expect[i]);
}

TEST_CASE("uniform stays in [0,1) and looks flat") {
  Rng rng(5);
  double lo = 1.0, hi = 0.0, acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    acc += u;
  }
  CHECK(acc / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("normal has zero mean and unit variance") {
  Rng rng(11);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    m1 += x;
    m2 += x * x;
  }
  m1 /= n;
  m2 /= n;
  // SE of the mean is 1/sqrt(n) ~ 0.0022; allow 4 SE.
  CHECK(std::fabs(m1) < 0.009);
  CHECK(std::fabs(m2 - 1.0) < 0.02);
}

TEST_CASE("next_below covers the full range without bias") {
  Rng rng(13);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    auto v = rng.next_below(7);
    REQUIRE(v < 7);
    counts[v]++;
  }
  for (int c : counts) CHECK(std::fabs(c - 10000.0) < 500.0);
}

TEST_CASE("sample_without_replacement yields distinct in-range indices") {
  Rng rng(17);
  auto idx = rng.sample_without_replacement(256, 76);
  CHECK(idx.size() == 76);
  std::set<std::size_t> uniq(idx.begin(), idx.end());
  CHECK(uniq.size() == 76);
  for (auto i : idx) CHECK(i < 256);

  // k == n is a permutation.
  auto perm = rng.sample_without_replacement(16, 16);
  std::set<std::size_t> all(perm.begin(), perm.end());
  CHECK(all.size() == 16);
}

TEST_CASE("mix derives distinct stream seeds") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s)
    for (std::uint64_t t = 0; t < 10; ++t) seen.insert(Rng::mix(s, t));
  CHECK(seen.size() == 1000);
}
