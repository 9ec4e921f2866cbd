#include <cmath>

#include "doctest.h"
#include "xmdpt/optim.hpp"
#include "xmdpt/rng.hpp"
#include "xmdpt/tensor.hpp"

using namespace xmdpt;

TEST_CASE("adam minimises a quadratic and clears gradients") {
  Rng rng(5);
  auto x = Tensor<double>::randn(rng, {4}, 1.0, true);
  auto target = Tensor<double>::from({4}, {1.0, -2.0, 0.5, 3.0});

  Adam<double> opt({x}, 0.05);
  for (int step = 0; step < 500; ++step) {
    Tape<double> tape;
    auto diff = sub(x, target);
    auto loss = sum_all(mul(diff, diff));
    tape.backward(loss);
    opt.step();
  }
  CHECK(opt.step_count == 500);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(x[i] == doctest::Approx(target[i]).epsilon(1e-3));
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.0);
}

TEST_CASE("adam first step moves by about lr in each coordinate") {
  auto x = Tensor<double>::from({2}, {10.0, -10.0}, true);
  Adam<double> opt({x}, 0.1);
  {
    Tape<double> tape;
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
  }
  opt.step();
  // With fresh moments the bias-corrected update is lr * sign(grad) up to eps.
  CHECK(x[0] == doctest::Approx(10.0 - 0.1).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(-10.0 + 0.1).epsilon(1e-6));
}

TEST_CASE("adam skips parameters that received no gradient") {
  auto used = Tensor<double>::from({1}, {2.0}, true);
  auto unused = Tensor<double>::from({1}, {7.0}, true);
  Adam<double> opt({used, unused}, 0.1);
  {
    Tape<double> tape;
    auto loss = sum_all(mul(used, used));
    tape.backward(loss);
  }
  opt.step();
  CHECK(used[0] != 2.0);
  CHECK(unused[0] == 7.0);
}

TEST_CASE("ema tracks parameters and swaps in cleanly") {
  auto p = Tensor<float>::from({2}, {1.0f, 2.0f}, true);
  Ema<float> ema({p}, 0.5);
  CHECK(ema.shadow[0][0] == 1.0f);

  p.data()[0] = 3.0f;
  p.data()[1] = 6.0f;
  ema.update();
  // shadow = 0.5 * old + 0.5 * new
  CHECK(ema.shadow[0][0] == doctest::Approx(2.0f));
  CHECK(ema.shadow[0][1] == doctest::Approx(4.0f));

  ema.swap_into_params();
  CHECK(p[0] == doctest::Approx(2.0f));
  CHECK(p[1] == doctest::Approx(4.0f));
  ema.swap_into_params();
  CHECK(p[0] == doctest::Approx(3.0f));
  CHECK(p[1] == doctest::Approx(6.0f));
}
