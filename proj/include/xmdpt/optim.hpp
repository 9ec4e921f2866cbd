#pragma once

#include <cstddef>
#include <vector>

#include "xmdpt/nn.hpp"
#include "xmdpt/tensor.hpp"

namespace xmdpt {

// Adam over an explicit parameter list. step() consumes and clears the
// accumulated gradients. Moment buffers are exposed for checkpointing.
template <typename T>
struct Adam {
  T lr = T(1e-4);
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  long step_count = 0;
  std::vector<Tensor<T>> params;
  std::vector<std::vector<T>> m, v;

  Adam(std::vector<Tensor<T>> params_, T lr_);
  void step();
};

// Exponential moving average of the parameters; sampling uses the shadow
// weights while training keeps updating the live ones.
template <typename T>
struct Ema {
  double decay = 0.9999;
  std::vector<Tensor<T>> params;
  std::vector<std::vector<T>> shadow;

  Ema() = default;
  Ema(std::vector<Tensor<T>> params_, double decay_);
  void update();
  // Swaps live weights and shadow; call once to sample, again to restore.
  void swap_into_params();
};

}  // namespace xmdpt
