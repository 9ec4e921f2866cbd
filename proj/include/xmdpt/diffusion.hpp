#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "xmdpt/rng.hpp"
#include "xmdpt/tensor.hpp"

namespace xmdpt {

// Forward process: y_t = sqrt(abar_t) y_0 + sqrt(1 - abar_t) eps with a
// linear beta ramp. Index 0 is the clean image (abar_0 = 1); betas occupy
// indices 1..T.
struct NoiseSchedule {
  int steps = 1000;
  std::vector<double> beta;       // [0..T], beta[0] = 0
  std::vector<double> alpha_bar;  // [0..T], alpha_bar[0] = 1

  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4,
                              double beta_end = 2e-2);
};

template <typename T>
Tensor<T> forward_noise(const Tensor<T>& y0, int t, const Tensor<T>& eps,
                        const NoiseSchedule& ns);

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target);

// Guidance strength schedule and classifier-free mixing.
// gamma_t = gamma * (1 - cos(pi * (t/T)^alpha)) / 2, so gamma_0 = 0 (pure
// unconditional mixing weight at the clean end) and gamma_T = gamma.
struct GuidanceParams {
  double gamma = 2.0;
  double alpha = 1.0;
  double drop_prob = 0.1;     // training-time condition drop rate
  bool disentangled = false;  // split pose and appearance guidance
};

// Named alpha presets: 1.0 favours distribution match, 0.01 favours
// per-pixel fidelity.
inline constexpr double kAlphaBestFid = 1.0;
inline constexpr double kAlphaBestSsim = 0.01;

double guidance_scale(int t, int total_steps, const GuidanceParams& gp);

// gamma_t * cond + (1 - gamma_t) * uncond, with exact passthrough at the
// endpoints so gamma_t in {0, 1} returns the corresponding branch bit-for-bit.
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& cond, const Tensor<T>& uncond, double gamma_t);

enum class CondMode { full, uncond, pose_only };

// A noise predictor the sampler can drive. Implementations must evaluate the
// network once per call; the sampler owns the forward count ledger.
template <typename T>
using NoisePredictor = std::function<Tensor<T>(const Tensor<T>& y_t, int t, CondMode)>;

template <typename T>
Tensor<T> cfg_noise(const NoisePredictor<T>& predict, const Tensor<T>& y_t, int t,
                    const NoiseSchedule& ns, const GuidanceParams& gp,
                    long* forward_count = nullptr);

struct SampleReport {
  int ddim_steps = 0;
  long model_forwards = 0;
  bool disentangled = false;
  std::string to_text() const;
};

// Deterministic DDIM over an evenly spaced sub-grid of the schedule
// (tau_i = T (i+1) / steps, so the last step is exactly T). Standard guidance
// evaluates the predictor twice per step, disentangled three times.
template <typename T>
Tensor<T> ddim_sample(const NoisePredictor<T>& predict,
                      std::vector<std::size_t> latent_shape,
                      const NoiseSchedule& ns, int steps,
                      const GuidanceParams& gp, Rng& rng,
                      SampleReport* report = nullptr);

std::vector<int> ddim_time_grid(int total_steps, int steps);

}  // namespace xmdpt
