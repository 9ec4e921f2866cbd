#include "xmdpt/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace xmdpt {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw std::invalid_argument("schedule needs at least 2 steps");
  NoiseSchedule ns;
  ns.steps = steps;
  ns.beta.assign(steps + 1, 0.0);
  ns.alpha_bar.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    ns.beta[t] = beta_start + (beta_end - beta_start) * double(t - 1) / double(steps - 1);
    ns.alpha_bar[t] = ns.alpha_bar[t - 1] * (1.0 - ns.beta[t]);
  }
  return ns;
}

template <typename T>
Tensor<T> forward_noise(const Tensor<T>& y0, int t, const Tensor<T>& eps,
                        const NoiseSchedule& ns) {
  if (t < 0 || t > ns.steps)
    throw std::invalid_argument("forward_noise: t = " + std::to_string(t) +
                                " outside [0, " + std::to_string(ns.steps) + "]");
  const T a = T(std::sqrt(ns.alpha_bar[t]));
  const T b = T(std::sqrt(1.0 - ns.alpha_bar[t]));
  return add(scale(y0, a), scale(eps, b));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  auto d = sub(pred, target);
  return mean_all(mul(d, d));
}

double guidance_scale(int t, int total_steps, const GuidanceParams& gp) {
  if (t < 0 || t > total_steps)
    throw std::invalid_argument("guidance_scale: t outside schedule");
  const double frac = double(t) / double(total_steps);
  return gp.gamma * (1.0 - std::cos(M_PI * std::pow(frac, gp.alpha))) / 2.0;
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& cond, const Tensor<T>& uncond, double gamma_t) {
  if (gamma_t == 1.0) return cond;
  if (gamma_t == 0.0) return uncond;
  return add(scale(cond, T(gamma_t)), scale(uncond, T(1.0 - gamma_t)));
}

template <typename T>
Tensor<T> cfg_noise(const NoisePredictor<T>& predict, const Tensor<T>& y_t, int t,
                    const NoiseSchedule& ns, const GuidanceParams& gp,
                    long* forward_count) {
  const double gt = guidance_scale(t, ns.steps, gp);
  auto eps_c = predict(y_t, t, CondMode::full);
  auto eps_u = predict(y_t, t, CondMode::uncond);
  long used = 2;
  Tensor<T> out;
  if (gp.disentangled) {
    auto eps_p = predict(y_t, t, CondMode::pose_only);
    used = 3;
    // Pose guidance forms the base estimate, appearance guidance rides on it.
    out = cfg_combine(eps_c, cfg_combine(eps_p, eps_u, gt), gt);
  } else {
    out = cfg_combine(eps_c, eps_u, gt);
  }
  if (forward_count) *forward_count += used;
  return out;
}

std::vector<int> ddim_time_grid(int total_steps, int steps) {
  if (steps < 1 || steps > total_steps)
    throw std::invalid_argument("ddim_time_grid: bad step count");
  std::vector<int> grid(steps);
  for (int i = 0; i < steps; ++i) {
    grid[i] = int(std::llround(double(total_steps) * double(i + 1) / double(steps)));
    if (grid[i] < 1) grid[i] = 1;
  }
  for (int i = 1; i < steps; ++i)
    if (grid[i] <= grid[i - 1])
      throw std::invalid_argument("ddim_time_grid: grid not strictly increasing");
  return grid;
}

std::string SampleReport::to_text() const {
  std::string s;
  s += "ddim_steps = " + std::to_string(ddim_steps) + "\n";
  s += "model_forwards = " + std::to_string(model_forwards) + "\n";
  s += "guidance_mode = " + std::string(disentangled ? "disentangled" : "standard") + "\n";
  return s;
}

template <typename T>
Tensor<T> ddim_sample(const NoisePredictor<T>& predict,
                      std::vector<std::size_t> latent_shape,
                      const NoiseSchedule& ns, int steps,
                      const GuidanceParams& gp, Rng& rng, SampleReport* report) {
  NoGrad<T> ng;
  auto grid = ddim_time_grid(ns.steps, steps);
  auto y = Tensor<T>::randn(rng, std::move(latent_shape), T(1));
  long forwards = 0;
  for (int i = steps - 1; i >= 0; --i) {
    const int t_cur = grid[i];
    const int t_prev = i > 0 ? grid[i - 1] : 0;
    auto eps_hat = cfg_noise(predict, y, t_cur, ns, gp, &forwards);

    const double ab_cur = ns.alpha_bar[t_cur];
    const double ab_prev = ns.alpha_bar[t_prev];
    // y0_hat = (y - sqrt(1-abar) eps) / sqrt(abar), then step to t_prev.
    auto y0_hat = scale(sub(y, scale(eps_hat, T(std::sqrt(1.0 - ab_cur)))),
                        T(1.0 / std::sqrt(ab_cur)));
    y = add(scale(y0_hat, T(std::sqrt(ab_prev))),
            scale(eps_hat, T(std::sqrt(1.0 - ab_prev))));
  }
  if (report) {
    report->ddim_steps = steps;
    report->model_forwards = forwards;
    report->disentangled = gp.disentangled;
  }
  return y;
}

#define XMDPT_INSTANTIATE_DIFFUSION(T)                                          \
  template Tensor<T> forward_noise<T>(const Tensor<T>&, int, const Tensor<T>&,  \
                                      const NoiseSchedule&);                    \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> cfg_combine<T>(const Tensor<T>&, const Tensor<T>&, double);\
  template Tensor<T> cfg_noise<T>(const NoisePredictor<T>&, const Tensor<T>&,   \
                                  int, const NoiseSchedule&,                    \
                                  const GuidanceParams&, long*);                \
  template Tensor<T> ddim_sample<T>(const NoisePredictor<T>&,                   \
                                    std::vector<std::size_t>,                   \
                                    const NoiseSchedule&, int,                  \
                                    const GuidanceParams&, Rng&, SampleReport*);

XMDPT_INSTANTIATE_DIFFUSION(float)
XMDPT_INSTANTIATE_DIFFUSION(double)
#undef XMDPT_INSTANTIATE_DIFFUSION

}  // namespace xmdpt
