#include "xmdpt/optim.hpp"

#include <cmath>

namespace xmdpt {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params_, T lr_)
    : lr(lr_), params(std::move(params_)) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.emplace_back(p.size(), T(0));
    v.emplace_back(p.size(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_count;
  const double bc1 = 1.0 - std::pow(double(beta1), double(step_count));
  const double bc2 = 1.0 - std::pow(double(beta2), double(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    const T* g = p.grad().data();
    T* val = p.data();
    T* mi = m[i].data();
    T* vi = v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      mi[j] = beta1 * mi[j] + (T(1) - beta1) * g[j];
      vi[j] = beta2 * vi[j] + (T(1) - beta2) * g[j] * g[j];
      const T mhat = T(double(mi[j]) / bc1);
      const T vhat = T(double(vi[j]) / bc2);
      val[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p.zero_grad();
  }
}

template <typename T>
Ema<T>::Ema(std::vector<Tensor<T>> params_, double decay_)
    : decay(decay_), params(std::move(params_)) {
  shadow.reserve(params.size());
  for (const auto& p : params) shadow.push_back(p.values());
}

template <typename T>
void Ema<T>::update() {
  const T d = T(decay), omd = T(1.0 - decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T* val = params[i].data();
    T* s = shadow[i].data();
    for (std::size_t j = 0; j < shadow[i].size(); ++j)
      s[j] = d * s[j] + omd * val[j];
  }
}

template <typename T>
void Ema<T>::swap_into_params() {
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i].values().swap(shadow[i]);
}

template struct Adam<float>;
template struct Adam<double>;
template struct Ema<float>;
template struct Ema<double>;

}  // namespace xmdpt
