#pragma once

#include <cmath>

#include "mspl/param.hpp"

namespace mspl {

struct AdamwParams {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// One decoupled-weight-decay Adam update for a single tensor. lr == 0 is a
// byte-level no-op: value, moments, and the step counter are all untouched,
// which makes a zero learning rate equivalent to freezing.
template <class T>
void adamw_step(ParamTensor<T>& p, double lr, const AdamwParams& cfg = {}) {
  if (!p.trainable || lr == 0.0) {
    return;
  }
  for (size_t i = 0; i < p.grad.size(); ++i) {
    MSPL_CHECK(std::isfinite(double(p.grad.data[i])), "NaN gradient in tensor ", p.name);
  }
  p.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(p.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(p.step));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T decay = T(lr * cfg.weight_decay);
  for (size_t i = 0; i < p.value.size(); ++i) {
    const T g = p.grad.data[i];
    p.value.data[i] -= decay * p.value.data[i];
    p.moment1.data[i] = b1 * p.moment1.data[i] + (T(1) - b1) * g;
    p.moment2.data[i] = b2 * p.moment2.data[i] + (T(1) - b2) * g * g;
    const T mhat = T(double(p.moment1.data[i]) / bc1);
    const T vhat = T(double(p.moment2.data[i]) / bc2);
    p.value.data[i] -= T(lr) * mhat / (std::sqrt(vhat) + T(cfg.eps));
  }
}

// Applies per-tensor learning rates across a store.
template <class T>
void adamw_step(ParamStore<T>& store, const std::vector<double>& lr_per_tensor,
                const AdamwParams& cfg = {}) {
  MSPL_CHECK(lr_per_tensor.size() == store.size(), "adamw: lr vector size mismatch");
  for (size_t i = 0; i < store.size(); ++i) {
    adamw_step(store[i], lr_per_tensor[i], cfg);
  }
}

}  // namespace mspl
