#pragma once

// Adaptive-moment optimiser with decoupled weight decay. Decay applies to
// convolution kernels only, never to biases.

#include <cmath>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/unet.hpp"

namespace nrr {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  long warmup_steps = 0;  // linear ramp of the learning rate over the first steps

  void validate() const {
    detail::require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
    detail::require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must be in [0,1)");
    detail::require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must be in [0,1)");
    detail::require(epsilon > 0.0, "epsilon must be positive");
    detail::require(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay must be non-negative");
    detail::require(warmup_steps >= 0, "warmup_steps must be >= 0");
  }
};

template <class T>
class AdamW {
 public:
  AdamW(const Model<T>& model, AdamWConfig cfg) : cfg_(cfg), m_(model.zeros_like()), v_(model.zeros_like()) {
    cfg_.validate();
  }

  long step_count() const { return t_; }

  /// One update of `model` from accumulated gradients `grads`.
  void step(Model<T>& model, const Model<T>& grads) {
    detail::require_dims(grads.layers.size() == model.layers.size(), "optimizer: gradient layout differs");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.warmup_steps > 0 && t_ < cfg_.warmup_steps
                          ? cfg_.learning_rate * static_cast<double>(t_) / static_cast<double>(cfg_.warmup_steps)
                          : cfg_.learning_rate;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      update(model.layers[l].weight, grads.layers[l].weight, m_.layers[l].weight, v_.layers[l].weight, c1, c2, lr, true);
      update(model.layers[l].bias, grads.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias, c1, c2, lr, false);
    }
  }

 private:
  void update(std::vector<T>& w, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v, double c1, double c2,
              double lr, bool decay) const {
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double shrink = decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1 - b1) * gi;
      const double vi = b2 * v[i] + (1 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double upd = (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon);
      w[i] = static_cast<T>(w[i] * shrink - lr * upd);
    }
  }

  AdamWConfig cfg_;
  Model<T> m_, v_;
  long t_ = 0;
};

}  // namespace nrr
