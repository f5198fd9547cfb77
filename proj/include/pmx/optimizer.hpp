#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pmx/errors.hpp"
#include "pmx/matrix.hpp"
#include "pmx/mixer.hpp"

namespace pmx {

enum class OptimizerKind { adam, sgd_momentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd_momentum only
};

inline void validate_optimizer_config(const OptimizerConfig& c) {
  if (!(c.learning_rate > 0.0)) {
    throw ParamError("optimizer: learning_rate must be > 0");
  }
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    throw ParamError("optimizer: betas must be in [0, 1)");
  }
  if (!(c.eps > 0.0)) throw ParamError("optimizer: eps must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw ParamError("optimizer: momentum must be in [0, 1)");
  }
}

/// Per-tensor accumulators in parameter traversal order. Adam uses both
/// slots (first and second moments); SGD with momentum uses only the first
/// (velocity).
struct OptState {
  std::vector<Matrix> slot1;
  std::vector<Matrix> slot2;
  std::size_t step = 0;
};

inline OptState make_opt_state(const MixerParams& params) {
  OptState state;
  for_each_param(params, [&](const std::string&, const Matrix& m, bool) {
    state.slot1.push_back(zeros_like(m));
    state.slot2.push_back(zeros_like(m));
  });
  return state;
}

/// One optimizer update over every parameter tensor. All gradients are
/// checked before anything is written, so a non-finite gradient leaves the
/// parameters untouched and raises an error naming the offending tensor.
inline void optimizer_step(MixerParams& params, const MixerParams& grads,
                           OptState& state, const OptimizerConfig& cfg) {
  validate_optimizer_config(cfg);
  for_each_param(grads, [&](const std::string& name, const Matrix& g, bool) {
    if (!g.all_finite()) {
      throw NumericError("non-finite gradient in '" + name + "'");
    }
  });
  std::vector<const Matrix*> grad_ptrs;
  for_each_param(grads, [&](const std::string&, const Matrix& m, bool) {
    grad_ptrs.push_back(&m);
  });
  if (grad_ptrs.size() != state.slot1.size()) {
    throw DimensionError("optimizer: state tensor count " +
                         std::to_string(state.slot1.size()) + " vs " +
                         std::to_string(grad_ptrs.size()) + " gradients");
  }

  state.step += 1;
  std::size_t t = 0;
  for_each_param(params, [&](const std::string& name, Matrix& theta, bool) {
    const Matrix& g = *grad_ptrs[t];
    check_same_shape(theta, g, ("optimizer step for " + name).c_str());
    if (cfg.kind == OptimizerKind::adam) {
      Matrix& m = state.slot1[t];
      Matrix& v = state.slot2[t];
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
    } else {
      Matrix& vel = state.slot1[t];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        vel[i] = cfg.momentum * vel[i] + g[i];
        theta[i] -= cfg.learning_rate * vel[i];
      }
    }
    ++t;
  });
}

}  // namespace pmx
