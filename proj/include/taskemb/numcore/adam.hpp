#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "taskemb/numcore/error.hpp"
#include "taskemb/numcore/mlp.hpp"

namespace taskemb {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::size_t parameter_count, double lr) : m(parameter_count, 0.0), v(parameter_count, 0.0), learning_rate(lr) {}
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("adam_step: parameter, gradient and moment sizes differ");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

/// Adam over an Mlp; moments are laid out as in flatten_parameters().
inline void adam_step(Mlp& net, const MlpGradients& grads, AdamState& state) {
  if (state.m.size() != net.parameter_count() || grads.weights.size() != net.layers.size())
    throw DimensionError("adam_step: state or gradients do not match the network");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  std::size_t k = 0;
  auto update = [&](std::vector<double>& p, const std::vector<double>& g) {
    for (std::size_t i = 0; i < p.size(); ++i, ++k) {
      state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g[i];
      state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= state.learning_rate * (state.m[k] / c1) / (std::sqrt(state.v[k] / c2) + state.epsilon);
    }
  };
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    update(net.layers[li].weights, grads.weights[li]);
    update(net.layers[li].biases, grads.biases[li]);
  }
}

}  // namespace taskemb
