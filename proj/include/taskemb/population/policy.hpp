#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "taskemb/envs/rollout.hpp"
#include "taskemb/numcore/math.hpp"
#include "taskemb/numcore/mlp.hpp"

namespace taskemb {

/// Logit assigned to masked actions.
inline constexpr double kMaskedLogit = -1e9;

/// Neural policy. Discrete environments: the network emits logits and the
/// softmax head (with masking) lives here. PointMass: the network emits the
/// mean force in units of the force limit; actions are Gaussian with a
/// fixed, state-independent log-std and clipped to the action box.
struct Policy {
  EnvId env;
  Mlp net;
  ActionMask mask = 0;
  double log_std = 0.0;

  friend bool operator==(const Policy&, const Policy&) = default;
};

/// Hidden sizes: 64/32 for CartPoleVar, 32/32 otherwise.
inline std::vector<std::size_t> policy_layer_sizes(EnvId env) {
  const std::size_t in = feature_dim(env);
  const auto out = static_cast<std::size_t>(action_dim(env));
  if (env.kind == EnvKind::CartPoleVar) return {in, 64, 32, out};
  return {in, 32, 32, out};
}

inline Policy make_policy(EnvId env, Rng& rng, ActionMask mask = 0) {
  const auto sizes = policy_layer_sizes(env);
  Policy p{env, make_mlp(sizes, Activation::ReLU, Activation::Identity, rng), is_discrete(env) ? mask : 0, 0.0};
  return p;
}

/// What the policy did on one step, kept for gradient computations.
struct PolicyStep {
  std::array<double, kStateDim> features{};
  Action action;                          // executed (clipped) action
  std::array<double, 2> raw{};            // continuous: unclipped sample
};

/// Mutable evaluation context for a Policy (forward buffers). One per thread.
class PolicyActor {
 public:
  explicit PolicyActor(const Policy& policy) : policy_(&policy), features_(feature_dim(policy.env)) {}

  /// Action probabilities after masking (discrete environments only).
  std::span<const double> probabilities(const State& s) {
    featurize(policy_->env, s, features_);
    auto logits = mlp_forward(policy_->net, features_, cache_);
    probs_.assign(logits.begin(), logits.end());
    for (std::size_t a = 0; a < probs_.size(); ++a)
      if (is_masked(policy_->mask, static_cast<int>(a))) probs_[a] = kMaskedLogit;
    softmax_inplace(probs_);
    return probs_;
  }

  /// Mean force (continuous environments only).
  std::array<double, 2> mean(const State& s) {
    featurize(policy_->env, s, features_);
    auto out = mlp_forward(policy_->net, features_, cache_);
    return {point_mass::kMaxForce * out[0], point_mass::kMaxForce * out[1]};
  }

  Action act(const State& s, Rng& rng, PolicyStep* record = nullptr) {
    Action a;
    std::array<double, 2> raw{};
    if (is_discrete(policy_->env)) {
      auto p = probabilities(s);
      double u = rng.uniform();
      int chosen = -1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        chosen = static_cast<int>(i);
        if (u < p[i]) break;
        u -= p[i];
      }
      a = Action::discrete(chosen);
    } else {
      const auto m = mean(s);
      const double sd = std::exp(policy_->log_std);
      raw = {m[0] + sd * rng.normal(), m[1] + sd * rng.normal()};
      a = Action::continuous(std::clamp(raw[0], -point_mass::kMaxForce, point_mass::kMaxForce),
                             std::clamp(raw[1], -point_mass::kMaxForce, point_mass::kMaxForce));
    }
    if (record != nullptr) {
      std::copy(features_.begin(), features_.end(), record->features.begin());
      record->action = a;
      record->raw = raw;
    }
    return a;
  }

  Action operator()(const State& s, Rng& rng) { return act(s, rng); }

  const Policy& policy() const noexcept { return *policy_; }

 private:
  const Policy* policy_;
  std::vector<double> features_;
  std::vector<double> probs_;
  ForwardCache cache_;
};

/// log pi(action | features). For PointMass `raw` is the unclipped sample.
inline double log_prob(const Policy& policy, std::span<const double> features, const Action& action,
                       std::array<double, 2> raw = {}) {
  const auto out = mlp_forward(policy.net, features);
  if (is_discrete(policy.env)) {
    std::vector<double> p(out.begin(), out.end());
    for (std::size_t a = 0; a < p.size(); ++a)
      if (is_masked(policy.mask, static_cast<int>(a))) p[a] = kMaskedLogit;
    const double m = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (double v : p) z += std::exp(v - m);
    return p[static_cast<std::size_t>(action.id)] - m - std::log(z);
  }
  const double sd = std::exp(policy.log_std);
  double lp = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double d = (raw[i] - point_mass::kMaxForce * out[i]) / sd;
    lp += -0.5 * d * d - policy.log_std - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

/// Scratch for policy gradient computations.
struct PolicyGradScratch {
  ForwardCache cache;
  BackwardScratch back;
  std::vector<double> out_grad;
};

/// Adds scale * d log pi(action | features) / d params into `grads`.
inline void log_prob_backward(const Policy& policy, std::span<const double> features, const Action& action,
                              std::array<double, 2> raw, double scale, MlpGradients& grads,
                              PolicyGradScratch& scratch) {
  auto out = mlp_forward(policy.net, features, scratch.cache);
  scratch.out_grad.assign(out.size(), 0.0);
  if (is_discrete(policy.env)) {
    std::vector<double>& g = scratch.out_grad;
    for (std::size_t a = 0; a < out.size(); ++a) g[a] = is_masked(policy.mask, static_cast<int>(a)) ? kMaskedLogit : out[a];
    softmax_inplace(g);
    for (double& v : g) v = -scale * v;
    g[static_cast<std::size_t>(action.id)] += scale;
    for (std::size_t a = 0; a < out.size(); ++a)
      if (is_masked(policy.mask, static_cast<int>(a))) g[a] = 0.0;
  } else {
    const double var = std::exp(2.0 * policy.log_std);
    for (std::size_t i = 0; i < 2; ++i)
      scratch.out_grad[i] = scale * point_mass::kMaxForce * (raw[i] - point_mass::kMaxForce * out[i]) / var;
  }
  mlp_backward(policy.net, scratch.cache, scratch.out_grad, grads, nullptr, scratch.back);
}

/// Mean success of `policy` over `reps` rollouts on each task.
inline double evaluate_policy(const Policy& policy, std::span<const Task> tasks, int reps, std::uint64_t seed) {
  PolicyActor actor(policy);
  std::size_t wins = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (int r = 0; r < reps; ++r) {
      Rng rng(derive_seed(seed, t, static_cast<std::uint64_t>(r)));
      wins += rollout(tasks[t], actor, rng).success ? 1 : 0;
    }
  return tasks.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(tasks.size() * static_cast<std::size_t>(reps));
}

}  // namespace taskemb
