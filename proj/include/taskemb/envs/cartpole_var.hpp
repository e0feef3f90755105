#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "taskemb/envs/types.hpp"
#include "taskemb/numcore/rng.hpp"

// Cart-pole where each task fixes the per-action force F and whether the
// actions pull or push. State layout: (x, v, theta, omega, F, taskType, numSteps).
namespace taskemb::cartpole_var {

inline constexpr int kNumActions = 2;
inline constexpr int kHorizon = 200;
inline constexpr double kGamma = 1.0;

inline constexpr double kGravity = 9.8;
inline constexpr double kMassCart = 1.0;
inline constexpr double kMassPole = 0.1;
inline constexpr double kTotalMass = kMassCart + kMassPole;
inline constexpr double kHalfLength = 0.5;  // pole length 1 m
inline constexpr double kPoleMassLength = kMassPole * kHalfLength;
inline constexpr double kTau = 0.02;
inline constexpr double kThetaLimit = 12.0 * std::numbers::pi / 180.0;
inline constexpr double kXLimit = 2.4;
inline constexpr double kForceMin = 5.0;
inline constexpr double kForceMax = 15.0;

/// +1 when action 1 pushes the cart towards +x, -1 otherwise.
inline double action_one_direction(double force, double task_type) noexcept {
  const double d = task_type > 0.5 ? -1.0 : 1.0;
  return force * d > 0.0 ? 1.0 : -1.0;
}

/// Signed force along x applied by `action`. Type 0 ("pulling"): action 0
/// acts from the left, i.e. -F; type 1 ("pushing") inverts both actions.
inline double signed_force(int action, double force, double task_type) noexcept {
  const double base = action == 1 ? force : -force;
  return task_type > 0.5 ? -base : base;
}

/// Two-class dynamics label: 0 if action 0 moves the cart left, 1 if right.
inline int action_zero_class(const State& s) noexcept { return signed_force(0, s[4], s[5]) < 0.0 ? 0 : 1; }

inline bool valid_state(const State& s) noexcept {
  const double f = std::abs(s[4]);
  return f >= kForceMin && f <= kForceMax && (s[5] == 0.0 || s[5] == 1.0) && s[6] >= 0.0 && s[6] <= kHorizon &&
         std::isfinite(s[0]) && std::isfinite(s[1]) && std::isfinite(s[2]) && std::isfinite(s[3]);
}

inline StepOutcome step(const State& s, int action) {
  if (action < 0 || action >= kNumActions)
    throw InvalidAction("CartPoleVar action must be 0 or 1, got " + std::to_string(action));
  StepOutcome out;
  out.next_state = s;
  const double x = s[0], v = s[1], theta = s[2], omega = s[3];
  const double force = signed_force(action, s[4], s[5]);
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp = (force + kPoleMassLength * omega * omega * sin_t) / kTotalMass;
  const double theta_acc =
      (kGravity * sin_t - cos_t * temp) / (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

  State& n = out.next_state;
  n[0] = x + kTau * v;
  n[1] = v + kTau * x_acc;
  n[2] = theta + kTau * omega;
  n[3] = omega + kTau * theta_acc;
  n[6] = s[6] + 1.0;

  if (std::abs(n[2]) > kThetaLimit || std::abs(n[0]) > kXLimit) {
    out.terminal = Terminal::Crashed;
  } else if (n[6] >= kHorizon) {
    out.terminal = Terminal::Solved;
    out.reward = 1;
  }
  return out;
}

/// Bang-bang balance controller on a linear combination of the state that
/// picks whichever action pushes the cart in the desired direction.
inline int expert_action(const State& s) noexcept {
  const double u = 0.1 * s[0] + 0.4 * s[1] + 8.0 * s[2] + 1.2 * s[3];
  const double want = u > 0.0 ? 1.0 : -1.0;
  return action_one_direction(s[4], s[5]) == want ? 1 : 0;
}

inline State sample(Rng& rng) {
  State s{};
  for (int i = 0; i < 4; ++i) s[i] = rng.uniform(-0.05, 0.05);
  const double magnitude = rng.uniform(kForceMin, kForceMax);
  s[4] = rng.bernoulli(0.5) ? magnitude : -magnitude;
  s[5] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  s[6] = 0.0;
  return s;
}

}  // namespace taskemb::cartpole_var
