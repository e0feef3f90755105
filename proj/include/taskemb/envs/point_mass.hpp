#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "taskemb/envs/types.hpp"
#include "taskemb/numcore/rng.hpp"

// Point mass in the walled square [-4, 4]^2 that must pass a gate in the
// wall y = 0 to reach the goal (0, -3).
// State layout: (x, vx, y, vy, gatePosition, gateWidth, friction).
namespace taskemb::point_mass {

inline constexpr int kHorizon = 100;
inline constexpr double kGamma = 0.99;
inline constexpr double kDt = 0.05;
inline constexpr double kMass = 1.0;
inline constexpr double kArena = 4.0;
inline constexpr double kMaxForce = 10.0;
inline constexpr double kGoalX = 0.0;
inline constexpr double kGoalY = -3.0;
inline constexpr double kGoalRadius = 0.25;
inline constexpr double kStartX = 0.0;
inline constexpr double kStartY = 3.0;

struct Gate {
  double lo;
  double hi;
};

/// The open part of the gate, clipped to the arena.
inline Gate gate_opening(const State& s) noexcept {
  return {std::max(-kArena, s[4] - 0.5 * s[5]), std::min(kArena, s[4] + 0.5 * s[5])};
}

/// Steering class relative to the start column: 0 none, 1 left, 2 right.
inline int steering_class(const State& s) noexcept {
  const Gate g = gate_opening(s);
  if (g.hi < kStartX) return 1;
  if (g.lo > kStartX) return 2;
  return 0;
}

inline bool valid_task(const State& s) noexcept {
  const Gate g = gate_opening(s);
  return s[5] > 0.0 && g.lo < g.hi && s[6] >= 0.0 && s[6] <= 4.0;
}

inline StepOutcome step(const State& s, double fx, double fy) {
  if (!(std::abs(fx) <= kMaxForce) || !(std::abs(fy) <= kMaxForce))
    throw InvalidAction("PointMass force must lie in [-10, 10]^2");
  StepOutcome out;
  out.next_state = s;
  State& n = out.next_state;
  const double mu = s[6];
  n[1] = s[1] + kDt * (fx - mu * s[1]) / kMass;
  n[3] = s[3] + kDt * (fy - mu * s[3]) / kMass;
  n[0] = s[0] + kDt * n[1];
  n[2] = s[2] + kDt * n[3];

  if (std::abs(n[0]) >= kArena || std::abs(n[2]) >= kArena) {
    out.terminal = Terminal::Crashed;
    return out;
  }
  // Crossing or touching the inner wall y = 0 anywhere outside the gate.
  if ((s[2] > 0.0) != (n[2] > 0.0) || n[2] == 0.0) {
    const double dy = n[2] - s[2];
    const double t = dy == 0.0 ? 1.0 : -s[2] / dy;
    const double xc = s[0] + t * (n[0] - s[0]);
    const Gate g = gate_opening(s);
    if (xc <= g.lo || xc >= g.hi) {
      out.terminal = Terminal::Crashed;
      return out;
    }
  }
  const double dx = n[0] - kGoalX, dyg = n[2] - kGoalY;
  if (dx * dx + dyg * dyg <= kGoalRadius * kGoalRadius) {
    out.terminal = Terminal::Solved;
    out.reward = 1;
  }
  return out;
}

/// PD steering: line up above the gate centre, drop through it, then head
/// for the goal. Friction is compensated in the commanded force.
inline Action expert_action(const State& s) noexcept {
  const Gate g = gate_opening(s);
  const double gx = 0.5 * (g.lo + g.hi);
  const double half = 0.5 * (g.hi - g.lo);
  const double x = s[0], vx = s[1], y = s[2], vy = s[3], mu = s[6];

  double tx = kGoalX, ty = kGoalY;
  if (y > 0.0) {
    tx = gx;
    const bool aligned = std::abs(x - gx) < 0.5 * half && std::abs(vx) < 2.0 * half + 0.2;
    ty = aligned ? -1.0 : std::max(0.6, std::min(y, 1.5));
  } else if (y > -0.6) {
    tx = gx;
    ty = -1.5;
  }
  const double kp = 30.0, kd = 9.0;
  const double ax = kp * (tx - x) - kd * vx;
  const double ay = kp * (ty - y) - kd * vy;
  const double fx = std::clamp(kMass * ax + mu * vx, -kMaxForce, kMaxForce);
  const double fy = std::clamp(kMass * ay + mu * vy, -kMaxForce, kMaxForce);
  return Action::continuous(fx, fy);
}

inline State sample(Rng& rng) {
  State s{};
  s[0] = kStartX;
  s[1] = 0.0;
  s[2] = kStartY;
  s[3] = 0.0;
  s[4] = rng.uniform(-kArena, kArena);
  s[5] = rng.uniform(0.5, 8.0);
  s[6] = rng.uniform(0.0, 4.0);
  return s;
}

}  // namespace taskemb::point_mass
