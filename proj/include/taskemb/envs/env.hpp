#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taskemb/envs/cartpole_var.hpp"
#include "taskemb/envs/multikeynav.hpp"
#include "taskemb/envs/point_mass.hpp"
#include "taskemb/envs/types.hpp"
#include "taskemb/numcore/rng.hpp"

namespace taskemb {

inline int horizon(EnvId env) noexcept {
  switch (env.kind) {
    case EnvKind::MultiKeyNav: return multikeynav::kHorizon;
    case EnvKind::CartPoleVar: return cartpole_var::kHorizon;
    case EnvKind::PointMass: return point_mass::kHorizon;
  }
  return 0;
}

inline double gamma_of(EnvId env) noexcept {
  switch (env.kind) {
    case EnvKind::MultiKeyNav: return multikeynav::kGamma;
    case EnvKind::CartPoleVar: return cartpole_var::kGamma;
    case EnvKind::PointMass: return point_mass::kGamma;
  }
  return 1.0;
}

inline bool is_discrete(EnvId env) noexcept { return env.kind != EnvKind::PointMass; }

/// Number of discrete actions, or the continuous action dimension.
inline int action_dim(EnvId env) noexcept {
  switch (env.kind) {
    case EnvKind::MultiKeyNav: return multikeynav::kNumActions;
    case EnvKind::CartPoleVar: return cartpole_var::kNumActions;
    case EnvKind::PointMass: return 2;
  }
  return 0;
}

/// Length of the network input produced by featurize().
inline std::size_t feature_dim(EnvId env) noexcept { return env.kind == EnvKind::CartPoleVar ? 6 : 7; }

/// Network input for a state. MultiKeyNav is passed through; CartPoleVar
/// scales F by 1/15 and drops the step counter; PointMass divides by the
/// natural range of each component.
inline void featurize(EnvId env, const State& s, std::span<double> out) noexcept {
  switch (env.kind) {
    case EnvKind::MultiKeyNav:
      for (std::size_t i = 0; i < 7; ++i) out[i] = s[i];
      break;
    case EnvKind::CartPoleVar:
      out[0] = s[0];
      out[1] = s[1];
      out[2] = s[2];
      out[3] = s[3];
      out[4] = s[4] / cartpole_var::kForceMax;
      out[5] = s[5];
      break;
    case EnvKind::PointMass:
      out[0] = s[0] / 4.0;
      out[1] = s[1] / 4.0;
      out[2] = s[2] / 4.0;
      out[3] = s[3] / 4.0;
      out[4] = s[4] / 4.0;
      out[5] = s[5] / 8.0;
      out[6] = s[6] / 4.0;
      break;
  }
}

inline std::vector<double> featurize(EnvId env, const State& s) {
  std::vector<double> out(feature_dim(env));
  featurize(env, s, out);
  return out;
}

inline bool valid_state(EnvId env, const State& s) noexcept {
  switch (env.kind) {
    case EnvKind::MultiKeyNav: return multikeynav::valid_state(s);
    case EnvKind::CartPoleVar: return cartpole_var::valid_state(s);
    case EnvKind::PointMass: return point_mass::valid_task(s);
  }
  return false;
}

/// Dynamics followed by the per-step failure with probability 1 - gamma.
/// A step that solves the task is never turned into a failure.
inline StepOutcome step(EnvId env, const State& s, const Action& a, Rng& rng) {
  StepOutcome out;
  switch (env.kind) {
    case EnvKind::MultiKeyNav: out = multikeynav::step(s, a.id, env.variant, rng); break;
    case EnvKind::CartPoleVar: out = cartpole_var::step(s, a.id); break;
    case EnvKind::PointMass: out = point_mass::step(s, a.force[0], a.force[1]); break;
  }
  const double g = gamma_of(env);
  if (out.terminal == Terminal::Alive && g < 1.0 && rng.bernoulli(1.0 - g)) out.terminal = Terminal::FailedByGamma;
  return out;
}

/// Bitmask over discrete action ids; a set bit means the action is masked.
using ActionMask = std::uint32_t;

inline bool is_masked(ActionMask mask, int action) noexcept {
  return action >= 0 && action < 32 && (mask >> action) & 1u;
}

/// Scripted expert. Throws UnsolvableState when its action is masked.
inline Action expert_action(EnvId env, const State& s, ActionMask mask = 0) {
  Action a;
  switch (env.kind) {
    case EnvKind::MultiKeyNav: a = Action::discrete(multikeynav::expert_action(s, env.variant)); break;
    case EnvKind::CartPoleVar: a = Action::discrete(cartpole_var::expert_action(s)); break;
    case EnvKind::PointMass: a = point_mass::expert_action(s); break;
  }
  if (is_discrete(env) && is_masked(mask, a.id))
    throw UnsolvableState("expert needs masked action " + std::to_string(a.id) + " in " + to_string(env));
  return a;
}

// ---------------------------------------------------------------------------
// Biased task distributions.

struct TaskBias {
  enum class Kind { None, DoorType, ForceSignType, GateLeft, GateRight };
  Kind kind = Kind::None;
  int door = 0;        // 1..4
  int force_sign = 0;  // +1 / -1
  int task_type = 0;   // 0 / 1

  bool accepts(const Task& t) const noexcept {
    const State& s = t.state0;
    switch (kind) {
      case Kind::None: return true;
      case Kind::DoorType: return multikeynav::door_type(s) + 1 == door;
      case Kind::ForceSignType: return (s[4] > 0.0 ? 1 : -1) == force_sign && static_cast<int>(s[5]) == task_type;
      case Kind::GateLeft: return s[4] + 0.5 * s[5] < 0.0;
      case Kind::GateRight: return s[4] + 0.5 * s[5] >= 0.0;
    }
    return true;
  }

  bool valid_for(EnvId env) const noexcept {
    switch (kind) {
      case Kind::None: return true;
      case Kind::DoorType: return env.kind == EnvKind::MultiKeyNav;
      case Kind::ForceSignType: return env.kind == EnvKind::CartPoleVar;
      case Kind::GateLeft:
      case Kind::GateRight: return env.kind == EnvKind::PointMass;
    }
    return false;
  }

  friend bool operator==(const TaskBias&, const TaskBias&) = default;
};

inline std::string to_string(const TaskBias& b) {
  switch (b.kind) {
    case TaskBias::Kind::None: return "none";
    case TaskBias::Kind::DoorType: return "door" + std::to_string(b.door);
    case TaskBias::Kind::ForceSignType:
      return std::string(b.force_sign > 0 ? "force+" : "force-") + "type" + std::to_string(b.task_type);
    case TaskBias::Kind::GateLeft: return "gate-left";
    case TaskBias::Kind::GateRight: return "gate-right";
  }
  return "none";
}

/// Accepts: none, door1..door4, force+type0, force+type1, force-type0,
/// force-type1, gate-left, gate-right.
inline TaskBias parse_bias(std::string_view s) {
  TaskBias b;
  if (s == "none" || s.empty()) return b;
  if (s.size() == 5 && s.substr(0, 4) == "door" && s[4] >= '1' && s[4] <= '4') {
    b.kind = TaskBias::Kind::DoorType;
    b.door = s[4] - '0';
    return b;
  }
  if (s.size() == 11 && s.substr(0, 5) == "force" && (s[5] == '+' || s[5] == '-') && s.substr(6, 4) == "type" &&
      (s[10] == '0' || s[10] == '1')) {
    b.kind = TaskBias::Kind::ForceSignType;
    b.force_sign = s[5] == '+' ? 1 : -1;
    b.task_type = s[10] - '0';
    return b;
  }
  if (s == "gate-left") {
    b.kind = TaskBias::Kind::GateLeft;
    return b;
  }
  if (s == "gate-right") {
    b.kind = TaskBias::Kind::GateRight;
    return b;
  }
  throw ParseError("unknown task bias '" + std::string(s) + "'");
}

inline constexpr std::size_t kMaxRejections = 100000;

/// Draws a task from the environment's initial-state distribution,
/// restricted to `bias` by rejection.
inline Task sample_task(EnvId env, Rng& rng, const TaskBias& bias = {}) {
  if (!bias.valid_for(env)) throw Error("task bias '" + to_string(bias) + "' does not apply to " + to_string(env));
  for (std::size_t attempt = 0; attempt < kMaxRejections; ++attempt) {
    Task t{env, {}};
    switch (env.kind) {
      case EnvKind::MultiKeyNav: t.state0 = multikeynav::sample(rng); break;
      case EnvKind::CartPoleVar: t.state0 = cartpole_var::sample(rng); break;
      case EnvKind::PointMass: t.state0 = point_mass::sample(rng); break;
    }
    if (bias.accepts(t)) return t;
  }
  throw Error("task bias '" + to_string(bias) + "' rejected " + std::to_string(kMaxRejections) + " consecutive draws");
}

template <typename Predicate>
Task sample_task_if(EnvId env, Rng& rng, Predicate&& pred) {
  for (std::size_t attempt = 0; attempt < kMaxRejections; ++attempt) {
    Task t = sample_task(env, rng);
    if (pred(t)) return t;
  }
  throw Error("task filter rejected " + std::to_string(kMaxRejections) + " consecutive draws");
}

}  // namespace taskemb
