#pragma once

#include <concepts>
#include <optional>

#include "taskemb/envs/env.hpp"

namespace taskemb {

/// Anything that maps a state to an action, possibly stochastically.
template <typename P>
concept PolicyLike = requires(P& p, const State& s, Rng& rng) {
  { p(s, rng) } -> std::convertible_to<Action>;
};

struct RolloutResult {
  bool success = false;
  Terminal terminal = Terminal::Alive;
  int steps = 0;
  std::optional<Trajectory> trajectory;
};

/// Runs one episode from the task's initial state until a terminal event
/// or the horizon. success is the optimality outcome o_s.
template <PolicyLike Policy>
RolloutResult rollout(const Task& task, Policy& policy, Rng& rng, bool record = false) {
  const EnvId env = task.env;
  const int h = horizon(env);
  RolloutResult result;
  if (record) result.trajectory.emplace();
  State s = task.state0;
  for (int t = 0; t < h; ++t) {
    const Action a = policy(s, rng);
    StepOutcome out = step(env, s, a, rng);
    if (record) {
      result.trajectory->states.push_back(s);
      result.trajectory->actions.push_back(a);
    }
    result.steps = t + 1;
    if (out.terminal == Terminal::Alive && t + 1 == h) out.terminal = Terminal::TimedOut;
    if (out.terminal != Terminal::Alive) {
      result.terminal = out.terminal;
      result.success = out.terminal == Terminal::Solved;
      if (record) result.trajectory->final = out;
      return result;
    }
    s = out.next_state;
  }
  result.terminal = Terminal::TimedOut;
  return result;
}

/// The scripted expert as a policy.
struct ExpertPolicy {
  EnvId env;
  ActionMask mask = 0;
  Action operator()(const State& s, Rng&) const { return expert_action(env, s, mask); }
};

/// Uniform over unmasked discrete actions, or uniform over the force box.
struct UniformRandomPolicy {
  EnvId env;
  Action operator()(const State&, Rng& rng) const {
    if (is_discrete(env)) return Action::discrete(static_cast<int>(rng.below(static_cast<std::uint64_t>(action_dim(env)))));
    return Action::continuous(rng.uniform(-point_mass::kMaxForce, point_mass::kMaxForce),
                              rng.uniform(-point_mass::kMaxForce, point_mass::kMaxForce));
  }
};

}  // namespace taskemb
