#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taskemb/numcore/error.hpp"

namespace taskemb {

enum class EnvKind { MultiKeyNav, CartPoleVar, PointMass };

/// Door-requirement variants; only meaningful for MultiKeyNav.
enum class KeyVariant { Standard, AllDoorsAB, AllDoorsA };

struct EnvId {
  EnvKind kind = EnvKind::MultiKeyNav;
  KeyVariant variant = KeyVariant::Standard;

  friend bool operator==(const EnvId&, const EnvId&) = default;
};

inline constexpr std::array<std::string_view, 3> kEnvNames{"MultiKeyNav", "CartPoleVar", "PointMass"};
inline constexpr std::array<std::string_view, 3> kVariantNames{"Standard", "AllDoorsAB", "AllDoorsA"};

inline std::string to_string(EnvId id) {
  std::string s(kEnvNames[static_cast<std::size_t>(id.kind)]);
  if (id.kind == EnvKind::MultiKeyNav && id.variant != KeyVariant::Standard)
    s += "/" + std::string(kVariantNames[static_cast<std::size_t>(id.variant)]);
  return s;
}

inline std::string valid_env_names() {
  return "MultiKeyNav, MultiKeyNav/AllDoorsAB, MultiKeyNav/AllDoorsA, CartPoleVar, PointMass";
}

/// Parses "MultiKeyNav", "MultiKeyNav/AllDoorsA", "CartPoleVar", "PointMass".
inline EnvId parse_env(std::string_view s) {
  const auto slash = s.find('/');
  const std::string_view base = s.substr(0, slash);
  EnvId id;
  bool found = false;
  for (std::size_t i = 0; i < kEnvNames.size(); ++i)
    if (base == kEnvNames[i]) {
      id.kind = static_cast<EnvKind>(i);
      found = true;
    }
  if (!found) throw ParseError("unknown environment '" + std::string(s) + "'; valid: " + valid_env_names());
  if (slash != std::string_view::npos) {
    if (id.kind != EnvKind::MultiKeyNav)
      throw ParseError("variant flags are only valid for MultiKeyNav, got '" + std::string(s) + "'");
    const std::string_view var = s.substr(slash + 1);
    found = false;
    for (std::size_t i = 0; i < kVariantNames.size(); ++i)
      if (var == kVariantNames[i]) {
        id.variant = static_cast<KeyVariant>(i);
        found = true;
      }
    if (!found) throw ParseError("unknown MultiKeyNav variant '" + std::string(var) + "'; valid: " + valid_env_names());
  }
  return id;
}

/// Every environment here has a 7-component state.
inline constexpr std::size_t kStateDim = 7;
using State = std::array<double, kStateDim>;

/// A task is an initial state of an environment.
struct Task {
  EnvId env;
  State state0{};

  friend bool operator==(const Task&, const Task&) = default;
};

enum class Terminal { Alive, Solved, Crashed, TimedOut, FailedByGamma };

inline std::string_view to_string(Terminal t) noexcept {
  switch (t) {
    case Terminal::Alive: return "Alive";
    case Terminal::Solved: return "Solved";
    case Terminal::Crashed: return "Crashed";
    case Terminal::TimedOut: return "TimedOut";
    case Terminal::FailedByGamma: return "FailedByGamma";
  }
  return "Alive";
}

/// Discrete environments use `id`; PointMass uses `force`.
struct Action {
  int id = -1;
  std::array<double, 2> force{};

  static Action discrete(int a) { return Action{a, {}}; }
  static Action continuous(double fx, double fy) { return Action{-1, {fx, fy}}; }

  friend bool operator==(const Action&, const Action&) = default;
};

struct StepOutcome {
  State next_state{};
  int reward = 0;
  Terminal terminal = Terminal::Alive;
};

struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  StepOutcome final;
};

}  // namespace taskemb
