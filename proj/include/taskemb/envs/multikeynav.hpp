#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "taskemb/envs/types.hpp"
#include "taskemb/numcore/rng.hpp"

// Navigation on the segment [0, 1]: collect the keys the door needs, then
// `finish` on the door segment.
//
// State layout: (location, keyA, keyB, keyC, keyD, doorBit1, doorBit2).
namespace taskemb::multikeynav {

enum ActionId : int { kMoveLeft = 0, kMoveRight, kPickA, kPickB, kPickC, kPickD, kFinish };
inline constexpr int kNumActions = 7;
inline constexpr int kHorizon = 40;
inline constexpr double kGamma = 0.999;
inline constexpr double kStepSize = 0.075;
inline constexpr double kStepNoise = 0.01;

/// Key k (0..3) lies on [0.2k, 0.2k + 0.1].
inline constexpr double key_lo(int k) noexcept { return 0.2 * k; }
inline constexpr double key_hi(int k) noexcept { return 0.2 * k + 0.1; }
inline constexpr double kDoorLo = 0.9;
inline constexpr double kDoorHi = 1.0;

inline bool on_key(double loc, int k) noexcept { return loc >= key_lo(k) && loc <= key_hi(k); }
inline bool on_door(double loc) noexcept { return loc >= kDoorLo && loc <= kDoorHi; }

/// Door type 0..3 (Type 1..4 in 1-based naming) from the two door bits.
inline int door_type(const State& s) noexcept {
  return (s[5] > 0.5 ? 2 : 0) + (s[6] > 0.5 ? 1 : 0);
}

/// Key bitmask (A=1, B=2, C=4, D=8) the door requires.
inline unsigned required_keys(int door, KeyVariant variant) noexcept {
  switch (variant) {
    case KeyVariant::AllDoorsAB: return 0b0011;
    case KeyVariant::AllDoorsA: return 0b0001;
    case KeyVariant::Standard: break;
  }
  static constexpr std::array<unsigned, 4> kDoors{0b0011, 0b0101, 0b1010, 0b1100};
  return kDoors[static_cast<std::size_t>(door)];
}

inline unsigned possessed_keys(const State& s) noexcept {
  unsigned m = 0;
  for (int k = 0; k < 4; ++k)
    if (s[1 + k] > 0.5) m |= 1u << k;
  return m;
}

/// Keys the door needs that the agent does not hold yet.
inline unsigned missing_keys(const State& s, KeyVariant variant) noexcept {
  return required_keys(door_type(s), variant) & ~possessed_keys(s);
}

inline bool valid_state(const State& s) noexcept {
  if (!(s[0] >= 0.0 && s[0] <= 1.0)) return false;
  for (int i = 1; i < 7; ++i)
    if (s[i] != 0.0 && s[i] != 1.0) return false;
  return true;
}

/// Dynamics only; gamma failure is applied by the caller.
inline StepOutcome step(const State& s, int action, KeyVariant variant, Rng& rng) {
  if (action < 0 || action >= kNumActions)
    throw InvalidAction("MultiKeyNav action must be in [0, 7), got " + std::to_string(action));
  StepOutcome out;
  out.next_state = s;
  double& loc = out.next_state[0];
  switch (action) {
    case kMoveLeft:
    case kMoveRight: {
      const double delta = kStepSize + rng.uniform(-kStepNoise, kStepNoise);
      loc = std::clamp(loc + (action == kMoveLeft ? -delta : delta), 0.0, 1.0);
      break;
    }
    case kPickA:
    case kPickB:
    case kPickC:
    case kPickD: {
      const int k = action - kPickA;
      if (on_key(loc, k))
        out.next_state[1 + k] = 1.0;
      else
        out.terminal = Terminal::Crashed;
      break;
    }
    case kFinish:
      if (on_door(loc) && missing_keys(s, variant) == 0) {
        out.terminal = Terminal::Solved;
        out.reward = 1;
      } else {
        out.terminal = Terminal::Crashed;
      }
      break;
    default:
      break;
  }
  return out;
}

/// Scripted expert: walk to the leftmost missing required key, pick it,
/// repeat; then walk onto the door and finish.
inline int expert_action(const State& s, KeyVariant variant) noexcept {
  const double loc = s[0];
  const unsigned missing = missing_keys(s, variant);
  if (missing != 0) {
    int k = 0;
    while (!(missing & (1u << k))) ++k;
    if (on_key(loc, k)) return kPickA + k;
    return loc < key_lo(k) ? kMoveRight : kMoveLeft;
  }
  return on_door(loc) ? kFinish : kMoveRight;
}

inline State sample(Rng& rng) {
  State s{};
  s[0] = rng.uniform();
  for (int i = 1; i < 7; ++i) s[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return s;
}

}  // namespace taskemb::multikeynav
