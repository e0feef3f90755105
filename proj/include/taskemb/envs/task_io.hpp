#pragma once

#include <array>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "taskemb/envs/env.hpp"
#include "taskemb/numcore/mlp.hpp"
#include "taskemb/numcore/text.hpp"

// Task files are CSV with one task per row. The first column is the
// environment id; the remaining seven follow the state layout:
//   MultiKeyNav: location,keyA,keyB,keyC,keyD,doorBit1,doorBit2
//   CartPoleVar: x,v,theta,omega,F,taskType,numSteps
//   PointMass:   x,vx,y,vy,gatePosition,gateWidth,friction
namespace taskemb {

inline std::array<std::string_view, kStateDim> state_columns(EnvId env) noexcept {
  switch (env.kind) {
    case EnvKind::MultiKeyNav: return {"location", "keyA", "keyB", "keyC", "keyD", "doorBit1", "doorBit2"};
    case EnvKind::CartPoleVar: return {"x", "v", "theta", "omega", "F", "taskType", "numSteps"};
    case EnvKind::PointMass: return {"x", "vx", "y", "vy", "gatePosition", "gateWidth", "friction"};
  }
  return {};
}

inline std::string task_csv_header(EnvId env) {
  std::string h = "env";
  for (auto c : state_columns(env)) {
    h += ',';
    h += c;
  }
  return h;
}

inline void write_tasks(std::ostream& os, std::span<const Task> tasks) {
  if (tasks.empty()) {
    os << "env\n";
    return;
  }
  os << task_csv_header(tasks.front().env) << '\n';
  for (const Task& t : tasks) {
    os << to_string(t.env);
    for (double v : t.state0) os << ',' << format_double(v);
    os << '\n';
  }
}

inline std::vector<Task> read_tasks(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("task file: missing header");
  std::vector<Task> tasks;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cols = split(trim(line), ',');
    if (cols.size() != kStateDim + 1)
      throw ParseError("task file row " + std::to_string(row) + ": expected 8 columns, got " +
                       std::to_string(cols.size()));
    Task t;
    t.env = parse_env(cols[0]);
    for (std::size_t i = 0; i < kStateDim; ++i) t.state0[i] = parse_double(cols[i + 1]);
    if (!valid_state(t.env, t.state0))
      throw ParseError("task file row " + std::to_string(row) + ": state violates " + to_string(t.env) + " bounds");
    tasks.push_back(t);
  }
  return tasks;
}

}  // namespace taskemb
