#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "taskemb/numcore/parallel.hpp"
#include "taskemb/numcore/text.hpp"
#include "taskemb/population/training.hpp"

namespace taskemb {

/// One subpopulation: how its agents are trained and handicapped.
struct SubpopSpec {
  TrainingMethod method = TrainingMethod::BehavioralCloning;
  ActionMask mask = 0;
  TaskBias bias;

  friend bool operator==(const SubpopSpec&, const SubpopSpec&) = default;
};

struct Recipe {
  std::string name;
  std::vector<SubpopSpec> subpops;
  /// Total snapshots kept across subpopulations (0 keeps everything).
  std::size_t target_size = 0;
};

inline std::string mask_to_string(ActionMask mask) {
  std::string s;
  for (int a = 0; a < 32; ++a)
    if (is_masked(mask, a)) s += (s.empty() ? "" : ",") + std::to_string(a);
  return s.empty() ? "none" : s;
}

inline ActionMask parse_mask(std::string_view s) {
  if (s == "none" || s.empty()) return 0;
  ActionMask m = 0;
  for (const auto& tok : split(s, ',')) {
    const int a = static_cast<int>(parse_double(trim(tok)));
    if (a < 0 || a >= 32) throw ParseError("action mask index out of range: " + tok);
    m |= 1u << a;
  }
  return m;
}

inline std::string to_string(const SubpopSpec& s) {
  return to_string(s.method) + "/mask=" + mask_to_string(s.mask) + "/bias=" + to_string(s.bias);
}

/// Parses "bc/mask=2,3/bias=door1"; the mask and bias parts are optional.
inline SubpopSpec parse_subpop(std::string_view s) {
  const auto parts = split(trim(s), '/');
  SubpopSpec spec;
  spec.method = parse_method(trim(parts[0]));
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string_view p = trim(parts[i]);
    if (p.starts_with("mask="))
      spec.mask = parse_mask(p.substr(5));
    else if (p.starts_with("bias="))
      spec.bias = parse_bias(p.substr(5));
    else
      throw ParseError("bad subpopulation field '" + std::string(p) + "'");
  }
  return spec;
}

/// Named recipes:
///   default     per-environment recipe (masking for MultiKeyNav, force/type
///               biases for CartPoleVar, gate-side biases for PointMass)
///   door-bias   MultiKeyNav: all tasks plus one subpopulation per door type
///   masked-keys MultiKeyNav: every pickKey action masked
///   pg          CartPoleVar: default subpopulations trained with REINFORCE
/// Anything else is read as ';'-separated subpopulation specs.
inline Recipe make_recipe(EnvId env, std::string_view name, std::size_t target_size) {
  Recipe r;
  r.name = std::string(name);
  r.target_size = target_size;
  auto bc = [](ActionMask m, TaskBias b) { return SubpopSpec{TrainingMethod::BehavioralCloning, m, b}; };
  const ActionMask all_keys = 0b0111100;
  if (name == "default" || name == "pg") {
    switch (env.kind) {
      case EnvKind::MultiKeyNav:
        r.subpops.push_back(bc(0, {}));
        for (int k = 0; k < 4; ++k) r.subpops.push_back(bc(1u << (multikeynav::kPickA + k), {}));
        r.subpops.push_back(bc(all_keys, {}));
        break;
      case EnvKind::CartPoleVar:
        r.subpops.push_back(bc(0, {}));
        for (const char* b : {"force+type0", "force+type1", "force-type0", "force-type1"})
          r.subpops.push_back(bc(0, parse_bias(b)));
        break;
      case EnvKind::PointMass:
        r.subpops.push_back(bc(0, {}));
        r.subpops.push_back(bc(0, parse_bias("gate-left")));
        r.subpops.push_back(bc(0, parse_bias("gate-right")));
        break;
    }
    if (name == "pg")
      for (auto& s : r.subpops) s.method = TrainingMethod::PolicyGradient;
    return r;
  }
  if (name == "door-bias") {
    if (env.kind != EnvKind::MultiKeyNav) throw ParseError("recipe door-bias only applies to MultiKeyNav");
    r.subpops.push_back(bc(0, {}));
    for (int d = 1; d <= 4; ++d) r.subpops.push_back(bc(0, parse_bias("door" + std::to_string(d))));
    return r;
  }
  if (name == "masked-keys") {
    if (env.kind != EnvKind::MultiKeyNav) throw ParseError("recipe masked-keys only applies to MultiKeyNav");
    r.subpops.push_back(bc(all_keys, {}));
    return r;
  }
  for (const auto& part : split(name, ';'))
    if (!trim(part).empty()) r.subpops.push_back(parse_subpop(part));
  for (const auto& s : r.subpops)
    if (!s.bias.valid_for(env)) throw ParseError("bias " + to_string(s.bias) + " does not apply to " + to_string(env));
  return r;
}

struct Population {
  EnvId env;
  std::vector<AgentSnapshot> agents;

  std::size_t size() const noexcept { return agents.size(); }

  /// One rollout of agent `k` on `task`; returns the optimality outcome.
  bool success(std::size_t k, const Task& task, Rng& rng) const {
    PolicyActor actor(agents[k].policy);
    return rollout(task, actor, rng).success;
  }

  Population subset(std::span<const std::size_t> indices) const {
    Population p{env, {}};
    for (auto i : indices) p.agents.push_back(agents[i]);
    return p;
  }
};

/// Keeps `keep` of `n` snapshot indices evenly spaced, always including the
/// first (untrained) and the last.
inline std::vector<std::size_t> thin_indices(std::size_t n, std::size_t keep) {
  std::vector<std::size_t> idx;
  if (keep >= n) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  if (keep == 1) return {0};
  for (std::size_t j = 0; j < keep; ++j) {
    const double pos = static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(keep - 1);
    idx.push_back(static_cast<std::size_t>(std::lround(pos)));
  }
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

/// Splits `target` across groups holding `counts` snapshots (water filling).
inline std::vector<std::size_t> allocate_quota(std::span<const std::size_t> counts, std::size_t target) {
  std::vector<std::size_t> q(counts.size(), 0);
  std::size_t left = target;
  bool progress = true;
  while (left > 0 && progress) {
    progress = false;
    for (std::size_t i = 0; i < counts.size() && left > 0; ++i)
      if (q[i] < counts[i]) {
        ++q[i];
        --left;
        progress = true;
      }
  }
  return q;
}

struct PopulationConfig {
  BcConfig bc;
  PgConfig pg;
  /// Size of S_snap when it is sampled (CartPoleVar, PointMass).
  std::size_t snap_tasks = 0;
  int snap_rollouts = 10;
  double delta_snap = 0.01;
  std::size_t threads = 0;
};

/// Validation tasks for the snapshot rule. MultiKeyNav uses the full grid of
/// locations {0.05, 0.45, 0.85} x key statuses x door types; the others
/// sample `count` tasks.
inline std::vector<Task> snapshot_tasks(EnvId env, std::size_t count, std::uint64_t seed) {
  std::vector<Task> tasks;
  if (env.kind == EnvKind::MultiKeyNav) {
    for (double loc : {0.05, 0.45, 0.85})
      for (unsigned keys = 0; keys < 16; ++keys)
        for (unsigned door = 0; door < 4; ++door) {
          Task t{env, {}};
          t.state0[0] = loc;
          for (int k = 0; k < 4; ++k) t.state0[1 + k] = (keys >> k) & 1u ? 1.0 : 0.0;
          t.state0[5] = door & 2u ? 1.0 : 0.0;
          t.state0[6] = door & 1u ? 1.0 : 0.0;
          tasks.push_back(t);
        }
    return tasks;
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) tasks.push_back(sample_task(env, rng));
  return tasks;
}

inline std::size_t default_snap_tasks(EnvId env) noexcept {
  switch (env.kind) {
    case EnvKind::MultiKeyNav: return 192;
    case EnvKind::CartPoleVar: return 1000;
    case EnvKind::PointMass: return 100;
  }
  return 100;
}

/// Trains every subpopulation of the recipe (independent seeds) and
/// concatenates their snapshots, thinned to the recipe's target size.
inline Population build_population(EnvId env, const Recipe& recipe, const PopulationConfig& cfg, std::uint64_t seed) {
  if (recipe.subpops.empty()) throw Error("population recipe '" + recipe.name + "' has no subpopulations");
  const std::size_t n_snap = cfg.snap_tasks == 0 ? default_snap_tasks(env) : cfg.snap_tasks;
  SnapshotRule rule{snapshot_tasks(env, n_snap, derive_seed(seed, 0xA11)), cfg.snap_rollouts, cfg.delta_snap,
                    derive_seed(seed, 0xE7A1)};
  std::vector<std::vector<AgentSnapshot>> groups(recipe.subpops.size());
  parallel_for(recipe.subpops.size(), cfg.threads, [&](std::size_t i) {
    const SubpopSpec& spec = recipe.subpops[i];
    Rng rng(derive_seed(seed, 0x5B, i));
    groups[i] = spec.method == TrainingMethod::BehavioralCloning ? train_bc(env, spec.mask, spec.bias, rule, cfg.bc, rng)
                                                                 : train_pg(env, spec.mask, spec.bias, rule, cfg.pg, rng);
  });
  std::vector<std::size_t> counts;
  for (const auto& g : groups) counts.push_back(g.size());
  std::size_t total = 0;
  for (auto c : counts) total += c;
  const std::vector<std::size_t> quota =
      recipe.target_size == 0 || recipe.target_size >= total ? counts : allocate_quota(counts, recipe.target_size);
  Population pop{env, {}};
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (auto j : thin_indices(groups[i].size(), quota[i])) {
      AgentSnapshot a = groups[i][j];
      a.provenance.subpopulation = i;
      pop.agents.push_back(std::move(a));
    }
  return pop;
}

/// Any agent population: size() agents, success(k, task, rng) rolls agent k
/// out once.
template <typename P>
concept AgentPopulation = requires(const P& p, std::size_t k, const Task& t, Rng& rng) {
  { p.size() } -> std::convertible_to<std::size_t>;
  { p.success(k, t, rng) } -> std::convertible_to<bool>;
};

/// PoS(task): mean outcome over `reps_per_agent` rollouts of every agent.
template <AgentPopulation Pop>
double estimate_pos(const Task& task, const Pop& population, int reps_per_agent, Rng& rng) {
  if (reps_per_agent < 1) throw Error("estimate_pos: reps_per_agent must be >= 1");
  const std::uint64_t base = rng();
  std::size_t wins = 0;
  for (std::size_t k = 0; k < population.size(); ++k)
    for (int r = 0; r < reps_per_agent; ++r) {
      Rng sub(derive_seed(base, k, static_cast<std::uint64_t>(r)));
      wins += population.success(k, task, sub) ? 1 : 0;
    }
  return static_cast<double>(wins) / static_cast<double>(population.size() * static_cast<std::size_t>(reps_per_agent));
}

// ---------------------------------------------------------------------------
// Population directory: `manifest` plus agent_<k>.txt weight files.

inline void save_population(const Population& pop, const std::string& dir, const std::string& recipe,
                            std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::ostringstream m;
  m << "env = " << to_string(pop.env) << '\n';
  m << "recipe = " << recipe << '\n';
  m << "seed = " << seed << '\n';
  m << "agents = " << pop.size() << '\n';
  for (std::size_t k = 0; k < pop.size(); ++k) {
    const auto& a = pop.agents[k];
    m << "agent " << k << " method=" << to_string(a.provenance.method) << " mask=" << mask_to_string(a.policy.mask)
      << " bias=" << to_string(a.provenance.bias) << " subpop=" << a.provenance.subpopulation
      << " snapshot=" << a.provenance.snapshot_index << " score=" << format_double(a.provenance.validation_score)
      << " log_std=" << format_double(a.policy.log_std) << '\n';
    std::ostringstream w;
    write_mlp(w, a.policy.net);
    write_file(dir + "/agent_" + std::to_string(k) + ".txt", w.str());
  }
  write_file(dir + "/manifest", m.str());
}

inline Population load_population(const std::string& dir) {
  std::istringstream m(read_file(dir + "/manifest"));
  Population pop;
  std::string line;
  std::size_t expected = 0;
  while (std::getline(m, line)) {
    const std::string_view l = trim(line);
    if (l.empty()) continue;
    if (l.starts_with("agent ")) {
      const auto fields = split(l, ' ');
      AgentSnapshot a;
      a.policy.env = pop.env;
      for (std::size_t i = 2; i < fields.size(); ++i) {
        const auto eq = fields[i].find('=');
        if (eq == std::string::npos) throw ParseError("population manifest: bad field '" + fields[i] + "'");
        const std::string key = fields[i].substr(0, eq), val = fields[i].substr(eq + 1);
        if (key == "method") a.provenance.method = parse_method(val);
        else if (key == "mask") a.policy.mask = a.provenance.mask = parse_mask(val);
        else if (key == "bias") a.provenance.bias = parse_bias(val);
        else if (key == "subpop") a.provenance.subpopulation = static_cast<std::size_t>(std::stoull(val));
        else if (key == "snapshot") a.provenance.snapshot_index = static_cast<std::size_t>(std::stoull(val));
        else if (key == "score") a.provenance.validation_score = parse_double(val);
        else if (key == "log_std") a.policy.log_std = parse_double(val);
      }
      std::istringstream w(read_file(dir + "/agent_" + fields[1] + ".txt"));
      a.policy.net = read_mlp(w);
      const auto sizes = policy_layer_sizes(pop.env);
      bool shape_ok = a.policy.net.layers.size() + 1 == sizes.size();
      for (std::size_t i = 0; shape_ok && i < a.policy.net.layers.size(); ++i)
        shape_ok = a.policy.net.layers[i].in == sizes[i] && a.policy.net.layers[i].out == sizes[i + 1];
      if (!shape_ok)
        throw ParseError("population: agent " + fields[1] + " does not match the policy architecture for " +
                         to_string(pop.env));
      pop.agents.push_back(std::move(a));
      continue;
    }
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string_view key = trim(l.substr(0, eq)), val = trim(l.substr(eq + 1));
    if (key == "env") pop.env = parse_env(val);
    if (key == "agents") expected = static_cast<std::size_t>(std::stoull(std::string(val)));
  }
  if (pop.agents.empty() || pop.agents.size() != expected)
    throw ParseError("population manifest in '" + dir + "' lists " + std::to_string(expected) + " agents, found " +
                     std::to_string(pop.agents.size()));
  return pop;
}

}  // namespace taskemb
