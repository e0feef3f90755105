#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "taskemb/envs/types.hpp"
#include "taskemb/numcore/mlp.hpp"
#include "taskemb/numcore/rng.hpp"
#include "taskemb/numcore/text.hpp"

namespace taskemb {

/// Invalid or incomplete run configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Seeds {
  std::uint64_t root = 0;
  std::uint64_t population = 0;
  std::uint64_t constraints = 0;
  std::uint64_t training = 0;
  std::uint64_t benchmarks = 0;

  friend bool operator==(const Seeds&, const Seeds&) = default;
};

struct PopulationSettings {
  std::string recipe = "default";
  std::size_t target_size = 40;
  std::size_t snap_tasks = 0;  // 0: environment default
  int snap_rollouts = 10;
  double delta_snap = 0.01;
  int bc_max_epochs = 300;
  int bc_patience = 30;
  double bc_learning_rate = 3e-3;
  int bc_expert_samples = 3000;
  int bc_batch_size = 64;
  int pg_max_epochs = 300;
  int pg_patience = 30;
  double pg_learning_rate = 3e-3;
  int pg_episodes_per_batch = 16;
  int pg_batches_per_epoch = 8;
  std::string pg_returns = "binary";

  friend bool operator==(const PopulationSettings&, const PopulationSettings&) = default;
};

struct ConstraintSettings {
  std::size_t pool_size = 1000;
  std::size_t reps_per_agent = 100;
  double holdout_fraction = 0.2;
  std::size_t n_mi_train = 2000;
  std::size_t n_norm_train = 2000;
  std::size_t n_mi_val = 500;
  std::size_t n_norm_val = 500;
  std::size_t n_mi_test = 500;
  std::size_t n_norm_test = 500;
  int pos_reps = 10;

  friend bool operator==(const ConstraintSettings&, const ConstraintSettings&) = default;
};

struct TrainingSettings {
  std::size_t dim = 0;  // 0: environment default
  double lambda = 0.4;
  int epochs = 300;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  int patience = 20;
  bool wonorm = true;  // also train the lambda = 0 variant

  friend bool operator==(const TrainingSettings&, const TrainingSettings&) = default;
};

struct SilhouetteSettings {
  std::size_t eval_tasks = 1000;
  std::size_t random_models = 5;
  std::size_t spearman_tasks = 500;
  int pos_reps = 10;

  friend bool operator==(const SilhouetteSettings&, const SilhouetteSettings&) = default;
};

struct PredictionSettings {
  std::size_t examples = 1000;
  std::size_t tune_examples = 200;
  std::size_t max_quiz_size = 20;
  std::string agent_population;  // population directory for hidden agents; empty: this run's

  friend bool operator==(const PredictionSettings&, const PredictionSettings&) = default;
};

struct SelectionSettings {
  std::size_t datasets = 4;
  std::size_t examples = 50;
  std::size_t easy_pool = 500;
  std::size_t similarity_reps = 100;
  std::size_t difficulty_reps = 10;

  friend bool operator==(const SelectionSettings&, const SelectionSettings&) = default;
};

struct DimSweepSettings {
  std::size_t min_dim = 1;
  std::size_t max_dim = 10;

  friend bool operator==(const DimSweepSettings&, const DimSweepSettings&) = default;
};

struct PredModelSettings {
  bool enabled = true;
  std::size_t rollouts = 500;
  int epochs = 100;
  std::size_t batch_size = 512;
  double learning_rate = 1e-3;
  std::size_t latent_dim = 0;
  double alpha_r = 1.0;
  double alpha_s = 1.0;
  double beta_kl = 0.01;

  friend bool operator==(const PredModelSettings&, const PredModelSettings&) = default;
};

struct VizSettings {
  std::size_t tasks = 1000;

  friend bool operator==(const VizSettings&, const VizSettings&) = default;
};

struct RunConfig {
  EnvId env;
  std::string output_dir = "runs/default-v1";
  std::size_t threads = 0;  // 0: hardware concurrency
  Seeds seeds;
  PopulationSettings population;
  ConstraintSettings constraints;
  TrainingSettings training;
  SilhouetteSettings silhouette;
  PredictionSettings prediction;
  SelectionSettings selection;
  DimSweepSettings dim_sweep;
  PredModelSettings predmodel;
  VizSettings viz;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ---------------------------------------------------------------------------
// Flat `key = value` text with [sections]; '#' starts a comment.

/// section -> key -> value, keeping the line number of each entry.
struct ConfigText {
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  std::map<std::string, std::map<std::string, Entry>> sections;
};

inline ConfigText parse_config_text(std::string_view text, const std::string& origin = "config") {
  ConfigText c;
  std::string section;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ConfigError(where + "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside of any [section]");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + "empty key");
    auto& sec = c.sections[section];
    if (sec.count(key)) throw ConfigError(where + "duplicate key [" + section + "] " + key);
    sec[key] = {std::string(trim(line.substr(eq + 1))), lineno};
  }
  return c;
}

namespace detail {

inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(double v) { return format_double(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(EnvId v) { return to_string(v); }
template <typename T>
  requires std::is_integral_v<T>
std::string format_value(T v) {
  return std::to_string(v);
}

inline void parse_value(std::string_view s, std::string& out) { out = std::string(s); }
inline void parse_value(std::string_view s, double& out) { out = parse_double(s); }
inline void parse_value(std::string_view s, EnvId& out) { out = parse_env(s); }
inline void parse_value(std::string_view s, bool& out) {
  if (s == "true") out = true;
  else if (s == "false") out = false;
  else throw ParseError("expected true or false, got '" + std::string(s) + "'");
}
template <typename T>
  requires std::is_integral_v<T>
void parse_value(std::string_view s, T& out) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ParseError("expected a non-negative integer, got '" + std::string(s) + "'");
  out = v;
}

}  // namespace detail

/// One configuration key bound to a RunConfig member.
struct ConfigField {
  std::string section;
  std::string key;
  bool required = false;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename Access>
ConfigField make_field(std::string section, std::string key, Access access, bool required = false) {
  return {std::move(section), std::move(key), required,
          [access](const RunConfig& c) { return detail::format_value(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, std::string_view v) { detail::parse_value(v, access(c)); }};
}

/// Every key, in file order.
inline const std::vector<ConfigField>& config_fields() {
#define TASKEMB_FIELD(sec, key, member, ...) \
  make_field(sec, key, [](RunConfig& c) -> auto& { return c.member; } __VA_OPT__(, ) __VA_ARGS__)
  static const std::vector<ConfigField> fields{
      TASKEMB_FIELD("run", "env", env, true),
      TASKEMB_FIELD("run", "output_dir", output_dir, true),
      TASKEMB_FIELD("run", "threads", threads),
      TASKEMB_FIELD("seeds", "root", seeds.root, true),
      TASKEMB_FIELD("seeds", "population", seeds.population, true),
      TASKEMB_FIELD("seeds", "constraints", seeds.constraints, true),
      TASKEMB_FIELD("seeds", "training", seeds.training, true),
      TASKEMB_FIELD("seeds", "benchmarks", seeds.benchmarks, true),
      TASKEMB_FIELD("population", "recipe", population.recipe),
      TASKEMB_FIELD("population", "target_size", population.target_size),
      TASKEMB_FIELD("population", "snap_tasks", population.snap_tasks),
      TASKEMB_FIELD("population", "snap_rollouts", population.snap_rollouts),
      TASKEMB_FIELD("population", "delta_snap", population.delta_snap),
      TASKEMB_FIELD("population", "bc_max_epochs", population.bc_max_epochs),
      TASKEMB_FIELD("population", "bc_patience", population.bc_patience),
      TASKEMB_FIELD("population", "bc_learning_rate", population.bc_learning_rate),
      TASKEMB_FIELD("population", "bc_expert_samples", population.bc_expert_samples),
      TASKEMB_FIELD("population", "bc_batch_size", population.bc_batch_size),
      TASKEMB_FIELD("population", "pg_max_epochs", population.pg_max_epochs),
      TASKEMB_FIELD("population", "pg_patience", population.pg_patience),
      TASKEMB_FIELD("population", "pg_learning_rate", population.pg_learning_rate),
      TASKEMB_FIELD("population", "pg_episodes_per_batch", population.pg_episodes_per_batch),
      TASKEMB_FIELD("population", "pg_batches_per_epoch", population.pg_batches_per_epoch),
      TASKEMB_FIELD("population", "pg_returns", population.pg_returns),
      TASKEMB_FIELD("constraints", "pool_size", constraints.pool_size),
      TASKEMB_FIELD("constraints", "reps_per_agent", constraints.reps_per_agent),
      TASKEMB_FIELD("constraints", "holdout_fraction", constraints.holdout_fraction),
      TASKEMB_FIELD("constraints", "n_mi_train", constraints.n_mi_train),
      TASKEMB_FIELD("constraints", "n_norm_train", constraints.n_norm_train),
      TASKEMB_FIELD("constraints", "n_mi_val", constraints.n_mi_val),
      TASKEMB_FIELD("constraints", "n_norm_val", constraints.n_norm_val),
      TASKEMB_FIELD("constraints", "n_mi_test", constraints.n_mi_test),
      TASKEMB_FIELD("constraints", "n_norm_test", constraints.n_norm_test),
      TASKEMB_FIELD("constraints", "pos_reps", constraints.pos_reps),
      TASKEMB_FIELD("training", "dim", training.dim),
      TASKEMB_FIELD("training", "lambda", training.lambda),
      TASKEMB_FIELD("training", "epochs", training.epochs),
      TASKEMB_FIELD("training", "batch_size", training.batch_size),
      TASKEMB_FIELD("training", "learning_rate", training.learning_rate),
      TASKEMB_FIELD("training", "patience", training.patience),
      TASKEMB_FIELD("training", "wonorm", training.wonorm),
      TASKEMB_FIELD("silhouette", "eval_tasks", silhouette.eval_tasks),
      TASKEMB_FIELD("silhouette", "random_models", silhouette.random_models),
      TASKEMB_FIELD("silhouette", "spearman_tasks", silhouette.spearman_tasks),
      TASKEMB_FIELD("silhouette", "pos_reps", silhouette.pos_reps),
      TASKEMB_FIELD("prediction", "examples", prediction.examples),
      TASKEMB_FIELD("prediction", "tune_examples", prediction.tune_examples),
      TASKEMB_FIELD("prediction", "max_quiz_size", prediction.max_quiz_size),
      TASKEMB_FIELD("prediction", "agent_population", prediction.agent_population),
      TASKEMB_FIELD("selection", "datasets", selection.datasets),
      TASKEMB_FIELD("selection", "examples", selection.examples),
      TASKEMB_FIELD("selection", "easy_pool", selection.easy_pool),
      TASKEMB_FIELD("selection", "similarity_reps", selection.similarity_reps),
      TASKEMB_FIELD("selection", "difficulty_reps", selection.difficulty_reps),
      TASKEMB_FIELD("dim_sweep", "min_dim", dim_sweep.min_dim),
      TASKEMB_FIELD("dim_sweep", "max_dim", dim_sweep.max_dim),
      TASKEMB_FIELD("predmodel", "enabled", predmodel.enabled),
      TASKEMB_FIELD("predmodel", "rollouts", predmodel.rollouts),
      TASKEMB_FIELD("predmodel", "epochs", predmodel.epochs),
      TASKEMB_FIELD("predmodel", "batch_size", predmodel.batch_size),
      TASKEMB_FIELD("predmodel", "learning_rate", predmodel.learning_rate),
      TASKEMB_FIELD("predmodel", "latent_dim", predmodel.latent_dim),
      TASKEMB_FIELD("predmodel", "alpha_r", predmodel.alpha_r),
      TASKEMB_FIELD("predmodel", "alpha_s", predmodel.alpha_s),
      TASKEMB_FIELD("predmodel", "beta_kl", predmodel.beta_kl),
      TASKEMB_FIELD("viz", "tasks", viz.tasks),
  };
#undef TASKEMB_FIELD
  return fields;
}

/// Range and consistency checks; throws ConfigError naming the key.
inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key + ": " + msg); };
  if (c.output_dir.empty()) fail("[run] output_dir", "must not be empty");
  if (c.population.target_size == 0) fail("[population] target_size", "must be >= 1");
  if (c.population.snap_rollouts < 1) fail("[population] snap_rollouts", "must be >= 1");
  if (c.population.pg_returns != "binary" && c.population.pg_returns != "survival")
    fail("[population] pg_returns", "expected binary or survival, got '" + c.population.pg_returns + "'");
  if (c.constraints.pool_size < 3) fail("[constraints] pool_size", "must be >= 3");
  if (c.constraints.reps_per_agent < 1) fail("[constraints] reps_per_agent", "must be >= 1");
  if (!(c.constraints.holdout_fraction >= 0.0 && c.constraints.holdout_fraction < 1.0))
    fail("[constraints] holdout_fraction", "must be in [0, 1)");
  for (auto [n, key] : {std::pair{c.constraints.n_mi_train, "n_mi_train"}, {c.constraints.n_norm_train, "n_norm_train"},
                        {c.constraints.n_mi_val, "n_mi_val"}, {c.constraints.n_norm_val, "n_norm_val"},
                        {c.constraints.n_mi_test, "n_mi_test"}, {c.constraints.n_norm_test, "n_norm_test"}})
    if (n == 0) fail(std::string("[constraints] ") + key, "must be >= 1");
  if (!(c.training.lambda >= 0.0)) fail("[training] lambda", "must be >= 0");
  if (c.training.batch_size == 0) fail("[training] batch_size", "must be >= 1");
  if (!(c.training.learning_rate > 0.0)) fail("[training] learning_rate", "must be > 0");
  if (c.silhouette.eval_tasks < 2) fail("[silhouette] eval_tasks", "must be >= 2");
  if (c.silhouette.spearman_tasks > c.silhouette.eval_tasks)
    fail("[silhouette] spearman_tasks", "must not exceed eval_tasks");
  if (c.prediction.max_quiz_size < 1 || c.prediction.max_quiz_size > 20)
    fail("[prediction] max_quiz_size", "must be in [1, 20]");
  if (c.prediction.examples < 10) fail("[prediction] examples", "must be >= 10 (10 folds)");
  if (c.prediction.tune_examples < 1) fail("[prediction] tune_examples", "must be >= 1");
  if (c.selection.datasets < 1 || c.selection.examples < 1) fail("[selection] datasets/examples", "must be >= 1");
  if (c.selection.easy_pool < 1) fail("[selection] easy_pool", "must be >= 1");
  if (c.dim_sweep.min_dim < 1 || c.dim_sweep.max_dim < c.dim_sweep.min_dim)
    fail("[dim_sweep] min_dim/max_dim", "need 1 <= min_dim <= max_dim");
  if (c.viz.tasks < 2) fail("[viz] tasks", "must be >= 2");
}

inline RunConfig parse_run_config(std::string_view text, const std::string& origin = "config") {
  const ConfigText ct = parse_config_text(text, origin);
  RunConfig c;
  std::set<std::pair<std::string, std::string>> known;
  for (const auto& f : config_fields()) {
    known.insert({f.section, f.key});
    const auto sec = ct.sections.find(f.section);
    const bool present = sec != ct.sections.end() && sec->second.count(f.key);
    if (!present) {
      if (f.required) throw ConfigError(origin + ": missing required key [" + f.section + "] " + f.key);
      continue;
    }
    const auto& entry = sec->second.at(f.key);
    try {
      f.set(c, entry.value);
    } catch (const ParseError& e) {
      throw ConfigError(origin + ":" + std::to_string(entry.line) + ": [" + f.section + "] " + f.key + ": " + e.what());
    }
  }
  for (const auto& [sec, keys] : ct.sections)
    for (const auto& [key, entry] : keys)
      if (!known.count({sec, key}))
        throw ConfigError(origin + ":" + std::to_string(entry.line) + ": unknown key [" + sec + "] " + key);
  validate(c);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, path);
}

/// Canonical text: every key, sections in a fixed order.
inline std::string write_run_config(const RunConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get(c) << '\n';
  }
  return os.str();
}

/// Canonical lines of the given sections plus individual "section.key"
/// entries, for stage cache keys.
inline std::string config_subset(const RunConfig& c, std::initializer_list<std::string_view> parts) {
  std::string out;
  for (const auto& f : config_fields())
    for (auto p : parts)
      if (p == f.section || p == f.section + "." + f.key) {
        out += f.section + "." + f.key + " = " + f.get(c) + "\n";
        break;
      }
  return out;
}

inline std::uint64_t stage_seed(const RunConfig& c, std::uint64_t stage) { return derive_seed(c.seeds.root, stage); }

}  // namespace taskemb
