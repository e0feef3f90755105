#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "taskemb/benchmarks/metrics.hpp"
#include "taskemb/benchmarks/prediction.hpp"
#include "taskemb/similarity/similarity.hpp"

namespace taskemb {

inline constexpr std::size_t kSelectionOptions = 10;
inline constexpr std::size_t kEasyRefs = 5;

enum class QueryType { Type1, Type2 };

/// One reference task with its options. Both query types are answered on
/// the same options; the Type-2 answer is the most similar option among those
/// with lower PoS than the reference.
struct SelectionExample {
  Task ref;
  std::vector<Task> options;
  std::size_t truth_type1 = 0;
  std::size_t truth_type2 = 0;
  double ref_pos = 0.0;
  std::vector<double> option_pos;
  std::vector<double> option_mi;

  std::size_t truth(QueryType q) const noexcept { return q == QueryType::Type1 ? truth_type1 : truth_type2; }
};

struct SelectionDataset {
  std::vector<Task> easy_refs;
  std::vector<SelectionExample> examples;
  std::uint64_t seed = 0;
};

struct SelectionConfig {
  std::size_t n_examples = 50;
  std::size_t easy_pool = 500;
  std::size_t similarity_reps = 100;  // per agent
  std::size_t difficulty_reps = 10;   // per agent
  std::size_t threads = 1;
};

inline std::size_t argmax_first(std::span<const double> v, std::span<const char> allowed = {}) {
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!allowed.empty() && !allowed[i]) continue;
    if (best == v.size() || v[i] > v[best]) best = i;
  }
  return best;
}

/// Builds one dataset. Examples whose options contain no task harder than the
/// reference are discarded and redrawn.
template <AgentPopulation Pop>
SelectionDataset gen_selection_dataset(EnvId env, const Pop& population, const SelectionConfig& cfg,
                                       std::uint64_t seed) {
  SelectionDataset ds;
  ds.seed = seed;
  {
    Rng rng(derive_seed(seed, 0xEA5));
    std::vector<Task> pool;
    for (std::size_t i = 0; i < cfg.easy_pool; ++i) pool.push_back(sample_task(env, rng));
    const OutcomeTable table(pool, population, cfg.difficulty_reps, derive_seed(seed, 0xEA6), cfg.threads);
    std::vector<double> pos(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pos[i] = table.pos(i, cfg.difficulty_reps);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pos[a] > pos[b]; });
    for (std::size_t i = 0; i < std::min(kEasyRefs, order.size()); ++i) ds.easy_refs.push_back(pool[order[i]]);
  }
  for (std::size_t attempt = 0; ds.examples.size() < cfg.n_examples; ++attempt) {
    if (attempt > 100 * cfg.n_examples + 100) throw Error("gen_selection_dataset: could not find Type-2 answers");
    Rng rng(derive_seed(seed, 0x5E1, attempt));
    std::vector<Task> tasks{sample_task(env, rng)};
    for (std::size_t o = 0; o < kSelectionOptions; ++o) tasks.push_back(sample_task(env, rng));
    const OutcomeTable table(tasks, population, cfg.similarity_reps, derive_seed(seed, 0x5E2, attempt), cfg.threads);
    SelectionExample ex;
    ex.ref = tasks[0];
    ex.options.assign(tasks.begin() + 1, tasks.end());
    ex.ref_pos = table.pos(0, cfg.difficulty_reps);
    std::vector<char> harder;
    for (std::size_t o = 0; o < kSelectionOptions; ++o) {
      ex.option_mi.push_back(table.mi(0, o + 1).value);
      ex.option_pos.push_back(table.pos(o + 1, cfg.difficulty_reps));
      harder.push_back(ex.option_pos.back() < ex.ref_pos ? 1 : 0);
    }
    if (std::none_of(harder.begin(), harder.end(), [](char c) { return c != 0; })) continue;
    ex.truth_type1 = argmax_first(ex.option_mi);
    ex.truth_type2 = argmax_first(ex.option_mi, harder);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

/// Options sorted by decreasing similarity (index breaks ties). With a
/// hardness filter, options judged harder come first, the rest follow; an
/// empty filter falls back to ranking everything by similarity.
inline std::vector<std::size_t> rank_options(std::span<const double> similarity, std::span<const char> harder = {}) {
  std::vector<std::size_t> order(similarity.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto by_sim = [&](std::size_t a, std::size_t b) { return similarity[a] > similarity[b]; };
  if (harder.empty()) {
    std::stable_sort(order.begin(), order.end(), by_sim);
    return order;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if ((harder[a] != 0) != (harder[b] != 0)) return harder[a] != 0;
    return by_sim(a, b);
  });
  return order;
}

/// Scores a method assigns to one example: similarity of each option to the
/// reference, and which options it judges harder than the reference.
struct SelectionScores {
  std::vector<double> similarity;
  std::vector<char> harder;
};

using SelectionMethod = std::function<SelectionScores(const SelectionDataset&, std::size_t example)>;

/// Inner-product similarity and norm-based hardness on embeddings.
template <typename EmbedFn>
SelectionMethod embedding_method(EmbedFn embed_fn) {
  return [embed_fn](const SelectionDataset& ds, std::size_t k) {
    const SelectionExample& ex = ds.examples[k];
    const auto er = embed_fn(ex.ref);
    const double nr = norm2(er);
    SelectionScores s;
    for (const Task& o : ex.options) {
      const auto eo = embed_fn(o);
      s.similarity.push_back(dot(er, eo));
      s.harder.push_back(norm2(eo) > nr ? 1 : 0);
    }
    return s;
  };
}

/// Methods with only a pairwise similarity use the easy-reference rule: s1 is
/// harder than s2 iff s1's best similarity to an easy reference is strictly
/// less than s2's.
inline SelectionMethod similarity_method(std::function<double(const Task&, const Task&)> sim) {
  return [sim](const SelectionDataset& ds, std::size_t k) {
    const SelectionExample& ex = ds.examples[k];
    auto closeness = [&](const Task& t) {
      double best = -INFINITY;
      for (const Task& e : ds.easy_refs) best = std::max(best, sim(t, e));
      return best;
    };
    const double ref_close = closeness(ex.ref);
    SelectionScores s;
    for (const Task& o : ex.options) {
      s.similarity.push_back(sim(ex.ref, o));
      s.harder.push_back(closeness(o) < ref_close ? 1 : 0);
    }
    return s;
  };
}

inline double state_similarity(const Task& a, const Task& b) { return -std::sqrt(squared_distance(a.state0, b.state0)); }

inline std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Continuous actions map to one of 8 direction sectors (sector 0 centred on
/// +x, counter-clockwise).
inline int action_symbol(EnvId env, const Action& a) {
  if (is_discrete(env)) return a.id;
  const double ang = std::atan2(a.force[1], a.force[0]);
  const int s = static_cast<int>(std::floor((ang + std::numbers::pi / 8.0) / (std::numbers::pi / 4.0)));
  return ((s % 8) + 8) % 8;
}

/// Expert action symbols from a task, with a seed fixed by the task.
inline std::vector<int> expert_symbols(const Task& t) {
  Rng rng(derive_seed(0x7EA1, task_key(t)));
  ExpertPolicy expert{t.env, 0};
  const RolloutResult r = rollout(t, expert, rng, true);
  std::vector<int> seq;
  for (const Action& a : r.trajectory->actions) seq.push_back(action_symbol(t.env, a));
  return seq;
}

inline double trajectory_similarity(const Task& a, const Task& b) {
  const auto sa = expert_symbols(a), sb = expert_symbols(b);
  return -static_cast<double>(levenshtein(sa, sb));
}

/// Population estimates with fresh seeds, optionally restricted to a subset of
/// agents.
template <AgentPopulation Pop>
SelectionMethod oracle_method(const Pop& population, std::vector<std::size_t> agents, const SelectionConfig& cfg,
                              std::uint64_t seed) {
  return [&population, agents = std::move(agents), cfg, seed](const SelectionDataset& ds, std::size_t k) {
    const SelectionExample& ex = ds.examples[k];
    std::vector<Task> tasks{ex.ref};
    tasks.insert(tasks.end(), ex.options.begin(), ex.options.end());
    const OutcomeTable table(tasks, population, cfg.similarity_reps, derive_seed(seed, ds.seed, k), cfg.threads);
    const std::vector<std::uint64_t> mask = agents.empty() ? std::vector<std::uint64_t>{} : table.agent_mask(agents);
    const double ref_pos = table.pos(0, cfg.difficulty_reps, mask);
    SelectionScores s;
    for (std::size_t o = 1; o < tasks.size(); ++o) {
      s.similarity.push_back(table.mi(0, o, mask).value);
      s.harder.push_back(table.pos(o, cfg.difficulty_reps, mask) < ref_pos ? 1 : 0);
    }
    return s;
  };
}

/// Half the agents, drawn once from `seed`.
inline std::vector<std::size_t> half_population(std::size_t n_agents, std::uint64_t seed) {
  std::vector<std::size_t> ids(n_agents);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(ids));
  ids.resize(std::max<std::size_t>(1, n_agents / 2));
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline SelectionMethod random_method(std::uint64_t seed) {
  return [seed](const SelectionDataset& ds, std::size_t k) {
    Rng rng(derive_seed(seed, ds.seed, k));
    SelectionScores s;
    for (std::size_t o = 0; o < ds.examples[k].options.size(); ++o) s.similarity.push_back(rng.uniform());
    return s;
  };
}

/// Top-k hit rate of a method on one dataset.
inline double selection_accuracy(const SelectionDataset& ds, const SelectionMethod& method, QueryType q, std::size_t top_k) {
  if (ds.examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ds.examples.size(); ++k) {
    const SelectionScores s = method(ds, k);
    const auto order = rank_options(s.similarity, q == QueryType::Type2 ? std::span<const char>(s.harder) : std::span<const char>{});
    const std::size_t truth = ds.examples[k].truth(q);
    for (std::size_t i = 0; i < std::min(top_k, order.size()); ++i) hits += order[i] == truth ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.examples.size());
}

/// Accuracies for Type-1/Type-2 x Top-1/Top-3 from a single pass.
struct SelectionAccuracy {
  double type1_top1 = 0.0, type1_top3 = 0.0, type2_top1 = 0.0, type2_top3 = 0.0;
};

inline SelectionAccuracy selection_accuracies(const SelectionDataset& ds, const SelectionMethod& method) {
  SelectionAccuracy a;
  if (ds.examples.empty()) return a;
  for (std::size_t k = 0; k < ds.examples.size(); ++k) {
    const SelectionScores s = method(ds, k);
    const auto o1 = rank_options(s.similarity);
    const auto o2 = rank_options(s.similarity, s.harder.empty() ? std::vector<char>(s.similarity.size(), 0) : s.harder);
    const auto& ex = ds.examples[k];
    auto in_top = [](const std::vector<std::size_t>& order, std::size_t truth, std::size_t n) {
      return std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n, order.size())), truth) !=
             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, order.size()));
    };
    a.type1_top1 += in_top(o1, ex.truth_type1, 1);
    a.type1_top3 += in_top(o1, ex.truth_type1, 3);
    a.type2_top1 += in_top(o2, ex.truth_type2, 1);
    a.type2_top3 += in_top(o2, ex.truth_type2, 3);
  }
  const double n = static_cast<double>(ds.examples.size());
  a.type1_top1 /= n;
  a.type1_top3 /= n;
  a.type2_top1 /= n;
  a.type2_top3 /= n;
  return a;
}

// Dataset CSV: dataset,example,role,truth1,truth2,pos,mi,<env>,<state>; role
// is "easy", "ref" or the option index.
inline void write_selection_datasets(std::ostream& os, std::span<const SelectionDataset> sets) {
  os << "dataset,example,role,truth_type1,truth_type2,pos,mi,env,s1,s2,s3,s4,s5,s6,s7\n";
  auto row = [&](std::size_t d, std::string ex, std::string role, std::string t1, std::string t2, double pos, double mi,
                 const Task& t) {
    os << d << ',' << ex << ',' << role << ',' << t1 << ',' << t2 << ',' << format_double(pos) << ','
       << format_double(mi) << ',' << to_string(t.env);
    for (double v : t.state0) os << ',' << format_double(v);
    os << '\n';
  };
  for (std::size_t d = 0; d < sets.size(); ++d) {
    for (const Task& e : sets[d].easy_refs) row(d, "", "easy", "", "", 0.0, 0.0, e);
    for (std::size_t k = 0; k < sets[d].examples.size(); ++k) {
      const auto& ex = sets[d].examples[k];
      row(d, std::to_string(k), "ref", std::to_string(ex.truth_type1), std::to_string(ex.truth_type2), ex.ref_pos, 0.0,
          ex.ref);
      for (std::size_t o = 0; o < ex.options.size(); ++o)
        row(d, std::to_string(k), std::to_string(o), "", "", ex.option_pos[o], ex.option_mi[o], ex.options[o]);
    }
  }
}

}  // namespace taskemb
