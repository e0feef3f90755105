#pragma once

#include <cmath>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <span>
#include <vector>

#include "taskemb/benchmarks/metrics.hpp"
#include "taskemb/envs/task_io.hpp"
#include "taskemb/numcore/parallel.hpp"
#include "taskemb/population/population.hpp"

namespace taskemb {

/// One performance prediction example. The quiz is stored at the largest
/// size; smaller quiz sizes use a prefix of it, so across sizes an example
/// keeps its hidden agent and test task.
struct QuizExample {
  std::size_t agent = 0;
  Task test_task;
  bool test_outcome = false;
  std::vector<Task> quiz;
  std::vector<char> quiz_outcomes;
};

inline constexpr std::size_t kMaxQuizSize = 20;

inline std::uint64_t task_key(const Task& t) noexcept {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(t.state0.data()), sizeof(double) * kStateDim));
}

/// Examples are generated independently from derive_seed(seed, k): a hidden
/// agent, the test task, then the quiz tasks, each with one rollout.
template <AgentPopulation Pop>
std::vector<QuizExample> gen_quiz_dataset(EnvId env, const Pop& population, std::size_t quiz_size,
                                          std::size_t n_examples, std::uint64_t seed, std::size_t threads = 1) {
  if (quiz_size < 1 || quiz_size > kMaxQuizSize) throw Error("gen_quiz_dataset: quiz size must be in [1, 20]");
  if (population.size() == 0) throw Error("gen_quiz_dataset: empty population");
  std::vector<QuizExample> data(n_examples);
  parallel_for(n_examples, threads, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    QuizExample& ex = data[k];
    ex.agent = static_cast<std::size_t>(rng.below(population.size()));
    ex.test_task = sample_task(env, rng);
    Rng r0(rng());
    ex.test_outcome = population.success(ex.agent, ex.test_task, r0);
    for (std::size_t q = 0; q < quiz_size; ++q) {
      ex.quiz.push_back(sample_task(env, rng));
      Rng rq(rng());
      ex.quiz_outcomes.push_back(population.success(ex.agent, ex.quiz.back(), rq) ? 1 : 0);
    }
  });
  return data;
}

/// c = sum o_s w_s / sum w_s with w_s = exp(-beta ||E_s - E_test||^2);
/// predicts 1 iff c > 0.5. Distances are shifted by their minimum before
/// exponentiating, which leaves c unchanged.
inline bool predict_softnn(std::span<const std::vector<double>> quiz_emb, std::span<const char> outcomes,
                           std::span<const double> test_emb, double beta) {
  if (quiz_emb.empty() || quiz_emb.size() != outcomes.size()) throw Error("predict_softnn: bad quiz");
  if (!(beta > 0.0)) throw Error("predict_softnn: beta must be positive");
  std::vector<double> d2(quiz_emb.size());
  double lo = INFINITY;
  for (std::size_t i = 0; i < quiz_emb.size(); ++i) {
    d2[i] = squared_distance(quiz_emb[i], test_emb);
    lo = std::min(lo, d2[i]);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < quiz_emb.size(); ++i) {
    const double w = std::exp(-beta * (d2[i] - lo));
    num += outcomes[i] ? w : 0.0;
    den += w;
  }
  return num / den > 0.5;
}

/// Embeddings of every task in a dataset, computed once.
struct EmbeddedDataset {
  std::vector<std::vector<double>> test;
  std::vector<std::vector<std::vector<double>>> quiz;
};

template <typename EmbedFn>
EmbeddedDataset embed_dataset(std::span<const QuizExample> data, EmbedFn&& embed_fn) {
  EmbeddedDataset e;
  for (const auto& ex : data) {
    e.test.push_back(embed_fn(ex.test_task));
    std::vector<std::vector<double>> q;
    for (const auto& t : ex.quiz) q.push_back(embed_fn(t));
    e.quiz.push_back(std::move(q));
  }
  return e;
}

inline std::vector<char> softnn_correct(std::span<const QuizExample> data, const EmbeddedDataset& emb,
                                        std::size_t quiz_size, double beta) {
  std::vector<char> ok(data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (data[k].quiz.size() < quiz_size) throw Error("quiz dataset holds fewer tasks than the requested quiz size");
    const std::span<const std::vector<double>> q(emb.quiz[k].data(), quiz_size);
    const std::span<const char> o(data[k].quiz_outcomes.data(), quiz_size);
    ok[k] = predict_softnn(q, o, emb.test[k], beta) == data[k].test_outcome;
  }
  return ok;
}

inline constexpr std::array<double, 4> kBetaGrid{10.0, 1e2, 1e3, 1e4};

/// Picks the grid value with the best training accuracy (earliest wins ties).
inline double tune_beta(std::span<const QuizExample> train, const EmbeddedDataset& emb, std::size_t quiz_size,
                        std::span<const double> grid = kBetaGrid) {
  double best = grid.empty() ? 1000.0 : grid.front(), best_acc = -1.0;
  for (double beta : grid) {
    const auto ok = softnn_correct(train, emb, quiz_size, beta);
    double acc = 0.0;
    for (char c : ok) acc += c;
    if (acc > best_acc) {
      best_acc = acc;
      best = beta;
    }
  }
  return best;
}

enum class Baseline { Random, IgnoreTask, IgnoreAgent, Opt };

inline std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::Random: return "Random";
    case Baseline::IgnoreTask: return "IgnoreTask";
    case Baseline::IgnoreAgent: return "IgnoreAgent";
    case Baseline::Opt: return "OPT";
  }
  return "?";
}

/// Oracle baselines with the sample budgets 500 (IgnoreTask), 10 per agent
/// (IgnoreAgent) and 10 (OPT). Probability estimates are memoized per agent
/// and per task, so predictions for a given agent or task never vary.
template <AgentPopulation Pop>
class BaselineOracle {
 public:
  BaselineOracle(EnvId env, const Pop& population, std::uint64_t seed) : env_(env), pop_(&population), seed_(seed) {}

  int ignore_task_samples = 500;
  int ignore_agent_reps = 10;
  int opt_samples = 10;

  bool predict(Baseline kind, const QuizExample& ex, std::size_t example_index) {
    switch (kind) {
      case Baseline::Random: {
        Rng r(derive_seed(seed_, 0x7A4D, example_index));
        return r.bernoulli(0.5);
      }
      case Baseline::IgnoreTask: return agent_rate(ex.agent) > 0.5;
      case Baseline::IgnoreAgent: return task_pos(ex.test_task) > 0.5;
      case Baseline::Opt: {
        int wins = 0;
        for (int i = 0; i < opt_samples; ++i) {
          Rng r(derive_seed(seed_, 0x0F7, ex.agent, task_key(ex.test_task), static_cast<std::uint64_t>(i)));
          wins += pop_->success(ex.agent, ex.test_task, r) ? 1 : 0;
        }
        return static_cast<double>(wins) / opt_samples > 0.5;
      }
    }
    return false;
  }

  double agent_rate(std::size_t agent) {
    {
      std::lock_guard lock(mu_);
      if (auto it = agent_memo_.find(agent); it != agent_memo_.end()) return it->second;
    }
    Rng r(derive_seed(seed_, 0x16A5, agent));
    int wins = 0;
    for (int i = 0; i < ignore_task_samples; ++i) {
      const Task t = sample_task(env_, r);
      Rng rr(r());
      wins += pop_->success(agent, t, rr) ? 1 : 0;
    }
    const double p = static_cast<double>(wins) / ignore_task_samples;
    std::lock_guard lock(mu_);
    agent_memo_[agent] = p;
    return p;
  }

  double task_pos(const Task& t) {
    const std::uint64_t key = task_key(t);
    {
      std::lock_guard lock(mu_);
      if (auto it = task_memo_.find(key); it != task_memo_.end()) return it->second;
    }
    Rng r(derive_seed(seed_, 0x16A6, key));
    const double p = estimate_pos(t, *pop_, ignore_agent_reps, r);
    std::lock_guard lock(mu_);
    task_memo_[key] = p;
    return p;
  }

 private:
  EnvId env_;
  const Pop* pop_;
  std::uint64_t seed_;
  std::mutex mu_;
  std::map<std::size_t, double> agent_memo_;
  std::map<std::uint64_t, double> task_memo_;
};

template <AgentPopulation Pop>
std::vector<char> baseline_correct(Baseline kind, std::span<const QuizExample> data, BaselineOracle<Pop>& oracle,
                                   std::size_t threads = 1) {
  std::vector<char> ok(data.size());
  parallel_for(data.size(), threads, [&](std::size_t k) { ok[k] = oracle.predict(kind, data[k], k) == data[k].test_outcome; });
  return ok;
}

inline MeanStderr eval_prediction(std::span<const char> correct, std::size_t folds = 10) {
  const auto acc = fold_accuracies(correct, folds);
  return mean_stderr(acc);
}

// Dataset CSV: example,agent,role,outcome,<env>,<state columns>; role is
// "test" or the quiz position.
inline void write_quiz_dataset(std::ostream& os, std::span<const QuizExample> data) {
  if (data.empty()) {
    os << "example,agent,role,outcome\n";
    return;
  }
  os << "example,agent,role,outcome," << task_csv_header(data.front().test_task.env) << '\n';
  auto row = [&](std::size_t k, const QuizExample& ex, const std::string& role, bool o, const Task& t) {
    os << k << ',' << ex.agent << ',' << role << ',' << (o ? 1 : 0) << ',' << to_string(t.env);
    for (double v : t.state0) os << ',' << format_double(v);
    os << '\n';
  };
  for (std::size_t k = 0; k < data.size(); ++k) {
    row(k, data[k], "test", data[k].test_outcome, data[k].test_task);
    for (std::size_t q = 0; q < data[k].quiz.size(); ++q)
      row(k, data[k], std::to_string(q), data[k].quiz_outcomes[q] != 0, data[k].quiz[q]);
  }
}

inline std::vector<QuizExample> read_quiz_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("quiz dataset: missing header");
  std::vector<QuizExample> data;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto c = split(trim(line), ',');
    if (c.size() != 5 + kStateDim) throw ParseError("quiz dataset row " + std::to_string(row) + ": wrong column count");
    const std::size_t k = std::stoull(c[0]);
    if (k != data.size() && k + 1 != data.size())
      throw ParseError("quiz dataset row " + std::to_string(row) + ": examples out of order");
    if (k == data.size()) data.emplace_back();
    QuizExample& ex = data[k];
    ex.agent = std::stoull(c[1]);
    Task t{parse_env(c[4]), {}};
    for (std::size_t i = 0; i < kStateDim; ++i) t.state0[i] = parse_double(c[5 + i]);
    if (c[2] == "test") {
      ex.test_task = t;
      ex.test_outcome = c[3] == "1";
    } else {
      ex.quiz.push_back(t);
      ex.quiz_outcomes.push_back(c[3] == "1" ? 1 : 0);
    }
  }
  return data;
}

}  // namespace taskemb
