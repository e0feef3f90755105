#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "taskemb/numcore/parallel.hpp"
#include "taskemb/numcore/text.hpp"
#include "taskemb/population/population.hpp"

namespace taskemb {

/// H_b(p) in nats, with 0 ln 0 = 0.
inline double bernoulli_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("bernoulli_entropy: p = " + std::to_string(p) + " outside [0, 1]");
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

struct MiCounts {
  std::uint64_t n_i = 0;     // samples with O_i = 1
  std::uint64_t n_j = 0;     // samples with O_j = 1
  std::uint64_t n_ij1 = 0;   // O_i = 1 and O_j = 1
  std::uint64_t n_ij0 = 0;   // O_i = 1 and O_j = 0
  std::uint64_t total = 0;   // N

  MiCounts& operator+=(const MiCounts& o) noexcept {
    n_i += o.n_i;
    n_j += o.n_j;
    n_ij1 += o.n_ij1;
    n_ij0 += o.n_ij0;
    total += o.total;
    return *this;
  }

  void add(bool oi, bool oj) noexcept {
    ++total;
    n_i += oi;
    n_j += oj;
    n_ij1 += oi && oj;
    n_ij0 += oi && !oj;
  }
};

struct MiEstimate {
  double value = 0.0;
  MiCounts counts;
};

/// Plug-in estimate H_b(n_i/N) - (n_j/N) H_b(n_ij1/n_j)
///   - (1 - n_j/N) H_b(n_ij0/(N - n_j)); terms with empty conditioning sets
/// contribute 0.
inline double mi_from_counts(const MiCounts& c) {
  if (c.total == 0) return 0.0;
  const double n = static_cast<double>(c.total);
  const double nj = static_cast<double>(c.n_j);
  double v = bernoulli_entropy(static_cast<double>(c.n_i) / n);
  if (c.n_j > 0) v -= nj / n * bernoulli_entropy(static_cast<double>(c.n_ij1) / nj);
  if (c.n_j < c.total) v -= (1.0 - nj / n) * bernoulli_entropy(static_cast<double>(c.n_ij0) / (n - nj));
  return v;
}

/// Algorithm-style estimator: each of the N samples draws one agent and rolls
/// it out from both tasks (independent rollout seeds).
template <AgentPopulation Pop>
MiEstimate estimate_mi(const Task& si, const Task& sj, const Pop& population, std::size_t n_samples, Rng& rng,
                       std::size_t threads = 1) {
  if (n_samples < 1) throw Error("estimate_mi: N must be >= 1");
  if (population.size() == 0) throw Error("estimate_mi: empty population");
  if (si.env != sj.env) throw Error("estimate_mi: tasks from different environments");
  if constexpr (requires { population.env; }) {
    if (population.env != si.env) throw Error("estimate_mi: task environment does not match the population");
  }
  const std::uint64_t base = rng();
  const std::size_t chunks = std::min<std::size_t>(n_samples, 64);
  std::vector<MiCounts> partial(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * n_samples / chunks, hi = (c + 1) * n_samples / chunks;
    for (std::size_t l = lo; l < hi; ++l) {
      Rng r(derive_seed(base, l));
      const std::size_t agent = static_cast<std::size_t>(r.below(population.size()));
      Rng ri(derive_seed(base, l, 1)), rj(derive_seed(base, l, 2));
      partial[c].add(population.success(agent, si, ri), population.success(agent, sj, rj));
    }
  });
  MiEstimate est;
  for (const auto& p : partial) est.counts += p;
  est.value = mi_from_counts(est.counts);
  return est;
}

/// Outcome bits for a pool of tasks. Sample l uses agent l % A (so every
/// agent is drawn the same number of times) and the same agent across all
/// tasks, which is what the estimator's shared theta_l requires; every
/// rollout has its own seed. The first 10 * A samples give 10 repetitions
/// per agent, used for PoS.
class OutcomeTable {
 public:
  OutcomeTable() = default;

  template <AgentPopulation Pop>
  OutcomeTable(std::span<const Task> tasks, const Pop& population, std::size_t reps_per_agent, std::uint64_t seed,
               std::size_t threads = 1)
      : agents_(population.size()), samples_(population.size() * reps_per_agent) {
    if (agents_ == 0) throw Error("OutcomeTable: empty population");
    if (reps_per_agent == 0) throw Error("OutcomeTable: reps_per_agent must be >= 1");
    words_ = (samples_ + 63) / 64;
    bits_.assign(tasks.size() * words_, 0);
    auto fill = [&](std::size_t t, auto&& success) {
      std::uint64_t* row = bits_.data() + t * words_;
      for (std::size_t l = 0; l < samples_; ++l) {
        const std::size_t agent = l % agents_;
        Rng r(derive_seed(seed, fnv_task(tasks[t]), agent, l / agents_));
        if (success(agent, tasks[t], r)) row[l / 64] |= std::uint64_t{1} << (l % 64);
      }
    };
    if constexpr (std::same_as<Pop, Population>) {
      const std::size_t workers = std::max<std::size_t>(1, std::min(threads == 0 ? default_threads() : threads, tasks.size()));
      parallel_for(workers, workers, [&](std::size_t w) {
        std::vector<PolicyActor> actors;
        for (const auto& a : population.agents) actors.emplace_back(a.policy);
        auto success = [&](std::size_t k, const Task& task, Rng& r) { return rollout(task, actors[k], r).success; };
        for (std::size_t t = w * tasks.size() / workers; t < (w + 1) * tasks.size() / workers; ++t) fill(t, success);
      });
    } else {
      parallel_for(tasks.size(), threads, [&](std::size_t t) {
        fill(t, [&](std::size_t k, const Task& task, Rng& r) { return population.success(k, task, r); });
      });
    }
  }

  std::size_t tasks() const noexcept { return words_ == 0 ? 0 : bits_.size() / words_; }
  std::size_t samples() const noexcept { return samples_; }
  std::size_t agents() const noexcept { return agents_; }

  bool outcome(std::size_t task, std::size_t sample) const noexcept {
    return (bits_[task * words_ + sample / 64] >> (sample % 64)) & 1u;
  }

  /// Counts over all samples, or those whose bit is set in `sample_mask`.
  MiCounts counts(std::size_t i, std::size_t j, std::span<const std::uint64_t> sample_mask = {}) const {
    MiCounts c;
    const std::uint64_t* a = bits_.data() + i * words_;
    const std::uint64_t* b = bits_.data() + j * words_;
    for (std::size_t w = 0; w < words_; ++w) {
      std::uint64_t valid = w + 1 == words_ && samples_ % 64 != 0 ? (std::uint64_t{1} << (samples_ % 64)) - 1 : ~std::uint64_t{0};
      if (!sample_mask.empty()) valid &= sample_mask[w];
      const std::uint64_t x = a[w] & valid, y = b[w] & valid;
      c.total += static_cast<std::uint64_t>(std::popcount(valid));
      c.n_i += static_cast<std::uint64_t>(std::popcount(x));
      c.n_j += static_cast<std::uint64_t>(std::popcount(y));
      c.n_ij1 += static_cast<std::uint64_t>(std::popcount(x & y));
      c.n_ij0 += static_cast<std::uint64_t>(std::popcount(x & ~y));
    }
    return c;
  }

  MiEstimate mi(std::size_t i, std::size_t j, std::span<const std::uint64_t> sample_mask = {}) const {
    MiEstimate e{0.0, counts(i, j, sample_mask)};
    e.value = mi_from_counts(e.counts);
    return e;
  }

  /// Success rate over the first `reps_per_agent` repetitions of each agent.
  double pos(std::size_t task, std::size_t reps_per_agent = 10, std::span<const std::uint64_t> sample_mask = {}) const {
    const std::size_t n = std::min(samples_, reps_per_agent * agents_);
    std::size_t wins = 0, total = 0;
    for (std::size_t l = 0; l < n; ++l) {
      if (!sample_mask.empty() && !((sample_mask[l / 64] >> (l % 64)) & 1u)) continue;
      ++total;
      wins += outcome(task, l);
    }
    return total == 0 ? 0.0 : static_cast<double>(wins) / static_cast<double>(total);
  }

  /// Mask selecting the samples drawn from the given agents.
  std::vector<std::uint64_t> agent_mask(std::span<const std::size_t> agent_ids) const {
    std::vector<bool> keep(agents_, false);
    for (auto a : agent_ids) keep.at(a) = true;
    std::vector<std::uint64_t> m(words_, 0);
    for (std::size_t l = 0; l < samples_; ++l)
      if (keep[l % agents_]) m[l / 64] |= std::uint64_t{1} << (l % 64);
    return m;
  }

 private:
  static std::uint64_t fnv_task(const Task& t) noexcept {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(t.state0.data()), sizeof(double) * kStateDim));
  }

  std::size_t agents_ = 0;
  std::size_t samples_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
};

/// Constraint task fields index into the task pool the set was built from.
struct TripletConstraint {
  std::size_t s1 = 0, s2 = 0, s3 = 0;
  bool label = false;  // Î(s1;s2) > Î(s1;s3)
  double mi12 = 0.0, mi13 = 0.0;

  friend bool operator==(const TripletConstraint&, const TripletConstraint&) = default;
};

struct PairConstraint {
  std::size_t s4 = 0, s5 = 0;
  bool label = false;  // PoS(s4) > PoS(s5)
  double pos4 = 0.0, pos5 = 0.0;

  friend bool operator==(const PairConstraint&, const PairConstraint&) = default;
};

struct ConstraintSet {
  std::vector<TripletConstraint> triplets;
  std::vector<PairConstraint> pairs;

  friend bool operator==(const ConstraintSet&, const ConstraintSet&) = default;
};

struct ConstraintCounts {
  std::size_t n_mi = 5000;
  std::size_t n_norm = 5000;
};

inline TripletConstraint make_triplet(std::size_t a, std::size_t b, std::size_t c, double mi12, double mi13) {
  return {a, b, c, mi12 > mi13, mi12, mi13};
}

inline PairConstraint make_pair(std::size_t a, std::size_t b, double pa, double pb) { return {a, b, pa > pb, pa, pb}; }

/// Samples constraints over the rows of `table` (optionally restricted to
/// `eligible` rows). Triplets with |Î12 - Î13| < drop_ties_eps are resampled
/// when drop_ties_eps > 0.
inline ConstraintSet gen_constraints(const OutcomeTable& table, ConstraintCounts counts, Rng& rng,
                                     std::span<const std::size_t> eligible = {}, double drop_ties_eps = 0.0,
                                     int pos_reps = 10) {
  if (counts.n_mi < 1 || counts.n_norm < 1) throw Error("gen_constraints: counts must be >= 1");
  std::vector<std::size_t> all;
  if (eligible.empty()) {
    for (std::size_t i = 0; i < table.tasks(); ++i) all.push_back(i);
    eligible = all;
  }
  if (eligible.empty()) throw Error("gen_constraints: empty task pool");
  auto pick = [&] { return eligible[static_cast<std::size_t>(rng.below(eligible.size()))]; };
  ConstraintSet set;
  std::size_t attempts = 0;
  while (set.triplets.size() < counts.n_mi) {
    const std::size_t a = pick(), b = pick(), c = pick();
    const double m12 = table.mi(a, b).value, m13 = table.mi(a, c).value;
    if (drop_ties_eps > 0.0 && std::abs(m12 - m13) < drop_ties_eps) {
      if (++attempts > 1000 * counts.n_mi) throw Error("gen_constraints: too many near-tied triplets");
      continue;
    }
    set.triplets.push_back(make_triplet(a, b, c, m12, m13));
  }
  for (std::size_t k = 0; k < counts.n_norm; ++k) {
    const std::size_t a = pick(), b = pick();
    set.pairs.push_back(make_pair(a, b, table.pos(a, static_cast<std::size_t>(pos_reps)),
                                  table.pos(b, static_cast<std::size_t>(pos_reps))));
  }
  return set;
}

/// Literal sampling loop: every constraint draws fresh tasks from `source`
/// and runs the estimators directly. Task indices refer to the returned pool.
template <AgentPopulation Pop, typename Source>
std::pair<std::vector<Task>, ConstraintSet> gen_constraints_online(Source&& source, const Pop& population,
                                                                   ConstraintCounts counts, std::size_t mi_samples,
                                                                   int pos_reps, Rng& rng) {
  if (counts.n_mi < 1 || counts.n_norm < 1) throw Error("gen_constraints: counts must be >= 1");
  std::vector<Task> pool;
  ConstraintSet set;
  auto add = [&](Task t) {
    pool.push_back(t);
    return pool.size() - 1;
  };
  for (std::size_t k = 0; k < counts.n_mi; ++k) {
    const std::size_t a = add(source(rng)), b = add(source(rng)), c = add(source(rng));
    const double m12 = estimate_mi(pool[a], pool[b], population, mi_samples, rng).value;
    const double m13 = estimate_mi(pool[a], pool[c], population, mi_samples, rng).value;
    set.triplets.push_back(make_triplet(a, b, c, m12, m13));
  }
  for (std::size_t k = 0; k < counts.n_norm; ++k) {
    const std::size_t a = add(source(rng)), b = add(source(rng));
    const double pa = estimate_pos(pool[a], population, pos_reps, rng);
    const double pb = estimate_pos(pool[b], population, pos_reps, rng);
    set.pairs.push_back(make_pair(a, b, pa, pb));
  }
  return {std::move(pool), std::move(set)};
}

// CSV: kind,task1,task2,task3,label,est1,est2. Triplets store Î12 and Î13,
// pairs leave task3 empty and store both PoS estimates.
inline void write_constraints(std::ostream& os, const ConstraintSet& set) {
  os << "kind,task1,task2,task3,label,est1,est2\n";
  for (const auto& t : set.triplets)
    os << "mi," << t.s1 << ',' << t.s2 << ',' << t.s3 << ',' << (t.label ? 1 : 0) << ',' << format_double(t.mi12)
       << ',' << format_double(t.mi13) << '\n';
  for (const auto& p : set.pairs)
    os << "norm," << p.s4 << ',' << p.s5 << ",," << (p.label ? 1 : 0) << ',' << format_double(p.pos4) << ','
       << format_double(p.pos5) << '\n';
}

inline ConstraintSet read_constraints(std::istream& is, std::size_t pool_size) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "kind,task1,task2,task3,label,est1,est2")
    throw ParseError("constraint file: bad header");
  ConstraintSet set;
  std::size_t row = 1;
  auto index = [&](const std::string& s) {
    const auto v = std::stoull(s);
    if (v >= pool_size)
      throw ParseError("constraint file row " + std::to_string(row) + ": task index " + s + " outside pool of " +
                       std::to_string(pool_size));
    return static_cast<std::size_t>(v);
  };
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto c = split(trim(line), ',');
    if (c.size() != 7) throw ParseError("constraint file row " + std::to_string(row) + ": expected 7 columns");
    const bool label = c[4] == "1";
    if (c[0] == "mi")
      set.triplets.push_back({index(c[1]), index(c[2]), index(c[3]), label, parse_double(c[5]), parse_double(c[6])});
    else if (c[0] == "norm")
      set.pairs.push_back({index(c[1]), index(c[2]), label, parse_double(c[5]), parse_double(c[6])});
    else
      throw ParseError("constraint file row " + std::to_string(row) + ": unknown kind '" + c[0] + "'");
  }
  return set;
}

}  // namespace taskemb
