// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any selected criterion fails. Pipeline-based criteria run the example
// configs from configs/ with their output directories moved under --work-dir.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "taskemb/cli/pipeline.hpp"

using namespace taskemb;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// method -> key -> value for the result CSVs (key is the metric or quiz size).
using Table = std::map<std::string, std::map<std::string, double>>;

Table read_results(const std::string& path, std::size_t value_column = 2) {
  std::istringstream is(read_file(path));
  std::string line;
  std::getline(is, line);
  Table t;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    t[f.at(0)][f.at(1)] = parse_double(f.at(value_column));
  }
  return t;
}

double lookup(const Table& t, const std::string& method, const std::string& key) {
  const auto m = t.find(method);
  if (m == t.end() || !m->second.count(key)) throw Error("result row " + method + "/" + key + " is missing");
  return m->second.at(key);
}

// ---------------------------------------------------------------------------
// Independent oracles

/// Deterministic agent population over task indices (task i has location i/10).
struct TablePopulation {
  std::vector<std::vector<bool>> solves;
  std::size_t size() const { return solves.size(); }
  bool success(std::size_t k, const Task& t, Rng&) const {
    return solves[k][static_cast<std::size_t>(std::lround(t.state0[0] * 10.0))];
  }
};

Task indexed_task(std::size_t i) {
  Task t{EnvId{EnvKind::MultiKeyNav}, {}};
  t.state0[0] = static_cast<double>(i) / 10.0;
  return t;
}

/// I(O_i; O_j) of the joint Bernoulli law induced by a uniform agent draw.
double exact_mi(const TablePopulation& pop, std::size_t i, std::size_t j) {
  double p[2][2] = {{0, 0}, {0, 0}};
  for (const auto& row : pop.solves) p[row[i]][row[j]] += 1.0 / static_cast<double>(pop.size());
  double mi = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const double pa = p[a][0] + p[a][1], pb = p[0][b] + p[1][b];
      if (p[a][b] > 0.0) mi += p[a][b] * std::log(p[a][b] / (pa * pb));
    }
  return mi;
}

// ---------------------------------------------------------------------------
// Criteria

Verdict mi_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng gen(101);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t agents = 2; agents <= 4; ++agents)
    for (int trial = 0; trial < 10; ++trial) {
      TablePopulation pop;
      for (std::size_t k = 0; k < agents; ++k) pop.solves.push_back({gen.bernoulli(0.5), gen.bernoulli(0.5), gen.bernoulli(0.3)});
      for (auto [i, j] : {std::pair<std::size_t, std::size_t>{0, 1}, {0, 2}, {1, 2}}) {
        Rng rng(derive_seed(102, agents, static_cast<std::uint64_t>(trial), i, j));
        const double est = estimate_mi(indexed_task(i), indexed_task(j), pop, 10000, rng).value;
        worst = std::max(worst, std::abs(est - exact_mi(pop, i, j)));
        ++cases;
      }
    }
  const double secs = seconds_since(t0);
  return {worst <= 0.02 && secs < 5.0, std::to_string(cases) + " pairs, max |error| " + num(worst, 4) +
                                           " nats (<= 0.02), " + num(secs, 2) + " s (< 5)"};
}

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const EnvId mkn{EnvKind::MultiKeyNav}, cpv{EnvKind::CartPoleVar}, pm{EnvKind::PointMass};
  std::map<std::string, double> errors;

  // Embedding losses, with respect to the network parameters.
  {
    Rng rng(201);
    EmbeddingNet model = make_embedding_net(mkn, 6, rng);
    std::vector<Task> pool;
    for (int i = 0; i < 16; ++i) pool.push_back(sample_task(mkn, rng));
    const auto features = featurize_all(mkn, pool);
    std::vector<TripletConstraint> ts;
    std::vector<PairConstraint> ps;
    for (int i = 0; i < 12; ++i) {
      ts.push_back({rng.below(16), rng.below(16), rng.below(16), rng.bernoulli(0.5), 0, 0});
      ps.push_back({rng.below(16), rng.below(16), rng.bernoulli(0.5), 0, 0});
    }
    auto check = [&](const std::vector<TripletConstraint>& t, const std::vector<PairConstraint>& p, double lambda) {
      MlpGradients g(model.net);
      ConstraintObjective(model, features).evaluate(t, p, lambda, &g);
      auto loss = [&](const std::vector<double>& theta) {
        EmbeddingNet m = model;
        assign_parameters(m.net, theta);
        return ConstraintObjective(m, features).evaluate(t, p, lambda).total;
      };
      return gradcheck::max_gradient_error(flatten_parameters(model.net), flatten_gradients(g), loss, 100, rng);
    };
    errors["triplet"] = check(ts, {}, 0.4);
    errors["norm-pair"] = check({}, ps, 0.4);
  }

  // Policy log-probabilities.
  for (EnvId env : {mkn, cpv, pm}) {
    Rng rng(202);
    Policy p = make_policy(env, rng, env == mkn ? 1u << multikeynav::kPickB : 0u);
    p.log_std = -0.3;
    const Task t = sample_task(env, rng);
    const auto f = featurize(env, t.state0);
    PolicyActor actor(p);
    PolicyStep rec;
    actor.act(t.state0, rng, &rec);
    MlpGradients g(p.net);
    PolicyGradScratch scratch;
    log_prob_backward(p, f, rec.action, rec.raw, 1.0, g, scratch);
    auto loss = [&](const std::vector<double>& theta) {
      Policy q = p;
      assign_parameters(q.net, theta);
      return log_prob(q, f, rec.action, rec.raw);
    };
    errors["log-prob " + to_string(env)] =
        gradcheck::max_gradient_error(flatten_parameters(p.net), flatten_gradients(g), loss, 100, rng);
  }

  // PredModel objective (reconstruction + KL) for fixed reparameterization noise.
  for (EnvId env : {mkn, cpv, pm}) {
    Rng rng(203);
    const TransitionData d = collect_transitions(env, 3, rng);
    const PredModel m = make_predmodel(env, 0, rng);
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < std::min<std::size_t>(6, d.transitions.size()); ++i) batch.push_back(i);
    std::vector<double> noise(batch.size() * m.latent);
    for (double& v : noise) v = rng.normal();
    PredModelConfig cfg;
    cfg.beta_kl = 0.2;
    PredModelGrads g{MlpGradients(m.encoder), MlpGradients(m.decoder)};
    PredModelObjective(m).evaluate(d, batch, noise, cfg, &g);
    std::vector<double> theta = flatten_parameters(m.encoder), grad = flatten_gradients(g.encoder);
    const std::size_t ne = theta.size();
    for (double v : flatten_parameters(m.decoder)) theta.push_back(v);
    for (double v : flatten_gradients(g.decoder)) grad.push_back(v);
    auto loss = [&](const std::vector<double>& x) {
      PredModel q = m;
      assign_parameters(q.encoder, std::span(x).subspan(0, ne));
      assign_parameters(q.decoder, std::span(x).subspan(ne));
      return PredModelObjective(q).evaluate(d, batch, noise, cfg);
    };
    errors["predmodel " + to_string(env)] = gradcheck::max_gradient_error(theta, grad, loss, 100, rng);
  }

  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string detail;
  for (const auto& [name, err] : errors) {
    worst = std::max(worst, err);
    detail += name + " " + sci(err) + ", ";
  }
  return {worst < 1e-4 && secs < 10.0, "max rel. error " + sci(worst) + " (< 1e-4) over " +
                                           std::to_string(errors.size()) + " checks x 100 coords [" +
                                           detail.substr(0, detail.size() - 2) + "], " + num(secs, 2) + " s (< 10)"};
}

/// Always-moving MultiKeyNav policy, so episodes end only by gamma failure.
struct Shuttle {
  Action operator()(const State& s, Rng&) const {
    return Action::discrete(s[0] < 0.5 ? multikeynav::kMoveRight : multikeynav::kMoveLeft);
  }
};

/// PointMass policy that brakes to a stop away from the walls.
struct Hover {
  Action operator()(const State& s, Rng&) const {
    const double f = point_mass::kMaxForce;
    return Action::continuous(std::clamp(-s[1], -f, f), std::clamp(-s[3], -f, f));
  }
};

Verdict env_properties(std::size_t threads) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failures;
  const EnvId envs[3] = {EnvId{EnvKind::MultiKeyNav}, EnvId{EnvKind::CartPoleVar}, EnvId{EnvKind::PointMass}};

  // Binary returns: the summed per-step reward of every episode is 0 or 1,
  // and 1 exactly when rollout() reports the task solved.
  long episodes = 0, bad = 0, wins = 0;
  for (int e = 0; e < 100000; ++e) {
    const EnvId env = envs[e % 3];
    Rng r(derive_seed(301, static_cast<std::uint64_t>(e)));
    const Task t = sample_task(env, r);
    const std::uint64_t seed = r();
    ExpertPolicy expert{env, 0};
    UniformRandomPolicy random{env};
    auto act = [&](const State& s, Rng& rr) { return e % 2 == 0 ? expert(s, rr) : random(s, rr); };
    Rng a(seed), b(seed);
    long ret = 0;
    State s = t.state0;
    for (int step_i = 0; step_i < horizon(env); ++step_i) {
      const StepOutcome out = step(env, s, act(s, a), a);
      ret += out.reward;
      if (out.terminal != Terminal::Alive) break;
      s = out.next_state;
    }
    const RolloutResult res = rollout(t, act, b);
    bad += (ret != 0 && ret != 1) || (ret == 1) != res.success;
    wins += res.success;
    ++episodes;
  }
  if (bad) failures.push_back(std::to_string(bad) + " non-binary returns");

  // Gamma termination: per-step failure rate 1 - gamma within 10%.
  std::string rates;
  auto gamma_rate = [&](EnvId env, auto policy, long min_steps) {
    Rng r(302);
    long steps = 0, failed = 0;
    while (steps < min_steps) {
      const auto res = rollout(sample_task(env, r), policy, r);
      steps += res.steps;
      failed += res.terminal == Terminal::FailedByGamma;
    }
    const double rate = static_cast<double>(failed) / static_cast<double>(steps), want = 1.0 - gamma_of(env);
    rates += to_string(env) + " " + num(rate, 5) + " vs " + num(want, 5) + "; ";
    if (std::abs(rate - want) > 0.1 * want) failures.push_back(to_string(env) + " gamma rate " + num(rate, 5));
  };
  gamma_rate(envs[0], Shuttle{}, 400000);
  gamma_rate(envs[2], Hover{}, 100000);

  // MultiKeyNav move magnitudes away from the boundaries.
  {
    Rng r(303);
    double lo = INFINITY, hi = -INFINITY;
    for (int i = 0; i < 100000; ++i) {
      State s{};
      s[0] = r.uniform(0.1, 0.9);
      const int a = i % 2 ? multikeynav::kMoveLeft : multikeynav::kMoveRight;
      const double d = std::abs(multikeynav::step(s, a, KeyVariant::Standard, r).next_state[0] - s[0]);
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    rates += "MultiKeyNav step in [" + num(lo, 4) + ", " + num(hi, 4) + "]";
    if (lo < 0.065 - 1e-12 || hi > 0.085 + 1e-12) failures.push_back("step sizes outside [0.065, 0.085]");
  }

  // MI on a shared outcome table of a real policy population.
  {
    Rng r(304);
    Population pop{envs[0], {}};
    for (int k = 0; k < 12; ++k) pop.agents.push_back({make_policy(envs[0], r, k % 3 ? 0u : 1u << multikeynav::kPickA), {}});
    std::vector<Task> tasks;
    for (int i = 0; i < 40; ++i) tasks.push_back(sample_task(envs[0], r));
    tasks.push_back({envs[0], {0.95, 1, 1, 1, 1, 1, 0}});
    const OutcomeTable table(tasks, pop, 50, 305, threads);
    long asym = 0, neg = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i)
      for (std::size_t j = 0; j < tasks.size(); ++j) {
        const double a = table.mi(i, j).value, b = table.mi(j, i).value;
        neg += a < -1e-12;
        asym += std::abs(a - b) > 1e-12;
      }
    if (neg || asym) failures.push_back(std::to_string(neg) + " negative / " + std::to_string(asym) + " asymmetric MI values");
  }

  const double secs = seconds_since(t0);
  if (secs >= 60.0) failures.push_back("took " + num(secs, 1) + " s");
  std::string detail = std::to_string(episodes) + " episodes all binary (" + std::to_string(wins) + " solved); " + rates +
                       "; MI nonnegative and symmetric on a 41-task shared table; " + num(secs, 1) + " s (< 60)";
  for (const auto& f : failures) detail += "; FAILED: " + f;
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------------------
// Pipeline runs

struct Runs {
  fs::path work;
  std::size_t threads = 1;
  std::map<std::string, double> seconds;

  RunConfig load(const std::string& name, const std::string& out) const {
    RunConfig c = load_run_config(std::string(TASKEMB_SOURCE_DIR) + "/configs/" + name);
    c.output_dir = (work / out).string();
    return c;
  }

  double run(const std::string& key, const RunConfig& cfg, std::initializer_list<const char*> stages) {
    const auto t0 = std::chrono::steady_clock::now();
    Pipeline p(cfg, "acceptance:" + key, {false, threads, &std::cerr});
    for (const char* s : stages) p.run(s);
    return seconds[key] = seconds_since(t0);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::size_t threads = 0;
  std::string work = "acceptance-runs";
  std::vector<int> only;
  app.add_option("--threads", threads, "Worker threads (0: all cores)");
  app.add_option("--work-dir", work, "Directory for pipeline runs (wiped first)");
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  if (threads == 0) threads = default_threads();
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int c) { return selected.empty() || selected.count(c); };
  auto wants_any = [&](std::initializer_list<int> cs) {
    for (int c : cs)
      if (want(c)) return true;
    return false;
  };

  fs::remove_all(work);
  fs::create_directories(work);
  Runs runs{fs::absolute(work), threads, {}};
  std::map<int, std::pair<std::string, Verdict>> results;
  auto record = [&](int c, const std::string& title, const std::function<Verdict()>& fn) {
    if (!want(c)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    results[c] = {title, v};
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << c << ": " << title << " | " << v.detail << std::endl;
  };

  record(1, "MI estimator matches closed-form MI", mi_oracle);
  record(2, "gradient suite", gradient_suite);
  record(10, "environment property suite", [&] { return env_properties(threads); });

  // MultiKeyNav desk-scale pipeline: criteria 3, 5, 6, 7, 8 (and the masked
  // population for 9).
  const RunConfig mkn = runs.load("multikeynav.conf", "multikeynav-v1");
  if (wants_any({3, 5, 6, 7, 8, 9})) {
    try {
      if (wants_any({3, 5, 6, 7, 8}))
        runs.run("mkn", mkn,
                 {"train-population", "gen-constraints", "train-embedding", "train-predmodel", "silhouette",
                  "eval-prediction", "eval-selection"});
      else
        runs.run("mkn", mkn, {"train-population"});
    } catch (const std::exception& e) {
      std::cerr << "MultiKeyNav pipeline failed: " << e.what() << '\n';
    }
  }
  const std::string mkn_results = mkn.output_dir + "/results/";

  record(3, "MultiKeyNav silhouette", [&] {
    const Table t = read_results(mkn_results + "silhouette.csv");
    const double ours = lookup(t, "Ours", "silhouette"), untrained = lookup(t, "RandomModel", "silhouette");
    const double mins = runs.seconds.at("mkn") / 60.0;
    return Verdict{ours >= 0.45 && ours - untrained >= 0.35 && mins < 30.0,
                   "trained " + num(ours) + " (>= 0.45), untrained " + num(untrained) + ", gap " + num(ours - untrained) +
                       " (>= 0.35); pipeline " + num(mins, 1) + " min (< 30)"};
  });

  record(5, "norm-difficulty ordering", [&] {
    const Table t = read_results(mkn_results + "silhouette.csv");
    const double with = lookup(t, "Ours", "norm_spearman"), without = lookup(t, "OursWoNorm", "norm_spearman");
    return Verdict{with >= 0.5 && std::abs(without) <= 0.3,
                   "Spearman(|E|, 1-PoS) " + num(with) + " with lambda 0.4 (>= 0.5), " + num(without) +
                       " with lambda 0 (|.| <= 0.3)"};
  });

  record(6, "performance prediction", [&] {
    const Table t = read_results(mkn_results + "prediction.csv");
    const double ours = lookup(t, "Ours", "20"), ia = lookup(t, "IgnoreAgent", "20"), opt = lookup(t, "OPT", "20"),
                 rnd = lookup(t, "Random", "20");
    double running_max = -1.0, worst_drop = 0.0;
    std::string curve;
    for (int q = 1; q <= 20; ++q) {
      const double a = lookup(t, "Ours", std::to_string(q));
      worst_drop = std::max(worst_drop, running_max - a);
      running_max = std::max(running_max, a);
      curve += num(a, 2) + (q < 20 ? " " : "");
    }
    const double first = lookup(t, "Ours", "1");
    const bool monotone = worst_drop <= 0.02 && ours >= first;
    return Verdict{ours >= ia + 0.03 && ours >= opt - 0.07 && std::abs(rnd - 0.5) <= 0.02 && monotone,
                   "quiz 20: Ours " + num(ours) + ", IgnoreAgent " + num(ia) + " (need <= Ours - 0.03), OPT " + num(opt) +
                       " (need <= Ours + 0.07), Random " + num(rnd) + " (0.50 +- 0.02); largest drop below running max " +
                       num(worst_drop) + " (<= 0.02); Ours by quiz size: " + curve};
  });

  record(7, "task selection", [&] {
    const Table t = read_results(mkn_results + "selection.csv");
    const double t1 = lookup(t, "Ours", "type1_top1"), t2 = lookup(t, "Ours", "type2_top1"),
                 wo2 = lookup(t, "OursWoNorm", "type2_top1");
    return Verdict{t1 >= 0.30 && t2 - wo2 >= 0.10,
                   "Ours Type-1 Top-1 " + num(t1) + " (>= 0.30 = 3 x 0.10), Type-2 Top-1 " + num(t2) + " vs OursWoNorm " +
                       num(wo2) + " (gap >= 0.10); Random Type-1 Top-1 " + num(lookup(t, "Random", "type1_top1")) +
                       ", OPT50 " + num(lookup(t, "OPT50", "type1_top1")) + "/" + num(lookup(t, "OPT50", "type2_top1"))};
  });

  record(8, "generalization to held-out tasks", [&] {
    const Table t = read_results(mkn_results + "silhouette.csv");
    const double tr = lookup(t, "Ours", "silhouette_train_split"), ho = lookup(t, "Ours", "silhouette_heldout_split");
    return Verdict{std::abs(tr - ho) <= 0.1,
                   "training split " + num(tr) + ", held-out split " + num(ho) + ", |diff| " + num(std::abs(tr - ho)) + " (<= 0.1)"};
  });

  record(4, "CartPoleVar dynamics clusters", [&] {
    RunConfig c = runs.load("cartpolevar.conf", "cartpolevar-v1");
    c.training.wonorm = false;
    c.predmodel.enabled = false;
    const double secs = runs.run("cpv", c, {"train-population", "gen-constraints", "train-embedding", "silhouette"});
    const Table t = read_results(c.output_dir + "/results/silhouette.csv");
    const double ours = lookup(t, "Ours", "silhouette"), untrained = lookup(t, "RandomModel", "silhouette");
    return Verdict{ours >= 0.15 && ours - untrained >= 0.1, "trained " + num(ours) + " (>= 0.15), untrained " + num(untrained) +
                                                                 ", gap " + num(ours - untrained) + " (>= 0.1); " +
                                                                 num(secs / 60.0, 1) + " min"};
  });

  record(9, "new-agent transfer", [&] {
    RunConfig c = runs.load("multikeynav-doorbias.conf", "multikeynav-doorbias-v1");
    c.prediction.agent_population = mkn.output_dir + "/population";
    c.training.wonorm = false;
    c.predmodel.enabled = false;
    runs.run("transfer", c, {"train-population", "gen-constraints", "train-embedding", "eval-prediction"});
    const Table t = read_results(c.output_dir + "/results/prediction.csv");
    const double ours = lookup(t, "Ours", "20"), ia = lookup(t, "IgnoreAgent", "20");
    return Verdict{ours >= ia, "door-bias embedding on masked-population agents, quiz 20: Ours " + num(ours) +
                                   " vs IgnoreAgent " + num(ia) + " (Ours >= IgnoreAgent); OPT " + num(lookup(t, "OPT", "20"))};
  });

  record(11, "end-to-end reproducibility", [&] {
    RunConfig a = runs.load("smoke.conf", "repro-a-v1"), b = runs.load("smoke.conf", "repro-b-v1");
    runs.run("repro-a", a, {"run-all"});
    runs.run("repro-b", b, {"run-all"});
    std::size_t compared = 0;
    std::vector<std::string> diffs;
    for (const auto& f : list_files(a.output_dir, "."))
      if (f.ends_with(".csv")) {
        ++compared;
        if (!fs::exists(b.output_dir + "/" + f) || read_file(a.output_dir + "/" + f) != read_file(b.output_dir + "/" + f))
          diffs.push_back(f);
      }
    std::string detail = std::to_string(compared) + " CSV files compared byte for byte, " + std::to_string(diffs.size()) + " differ";
    for (const auto& d : diffs) detail += " " + d;
    return Verdict{diffs.empty() && compared > 0, detail};
  });

  int failed = 0;
  std::cout << "\nSummary\n";
  for (const auto& [c, r] : results) {
    std::cout << (r.second.pass ? "PASS" : "FAIL") << "  criterion " << c << ": " << r.first << '\n';
    failed += !r.second.pass;
  }
  std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " criteria passed\n";
  return failed ? 1 : 0;
}
