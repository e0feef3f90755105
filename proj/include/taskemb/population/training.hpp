#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "taskemb/numcore/adam.hpp"
#include "taskemb/population/policy.hpp"

namespace taskemb {

enum class TrainingMethod { BehavioralCloning, PolicyGradient };

inline std::string to_string(TrainingMethod m) { return m == TrainingMethod::BehavioralCloning ? "bc" : "pg"; }

inline TrainingMethod parse_method(std::string_view s) {
  if (s == "bc") return TrainingMethod::BehavioralCloning;
  if (s == "pg") return TrainingMethod::PolicyGradient;
  throw ParseError("unknown training method '" + std::string(s) + "' (expected bc or pg)");
}

struct Provenance {
  TrainingMethod method = TrainingMethod::BehavioralCloning;
  ActionMask mask = 0;
  TaskBias bias;
  std::size_t subpopulation = 0;
  std::size_t snapshot_index = 0;
  double validation_score = 0.0;
};

struct AgentSnapshot {
  Policy policy;
  Provenance provenance;

  std::vector<double> parameters() const { return flatten_parameters(policy.net); }
};

/// Record a snapshot whenever validation success on `tasks` (averaged over
/// `rollouts_per_task`) beats the last recorded one by at least `delta`.
struct SnapshotRule {
  std::vector<Task> tasks;
  int rollouts_per_task = 10;
  double delta = 0.01;
  std::uint64_t eval_seed = 0;
};

struct TrainLoopConfig {
  int max_epochs = 300;
  /// Stop after this many epochs without a new snapshot.
  int patience = 30;
  double learning_rate = 3e-3;
};

struct BcConfig : TrainLoopConfig {
  /// Expert rollouts per epoch are added until this many state-action pairs
  /// are collected, so long-horizon environments get fewer demonstrations.
  int expert_samples_per_epoch = 3000;
  int batch_size = 64;
};

enum class ReturnMode { Binary, SurvivalFraction };

struct PgConfig : TrainLoopConfig {
  int episodes_per_batch = 16;
  int batches_per_epoch = 8;
  double baseline_decay = 0.9;
  ReturnMode returns = ReturnMode::Binary;
};

namespace detail {

/// Shared epoch loop: `epoch(policy, rng)` trains for one epoch.
template <typename EpochFn>
std::vector<AgentSnapshot> snapshot_training(EnvId env, ActionMask mask, const TaskBias& bias, TrainingMethod method,
                                             const SnapshotRule& rule, const TrainLoopConfig& cfg, Rng& rng,
                                             EpochFn&& epoch) {
  Policy policy = make_policy(env, rng, mask);
  std::vector<AgentSnapshot> snaps;
  auto record = [&](double score) {
    Provenance prov{method, policy.mask, bias, 0, snaps.size(), score};
    snaps.push_back({policy, prov});
  };
  double last = evaluate_policy(policy, rule.tasks, rule.rollouts_per_task, rule.eval_seed);
  record(last);
  int since = 0;
  for (int e = 0; e < cfg.max_epochs && since < cfg.patience; ++e) {
    epoch(policy, rng);
    const double score = evaluate_policy(policy, rule.tasks, rule.rollouts_per_task, rule.eval_seed);
    if (score >= last + rule.delta) {
      record(score);
      last = score;
      since = 0;
    } else {
      ++since;
    }
    if (last >= 1.0) break;
  }
  return snaps;
}

inline void check_finite(const MlpGradients& g, const char* who) {
  if (!g.all_finite()) throw NonFiniteLoss(std::string(who) + ": non-finite gradient encountered");
}

}  // namespace detail

/// Behavioral cloning from the scripted expert on freshly generated expert
/// rollouts each epoch. Steps whose expert action is masked end that
/// demonstration.
inline std::vector<AgentSnapshot> train_bc(EnvId env, ActionMask mask, const TaskBias& bias, const SnapshotRule& rule,
                                           const BcConfig& cfg, Rng& rng) {
  AdamState adam;
  std::vector<std::vector<double>> xs;
  std::vector<Action> ys;
  ForwardCache cache;
  BackwardScratch back;
  std::vector<double> out_grad;
  auto epoch = [&](Policy& policy, Rng& r) {
    if (adam.m.empty()) adam = AdamState(policy.net.parameter_count(), cfg.learning_rate);
    xs.clear();
    ys.clear();
    for (std::size_t guard = 0; xs.size() < static_cast<std::size_t>(cfg.expert_samples_per_epoch); ++guard) {
      if (guard > 100u * static_cast<std::size_t>(cfg.expert_samples_per_epoch))
        throw Error("train_bc: expert produces no usable demonstrations under mask " + std::to_string(policy.mask));
      const Task task = sample_task(env, r, bias);
      State s = task.state0;
      for (int t = 0; t < horizon(env); ++t) {
        Action a;
        try {
          a = expert_action(env, s, policy.mask);
        } catch (const UnsolvableState&) {
          break;
        }
        xs.push_back(featurize(env, s));
        ys.push_back(a);
        const StepOutcome out = step(env, s, a, r);
        if (out.terminal != Terminal::Alive) break;
        s = out.next_state;
      }
    }
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    r.shuffle(std::span<std::size_t>(order));
    MlpGradients grads(policy.net);
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      grads.zero();
      double loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& x = xs[order[b]];
        const Action& y = ys[order[b]];
        auto out = mlp_forward(policy.net, x, cache);
        out_grad.assign(out.begin(), out.end());
        if (is_discrete(env)) {
          for (std::size_t a = 0; a < out_grad.size(); ++a)
            if (is_masked(policy.mask, static_cast<int>(a))) out_grad[a] = kMaskedLogit;
          softmax_inplace(out_grad);
          loss -= std::log(std::max(out_grad[static_cast<std::size_t>(y.id)], 1e-300));
          out_grad[static_cast<std::size_t>(y.id)] -= 1.0;
          for (std::size_t a = 0; a < out_grad.size(); ++a)
            if (is_masked(policy.mask, static_cast<int>(a))) out_grad[a] = 0.0;
        } else {
          for (std::size_t i = 0; i < 2; ++i) {
            const double d = out[i] - y.force[i] / point_mass::kMaxForce;
            out_grad[i] = d;
            loss += 0.5 * d * d;
          }
        }
        mlp_backward(policy.net, cache, out_grad, grads, nullptr, back);
      }
      if (!std::isfinite(loss)) throw NonFiniteLoss("train_bc: non-finite loss " + std::to_string(loss));
      grads.scale(1.0 / static_cast<double>(end - start));
      detail::check_finite(grads, "train_bc");
      adam_step(policy.net, grads, adam);
    }
  };
  return detail::snapshot_training(env, mask, bias, TrainingMethod::BehavioralCloning, rule, cfg, rng, epoch);
}

/// Baseline-subtracted REINFORCE gradient of one batch of episodes, to be
/// ascended. `baseline` is updated as a moving average of episode returns.
struct PgBatch {
  std::vector<std::vector<PolicyStep>> episodes;
  std::vector<double> returns;
};

inline PgBatch collect_pg_batch(const Policy& policy, const TaskBias& bias, int episodes, ReturnMode mode, Rng& rng) {
  PgBatch batch;
  PolicyActor actor(policy);
  const EnvId env = policy.env;
  for (int e = 0; e < episodes; ++e) {
    const Task task = sample_task(env, rng, bias);
    std::vector<PolicyStep> steps;
    State s = task.state0;
    bool solved = false;
    int t = 0;
    for (; t < horizon(env); ++t) {
      PolicyStep rec;
      const Action a = actor.act(s, rng, &rec);
      steps.push_back(rec);
      const StepOutcome out = step(env, s, a, rng);
      if (out.terminal != Terminal::Alive) {
        solved = out.terminal == Terminal::Solved;
        ++t;
        break;
      }
      s = out.next_state;
    }
    const double ret = mode == ReturnMode::Binary ? (solved ? 1.0 : 0.0)
                                                  : (solved ? 1.0 : static_cast<double>(t) / horizon(env));
    batch.episodes.push_back(std::move(steps));
    batch.returns.push_back(ret);
  }
  return batch;
}

/// Gradient of the surrogate -mean_e (R_e - baseline) sum_t log pi(a_t|s_t),
/// i.e. the direction Adam should descend.
inline MlpGradients reinforce_gradient(const Policy& policy, const PgBatch& batch, double baseline) {
  MlpGradients grads(policy.net);
  PolicyGradScratch scratch;
  const double n = static_cast<double>(batch.episodes.size());
  for (std::size_t e = 0; e < batch.episodes.size(); ++e) {
    const double adv = batch.returns[e] - baseline;
    if (adv == 0.0) continue;
    for (const PolicyStep& st : batch.episodes[e]) {
      const std::span<const double> f(st.features.data(), feature_dim(policy.env));
      log_prob_backward(policy, f, st.action, st.raw, -adv / n, grads, scratch);
    }
  }
  return grads;
}

inline std::vector<AgentSnapshot> train_pg(EnvId env, ActionMask mask, const TaskBias& bias, const SnapshotRule& rule,
                                           const PgConfig& cfg, Rng& rng) {
  AdamState adam;
  double baseline = 0.0;
  bool have_baseline = false;
  auto epoch = [&](Policy& policy, Rng& r) {
    if (adam.m.empty()) adam = AdamState(policy.net.parameter_count(), cfg.learning_rate);
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      const PgBatch batch = collect_pg_batch(policy, bias, cfg.episodes_per_batch, cfg.returns, r);
      double mean = 0.0;
      for (double v : batch.returns) mean += v;
      mean /= static_cast<double>(batch.returns.size());
      const MlpGradients grads = reinforce_gradient(policy, batch, have_baseline ? baseline : mean);
      detail::check_finite(grads, "train_pg");
      adam_step(policy.net, grads, adam);
      baseline = have_baseline ? cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean : mean;
      have_baseline = true;
    }
  };
  return detail::snapshot_training(env, mask, bias, TrainingMethod::PolicyGradient, rule, cfg, rng, epoch);
}

}  // namespace taskemb
