#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "taskemb/envs/rollout.hpp"
#include "taskemb/numcore/adam.hpp"
#include "taskemb/numcore/mlp.hpp"
#include "taskemb/numcore/text.hpp"

namespace taskemb {

/// State with the task context removed: MultiKeyNav drops the door bits,
/// CartPoleVar keeps (x, v, theta, omega), PointMass keeps position and
/// velocity (scaled by 1/4).
inline std::size_t context_free_dim(EnvId env) noexcept {
  return env.kind == EnvKind::MultiKeyNav ? 5 : 4;
}

inline std::vector<double> context_free(EnvId env, const State& s) {
  switch (env.kind) {
    case EnvKind::MultiKeyNav: return {s[0], s[1], s[2], s[3], s[4]};
    case EnvKind::CartPoleVar: return {s[0], s[1], s[2], s[3]};
    case EnvKind::PointMass: return {s[0] / 4.0, s[1] / 4.0, s[2] / 4.0, s[3] / 4.0};
  }
  return {};
}

/// Discrete actions are one-hot; PointMass forces are divided by the limit.
inline std::vector<double> action_features(EnvId env, const Action& a) {
  if (is_discrete(env)) {
    std::vector<double> v(static_cast<std::size_t>(action_dim(env)), 0.0);
    v[static_cast<std::size_t>(a.id)] = 1.0;
    return v;
  }
  return {a.force[0] / point_mass::kMaxForce, a.force[1] / point_mass::kMaxForce};
}

struct Transition {
  std::size_t task = 0;        // index into the task list
  std::vector<double> input;   // context-free state followed by action features
  double reward = 0.0;
  std::vector<double> next;    // context-free next state
};

struct TransitionData {
  EnvId env;
  std::vector<std::vector<double>> task_features;  // featurize(s0)
  std::vector<Transition> transitions;
};

/// Transitions from `rollouts` expert rollouts on random tasks.
inline TransitionData collect_transitions(EnvId env, std::size_t rollouts, Rng& rng) {
  TransitionData d{env, {}, {}};
  ExpertPolicy expert{env, 0};
  for (std::size_t k = 0; k < rollouts; ++k) {
    const Task task = sample_task(env, rng);
    d.task_features.push_back(featurize(env, task.state0));
    State s = task.state0;
    for (int t = 0; t < horizon(env); ++t) {
      const Action a = expert(s, rng);
      const StepOutcome out = step(env, s, a, rng);
      Transition tr;
      tr.task = k;
      tr.input = context_free(env, s);
      const auto af = action_features(env, a);
      tr.input.insert(tr.input.end(), af.begin(), af.end());
      tr.reward = out.reward;
      tr.next = context_free(env, out.next_state);
      d.transitions.push_back(std::move(tr));
      if (out.terminal != Terminal::Alive) break;
      s = out.next_state;
    }
  }
  return d;
}

struct PredModelConfig {
  std::size_t latent_dim = 0;  // 0: 6 for MultiKeyNav, 3 otherwise
  int epochs = 500;
  std::size_t batch_size = 512;
  double learning_rate = 1e-3;
  double alpha_r = 1.0;
  double alpha_s = 1.0;
  double beta_kl = 0.01;
};

/// Inference network q(z | s0) -> (mean, log-variance) and a decoder with a
/// shared trunk whose final layer emits [reward, next context-free state].
struct PredModel {
  EnvId env;
  std::size_t latent = 0;
  Mlp encoder;
  Mlp decoder;
};

inline PredModel make_predmodel(EnvId env, std::size_t latent, Rng& rng) {
  if (latent == 0) latent = env.kind == EnvKind::MultiKeyNav ? 6 : 3;
  const std::size_t in = feature_dim(env);
  const std::size_t dec_in = context_free_dim(env) + static_cast<std::size_t>(action_dim(env)) + latent;
  PredModel m{env, latent, make_mlp({in, 128, 128, 2 * latent}, Activation::ReLU, Activation::Identity, rng),
              make_mlp({dec_in, 128, 128, 1 + context_free_dim(env)}, Activation::ReLU, Activation::Identity, rng)};
  return m;
}

/// KL(N(mu, exp(logvar)) || N(0, I)).
inline double gaussian_kl(std::span<const double> mu, std::span<const double> logvar) {
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) kl += 0.5 * (std::exp(logvar[i]) + mu[i] * mu[i] - 1.0 - logvar[i]);
  return kl;
}

/// Embedding of a task: the posterior mean.
inline std::vector<double> predmodel_embed(const PredModel& m, const Task& t) {
  const auto out = mlp_forward(m.encoder, featurize(m.env, t.state0));
  return {out.begin(), out.begin() + static_cast<std::ptrdiff_t>(m.latent)};
}

struct PredModelGrads {
  MlpGradients encoder, decoder;
};

/// Mean loss over `batch` (indices into data.transitions) with the given
/// reparameterization noise (latent values per batch item). Accumulates
/// gradients when `grads` is non-null.
class PredModelObjective {
 public:
  explicit PredModelObjective(const PredModel& m) : m_(&m) {}

  double evaluate(const TransitionData& data, std::span<const std::size_t> batch, std::span<const double> noise,
                  const PredModelConfig& cfg, PredModelGrads* grads = nullptr) {
    const std::size_t L = m_->latent;
    if (noise.size() != batch.size() * L) throw DimensionError("predmodel: noise size mismatch");
    const double w = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Transition& tr = data.transitions[batch[b]];
      const auto enc = mlp_forward(m_->encoder, data.task_features[tr.task], enc_cache_);
      const std::span<const double> mu = enc.subspan(0, L), lv = enc.subspan(L, L);
      z_.resize(L);
      for (std::size_t i = 0; i < L; ++i) z_[i] = mu[i] + std::exp(0.5 * lv[i]) * noise[b * L + i];
      dec_in_ = tr.input;
      dec_in_.insert(dec_in_.end(), z_.begin(), z_.end());
      const auto out = mlp_forward(m_->decoder, dec_in_, dec_cache_);
      double loss = cfg.beta_kl * gaussian_kl(mu, lv);
      out_grad_.assign(out.size(), 0.0);
      const double dr = out[0] - tr.reward;
      loss += cfg.alpha_r * dr * dr;
      out_grad_[0] = 2.0 * cfg.alpha_r * dr * w;
      for (std::size_t i = 0; i < tr.next.size(); ++i) {
        const double ds = out[1 + i] - tr.next[i];
        loss += cfg.alpha_s * ds * ds;
        out_grad_[1 + i] = 2.0 * cfg.alpha_s * ds * w;
      }
      total += loss;
      if (grads == nullptr) continue;
      in_grad_.assign(dec_in_.size(), 0.0);
      mlp_backward(m_->decoder, dec_cache_, out_grad_, grads->decoder, &in_grad_, back_);
      enc_grad_.assign(2 * L, 0.0);
      for (std::size_t i = 0; i < L; ++i) {
        const double dz = in_grad_[tr.input.size() + i];
        const double sd = std::exp(0.5 * lv[i]);
        enc_grad_[i] = dz + cfg.beta_kl * w * mu[i];
        enc_grad_[L + i] = dz * 0.5 * sd * noise[b * L + i] + cfg.beta_kl * w * 0.5 * (std::exp(lv[i]) - 1.0);
      }
      mlp_backward(m_->encoder, enc_cache_, enc_grad_, grads->encoder, nullptr, back_);
    }
    return total * w;
  }

 private:
  const PredModel* m_;
  ForwardCache enc_cache_, dec_cache_;
  BackwardScratch back_;
  std::vector<double> z_, dec_in_, out_grad_, in_grad_, enc_grad_;
};

struct PredModelTrainResult {
  PredModel model;
  std::vector<double> epoch_loss;
};

inline PredModelTrainResult train_predmodel(const TransitionData& data, const PredModelConfig& cfg, Rng& rng) {
  if (data.transitions.empty()) throw Error("train_predmodel: no transitions");
  PredModelTrainResult res{make_predmodel(data.env, cfg.latent_dim, rng), {}};
  PredModel& m = res.model;
  PredModelObjective objective(m);
  AdamState adam_e(m.encoder.parameter_count(), cfg.learning_rate), adam_d(m.decoder.parameter_count(), cfg.learning_rate);
  PredModelGrads grads{MlpGradients(m.encoder), MlpGradients(m.decoder)};
  std::vector<std::size_t> order(data.transitions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> noise;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      noise.resize(batch.size() * m.latent);
      for (double& v : noise) v = rng.normal();
      grads.encoder.zero();
      grads.decoder.zero();
      const double loss = objective.evaluate(data, batch, noise, cfg, &grads);
      if (!std::isfinite(loss) || !grads.encoder.all_finite() || !grads.decoder.all_finite())
        throw NonFiniteLoss("train_predmodel: non-finite loss at epoch " + std::to_string(epoch));
      adam_step(m.encoder, grads.encoder, adam_e);
      adam_step(m.decoder, grads.decoder, adam_d);
      sum += loss;
      ++batches;
    }
    res.epoch_loss.push_back(sum / static_cast<double>(batches));
  }
  return res;
}

inline void write_predmodel(std::ostream& os, const PredModel& m) {
  os << "taskemb-predmodel " << to_string(m.env) << ' ' << m.latent << '\n';
  write_mlp(os, m.encoder);
  write_mlp(os, m.decoder);
}

inline PredModel read_predmodel(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("predmodel: empty file");
  const auto f = split(trim(line), ' ');
  if (f.size() != 3 || f[0] != "taskemb-predmodel") throw ParseError("predmodel: bad header '" + line + "'");
  PredModel m;
  m.env = parse_env(f[1]);
  m.latent = static_cast<std::size_t>(std::stoull(f[2]));
  m.encoder = read_mlp(is);
  m.decoder = read_mlp(is);
  if (m.encoder.out_dim() != 2 * m.latent) throw DimensionError("predmodel: encoder output does not match latent size");
  return m;
}

}  // namespace taskemb
