#pragma once

#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "taskemb/envs/env.hpp"
#include "taskemb/numcore/adam.hpp"
#include "taskemb/numcore/math.hpp"
#include "taskemb/numcore/mlp.hpp"
#include "taskemb/similarity/similarity.hpp"

namespace taskemb {

struct EmbeddingNet {
  EnvId env;
  std::size_t dim = 0;
  Mlp net;

  friend bool operator==(const EmbeddingNet&, const EmbeddingNet&) = default;
};

/// 6 for MultiKeyNav (5 without norm constraints), 3 otherwise.
inline std::size_t default_embedding_dim(EnvId env, bool with_norm = true) noexcept {
  if (env.kind == EnvKind::MultiKeyNav) return with_norm ? 6 : 5;
  return 3;
}

inline EmbeddingNet make_embedding_net(EnvId env, std::size_t dim, Rng& rng) {
  if (dim == 0) throw Error("embedding dimension must be >= 1");
  const std::size_t in = feature_dim(env);
  const std::vector<std::size_t> sizes =
      env.kind == EnvKind::CartPoleVar ? std::vector<std::size_t>{in, 64, 32, dim} : std::vector<std::size_t>{in, 32, 32, dim};
  return {env, dim, make_mlp(sizes, Activation::ReLU, Activation::Identity, rng)};
}

inline std::vector<double> embed(const EmbeddingNet& model, const Task& task) {
  if (task.env != model.env)
    throw Error("embed: task from " + to_string(task.env) + " but model is for " + to_string(model.env));
  return mlp_forward(model.net, featurize(model.env, task.state0));
}

inline std::vector<std::vector<double>> embed_all(const EmbeddingNet& model, std::span<const Task> tasks) {
  std::vector<std::vector<double>> out;
  out.reserve(tasks.size());
  for (const Task& t : tasks) out.push_back(embed(model, t));
  return out;
}

/// softplus(<E1,E3> - <E1,E2>).
inline double triplet_loss(std::span<const double> e1, std::span<const double> e2, std::span<const double> e3) {
  if (e1.size() != e2.size() || e1.size() != e3.size()) throw DimensionError("triplet_loss: embedding sizes differ");
  return softplus(dot(e1, e3) - dot(e1, e2));
}

/// Adds scale * d(triplet_loss)/dE_k into g1, g2, g3.
inline void triplet_loss_grad(std::span<const double> e1, std::span<const double> e2, std::span<const double> e3,
                              double scale, std::span<double> g1, std::span<double> g2, std::span<double> g3) {
  const double s = scale * sigmoid(dot(e1, e3) - dot(e1, e2));
  for (std::size_t i = 0; i < e1.size(); ++i) {
    g1[i] += s * (e3[i] - e2[i]);
    g2[i] -= s * e1[i];
    g3[i] += s * e1[i];
  }
}

/// softplus(||E_easier|| - ||E_harder||); label true means s4 is easier.
inline double norm_pair_loss(std::span<const double> e4, std::span<const double> e5, bool label) {
  if (e4.size() != e5.size()) throw DimensionError("norm_pair_loss: embedding sizes differ");
  const double n4 = norm2(e4), n5 = norm2(e5);
  return label ? softplus(n4 - n5) : softplus(n5 - n4);
}

inline void norm_pair_loss_grad(std::span<const double> e4, std::span<const double> e5, bool label, double scale,
                                std::span<double> g4, std::span<double> g5) {
  const double n4 = norm2(e4), n5 = norm2(e5);
  const double sign = label ? 1.0 : -1.0;
  const double s = scale * sigmoid(sign * (n4 - n5)) * sign;
  for (std::size_t i = 0; i < e4.size(); ++i) {
    if (n4 > 0.0) g4[i] += s * e4[i] / n4;
    if (n5 > 0.0) g5[i] -= s * e5[i] / n5;
  }
}

struct LossBreakdown {
  double triplet = 0.0;  // mean over triplets
  double pair = 0.0;     // mean over pairs
  double total = 0.0;    // triplet + lambda * pair
};

/// Combined objective on the given constraints (indices into `features`),
/// optionally accumulating the parameter gradient into `grads`.
class ConstraintObjective {
 public:
  ConstraintObjective(const EmbeddingNet& model, std::span<const std::vector<double>> features)
      : model_(&model), features_(features) {}

  LossBreakdown evaluate(std::span<const TripletConstraint> triplets, std::span<const PairConstraint> pairs,
                         double lambda, MlpGradients* grads = nullptr) {
    touch_.clear();
    auto use = [&](std::size_t idx) {
      if (idx >= features_.size()) throw Error("constraint refers to task " + std::to_string(idx) + " outside the pool");
      if (slot_.size() < features_.size()) slot_.assign(features_.size(), npos);
      if (slot_[idx] == npos) {
        slot_[idx] = touch_.size();
        touch_.push_back(idx);
      }
      return slot_[idx];
    };
    for (const auto& t : triplets) use(t.s1), use(t.s2), use(t.s3);
    for (const auto& p : pairs) use(p.s4), use(p.s5);
    const std::size_t n = model_->dim;
    emb_.assign(touch_.size() * n, 0.0);
    grad_.assign(touch_.size() * n, 0.0);
    for (std::size_t k = 0; k < touch_.size(); ++k) {
      const auto out = mlp_forward(model_->net, features_[touch_[k]], cache_);
      std::copy(out.begin(), out.end(), emb_.begin() + static_cast<std::ptrdiff_t>(k * n));
    }
    auto e = [&](std::size_t idx) { return std::span<const double>(emb_.data() + slot_[idx] * n, n); };
    auto g = [&](std::size_t idx) { return std::span<double>(grad_.data() + slot_[idx] * n, n); };
    LossBreakdown loss;
    const double wt = triplets.empty() ? 0.0 : 1.0 / static_cast<double>(triplets.size());
    const double wp = pairs.empty() ? 0.0 : lambda / static_cast<double>(pairs.size());
    for (const auto& t : triplets) {
      // The task labelled as more similar to s1 plays the role of E2.
      const std::size_t near = t.label ? t.s2 : t.s3, far = t.label ? t.s3 : t.s2;
      loss.triplet += triplet_loss(e(t.s1), e(near), e(far));
      if (grads != nullptr) triplet_loss_grad(e(t.s1), e(near), e(far), wt, g(t.s1), g(near), g(far));
    }
    for (const auto& p : pairs) {
      loss.pair += norm_pair_loss(e(p.s4), e(p.s5), p.label);
      if (grads != nullptr && lambda != 0.0) norm_pair_loss_grad(e(p.s4), e(p.s5), p.label, wp, g(p.s4), g(p.s5));
    }
    if (!triplets.empty()) loss.triplet /= static_cast<double>(triplets.size());
    if (!pairs.empty()) loss.pair /= static_cast<double>(pairs.size());
    loss.total = loss.triplet + lambda * loss.pair;
    if (grads != nullptr)
      for (std::size_t k = 0; k < touch_.size(); ++k) {
        mlp_forward(model_->net, features_[touch_[k]], cache_);
        mlp_backward(model_->net, cache_, std::span<const double>(grad_.data() + k * n, n), *grads, nullptr, back_);
      }
    for (auto idx : touch_) slot_[idx] = npos;
    return loss;
  }

 private:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  const EmbeddingNet* model_;
  std::span<const std::vector<double>> features_;
  std::vector<std::size_t> slot_, touch_;
  std::vector<double> emb_, grad_;
  ForwardCache cache_;
  BackwardScratch back_;
};

inline std::vector<std::vector<double>> featurize_all(EnvId env, std::span<const Task> tasks) {
  std::vector<std::vector<double>> f;
  f.reserve(tasks.size());
  for (const Task& t : tasks) {
    if (t.env != env) throw Error("task pool mixes environments");
    f.push_back(featurize(env, t.state0));
  }
  return f;
}

struct EmbeddingTrainConfig {
  double lambda = 0.4;
  int epochs = 300;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  int patience = 20;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct EmbeddingTrainResult {
  EmbeddingNet model;
  std::vector<EpochLog> log;
  int best_epoch = -1;  // -1: the initial parameters were never beaten
  double initial_validation_loss = 0.0;
  double best_validation_loss = 0.0;
  LossBreakdown test_loss;
};

/// Minibatch Adam on mean triplet loss + lambda * mean pair loss, with early
/// stopping on validation loss. Each minibatch holds `batch_size` triplets
/// and the matching share of pairs. `resample`, when given, replaces the
/// training constraints at the start of every epoch.
inline EmbeddingTrainResult train_embedding(EnvId env, std::size_t dim, std::span<const Task> pool,
                                            const ConstraintSet& train, const ConstraintSet& validation,
                                            const ConstraintSet& test, const EmbeddingTrainConfig& cfg, Rng& rng,
                                            const std::function<ConstraintSet(int)>& resample = {}) {
  if (train.triplets.empty() && train.pairs.empty()) throw Error("train_embedding: empty training constraint set");
  if (cfg.lambda < 0.0) throw Error("train_embedding: lambda must be >= 0");
  if (cfg.batch_size == 0) throw Error("train_embedding: batch size must be >= 1");
  const auto features = featurize_all(env, pool);
  EmbeddingTrainResult res{make_embedding_net(env, dim, rng), {}, -1, 0.0, 0.0, {}};
  EmbeddingNet& model = res.model;
  ConstraintObjective objective(model, features);
  auto val_loss = [&] { return objective.evaluate(validation.triplets, validation.pairs, cfg.lambda).total; };
  res.initial_validation_loss = res.best_validation_loss = val_loss();
  Mlp best = model.net;
  AdamState adam(model.net.parameter_count(), cfg.learning_rate);
  MlpGradients grads(model.net);
  ConstraintSet current = train;
  std::vector<TripletConstraint> tb;
  std::vector<PairConstraint> pb;
  int since = 0;
  for (int epoch = 0; epoch < cfg.epochs && since < cfg.patience; ++epoch) {
    if (resample) current = resample(epoch);
    rng.shuffle(std::span<TripletConstraint>(current.triplets));
    rng.shuffle(std::span<PairConstraint>(current.pairs));
    const std::size_t nt = current.triplets.size(), np = current.pairs.size();
    const std::size_t batches = std::max<std::size_t>(1, (std::max(nt, np) + cfg.batch_size - 1) / cfg.batch_size);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::span<const TripletConstraint> ts(current.triplets.data() + b * nt / batches,
                                                  (b + 1) * nt / batches - b * nt / batches);
      const std::span<const PairConstraint> ps(current.pairs.data() + b * np / batches,
                                               (b + 1) * np / batches - b * np / batches);
      grads.zero();
      const LossBreakdown l = objective.evaluate(ts, ps, cfg.lambda, &grads);
      if (!std::isfinite(l.total) || !grads.all_finite())
        throw NonFiniteLoss("train_embedding: non-finite loss at epoch " + std::to_string(epoch));
      adam_step(model.net, grads, adam);
      epoch_loss += l.total;
    }
    const double v = val_loss();
    res.log.push_back({epoch, epoch_loss / static_cast<double>(batches), v});
    if (v < res.best_validation_loss) {
      res.best_validation_loss = v;
      res.best_epoch = epoch;
      best = model.net;
      since = 0;
    } else {
      ++since;
    }
  }
  model.net = best;
  res.test_loss = objective.evaluate(test.triplets, test.pairs, cfg.lambda);
  return res;
}

/// Fraction of triplets with <E1,E2> > <E1,E3> agreeing with their label.
inline double triplet_accuracy(std::span<const std::vector<double>> emb, std::span<const TripletConstraint> triplets) {
  if (triplets.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& t : triplets) ok += (dot(emb[t.s1], emb[t.s2]) > dot(emb[t.s1], emb[t.s3])) == t.label;
  return static_cast<double>(ok) / static_cast<double>(triplets.size());
}

// ---------------------------------------------------------------------------
// Model file: "taskemb-embedding <env> <dim>" followed by the weights.

inline void write_embedding(std::ostream& os, const EmbeddingNet& m) {
  os << "taskemb-embedding " << to_string(m.env) << ' ' << m.dim << '\n';
  write_mlp(os, m.net);
}

inline EmbeddingNet read_embedding(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("embedding model: empty file");
  const auto f = split(trim(line), ' ');
  if (f.size() != 3 || f[0] != "taskemb-embedding") throw ParseError("embedding model: bad header '" + line + "'");
  EmbeddingNet m;
  m.env = parse_env(f[1]);
  m.dim = static_cast<std::size_t>(std::stoull(f[2]));
  m.net = read_mlp(is);
  if (m.net.in_dim() != feature_dim(m.env) || m.net.out_dim() != m.dim)
    throw DimensionError("embedding model: network shape does not match header");
  return m;
}

/// CSV: task_index,e_1..e_n,norm
inline void write_embedding_csv(std::ostream& os, std::span<const std::vector<double>> emb) {
  const std::size_t n = emb.empty() ? 0 : emb.front().size();
  os << "task_index";
  for (std::size_t i = 1; i <= n; ++i) os << ",e_" << i;
  os << ",norm\n";
  for (std::size_t t = 0; t < emb.size(); ++t) {
    os << t;
    for (double v : emb[t]) os << ',' << format_double(v);
    os << ',' << format_double(norm2(emb[t])) << '\n';
  }
}

}  // namespace taskemb
