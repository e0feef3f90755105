#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "gradcheck.hpp"
#include "taskemb/benchmarks/predmodel.hpp"
#include "taskemb/benchmarks/selection.hpp"

using namespace taskemb;

namespace {

const EnvId kMkn{EnvKind::MultiKeyNav};

/// Agent k succeeds with probability rates[k] on every task.
struct BernoulliPopulation {
  std::vector<double> rates;
  std::size_t size() const { return rates.size(); }
  bool success(std::size_t k, const Task&, Rng& rng) const { return rng.bernoulli(rates[k]); }
};

/// Agent k solves a task iff its location is below (k + 1) / (A + 1).
struct ThresholdPopulation {
  std::size_t agents = 4;
  std::size_t size() const { return agents; }
  bool success(std::size_t k, const Task& t, Rng&) const {
    return t.state0[0] < static_cast<double>(k + 1) / static_cast<double>(agents + 1);
  }
};

/// Literal definition: s(i) = (b - a) / max(a, b), 0 for singletons.
double brute_silhouette(const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::map<int, std::pair<double, int>> d;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (j == i) continue;
      auto& e = d[y[j]];
      e.first += std::sqrt(squared_distance(x[i], x[j]));
      e.second += 1;
    }
    if (d.find(y[i]) == d.end()) continue;
    const double a = d[y[i]].first / d[y[i]].second;
    double b = INFINITY;
    for (const auto& [label, e] : d)
      if (label != y[i]) b = std::min(b, e.first / e.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(x.size());
}

}  // namespace

TEST(Silhouette, HandComputedExample) {
  const std::vector<std::vector<double>> x{{0.0}, {1.0}, {4.0}};
  const std::vector<int> y{0, 0, 1};
  EXPECT_NEAR(silhouette(x, y), (0.75 + 2.0 / 3.0 + 0.0) / 3.0, 1e-15);
}

TEST(Silhouette, MatchesBruteForce) {
  Rng rng(1);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    const int c = static_cast<int>(rng.below(4));
    x.push_back({rng.normal() + 2.0 * c, rng.normal(), rng.normal() - c});
    y.push_back(c * 3);
  }
  x.push_back({9.0, 9.0, 9.0});
  y.push_back(100);
  EXPECT_NEAR(silhouette(x, y), brute_silhouette(x, y), 1e-12);
}

TEST(Silhouette, SeparatedClustersScoreNearOne) {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    x.push_back({0.001 * i});
    y.push_back(0);
    x.push_back({100.0 + 0.001 * i});
    y.push_back(1);
  }
  EXPECT_GT(silhouette(x, y), 0.999);
  const std::vector<int> one(x.size(), 0);
  EXPECT_THROW(silhouette(x, one), Error);
}

TEST(Silhouette, ClusterLabels) {
  Task t{kMkn, {}};
  t.state0[1] = 1.0;  // holds key A; door 1 needs A and B
  EXPECT_EQ(cluster_label(t), 0b0010);
}

TEST(Stats, RanksAndCorrelations) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
  const std::vector<double> x{1, 2, 3, 4, 5}, y{1, 4, 9, 16, 25};
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-15);
  EXPECT_LT(pearson(x, y), 1.0);
  EXPECT_NEAR(pearson(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0, 1e-15);
  const std::vector<double> rev{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, rev), -1.0, 1e-15);
}

TEST(Stats, MeanStderrAndFolds) {
  const std::vector<double> v{1, 2, 3, 4};
  const MeanStderr m = mean_stderr(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.stderr_, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
  std::vector<char> correct(25, 0);
  for (int i = 0; i < 4; ++i) correct[static_cast<std::size_t>(i)] = 1;
  const auto acc = fold_accuracies(correct, 10);
  ASSERT_EQ(acc.size(), 10u);
  EXPECT_EQ(acc[0], 1.0);
  EXPECT_EQ(acc[1], 1.0);
  EXPECT_EQ(acc[2], 0.0);
  EXPECT_THROW(fold_accuracies(std::vector<char>(5, 1), 10), Error);
}

TEST(SoftNn, LimitsOfBeta) {
  const std::vector<std::vector<double>> quiz{{0.0}, {1.0}, {1.1}};
  const std::vector<char> out{1, 0, 0};
  const std::vector<double> test{0.1};
  EXPECT_TRUE(predict_softnn(quiz, out, test, 1e4));     // nearest neighbour
  EXPECT_FALSE(predict_softnn(quiz, out, test, 1e-6));   // majority
  const std::vector<std::vector<double>> far{{1000.0}, {1000.5}};
  const std::vector<char> out2{1, 0};
  const std::vector<double> t2{0.0};
  EXPECT_TRUE(predict_softnn(far, out2, t2, 1e4));  // no underflow
  EXPECT_THROW(predict_softnn(quiz, out, test, 0.0), Error);
}

TEST(SoftNn, ExactHalfPredictsFailure) {
  const std::vector<std::vector<double>> quiz{{-1.0}, {1.0}};
  const std::vector<char> out{1, 0};
  EXPECT_FALSE(predict_softnn(quiz, out, std::vector<double>{0.0}, 10.0));
}

TEST(SoftNn, TuneBetaPrefersEarliestOnTies) {
  const BernoulliPopulation pop{{1.0}};
  const auto data = gen_quiz_dataset(kMkn, pop, 3, 20, 1);
  const auto emb = embed_dataset(data, [](const Task& t) { return std::vector<double>{t.state0[0]}; });
  EXPECT_EQ(tune_beta(data, emb, 3), kBetaGrid.front());
}

TEST(Quiz, SmallerSizesArePrefixesAndThreadsDoNotMatter) {
  const BernoulliPopulation pop{{0.2, 0.7, 0.9}};
  const auto a = gen_quiz_dataset(kMkn, pop, 20, 30, 5, 1);
  const auto b = gen_quiz_dataset(kMkn, pop, 7, 30, 5, 3);
  for (std::size_t k = 0; k < 30; ++k) {
    EXPECT_EQ(a[k].agent, b[k].agent);
    EXPECT_EQ(a[k].test_task, b[k].test_task);
    EXPECT_EQ(a[k].test_outcome, b[k].test_outcome);
    for (std::size_t q = 0; q < 7; ++q) {
      EXPECT_EQ(a[k].quiz[q], b[k].quiz[q]);
      EXPECT_EQ(a[k].quiz_outcomes[q], b[k].quiz_outcomes[q]);
    }
  }
  EXPECT_THROW(gen_quiz_dataset(kMkn, pop, 21, 1, 5), Error);
}

TEST(Quiz, CsvRoundTrip) {
  const BernoulliPopulation pop{{0.5}};
  const auto data = gen_quiz_dataset(kMkn, pop, 4, 6, 2);
  std::stringstream ss;
  write_quiz_dataset(ss, data);
  const auto back = read_quiz_dataset(ss);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    EXPECT_EQ(back[k].test_task, data[k].test_task);
    EXPECT_EQ(back[k].quiz, data[k].quiz);
    EXPECT_EQ(back[k].quiz_outcomes, data[k].quiz_outcomes);
  }
}

TEST(Baselines, BehaveAsSpecified) {
  const BernoulliPopulation pop{{0.0, 1.0, 0.8, 0.3}};
  const auto data = gen_quiz_dataset(kMkn, pop, 5, 2000, 7);
  BaselineOracle oracle(kMkn, pop, 11);
  const auto random = eval_prediction(baseline_correct(Baseline::Random, data, oracle, 2));
  EXPECT_NEAR(random.mean, 0.5, 0.04);
  EXPECT_NEAR(oracle.agent_rate(2), 0.8, 0.06);
  for (std::size_t k = 0; k < 50; ++k) {
    EXPECT_EQ(oracle.predict(Baseline::IgnoreTask, data[k], k), data[k].agent == 1 || data[k].agent == 2);
    EXPECT_EQ(oracle.predict(Baseline::IgnoreAgent, data[k], k), oracle.task_pos(data[k].test_task) > 0.5);
  }
  const double memo = oracle.task_pos(data[0].test_task);
  EXPECT_EQ(oracle.task_pos(data[0].test_task), memo);
  // OPT on deterministic agents is always right.
  const auto opt = baseline_correct(Baseline::Opt, data, oracle);
  for (std::size_t k = 0; k < data.size(); ++k)
    if (data[k].agent < 2) {
      EXPECT_TRUE(opt[k]);
    }
  EXPECT_EQ(to_string(Baseline::Opt), "OPT");
}

TEST(Selection, RankingAndArgmax) {
  const std::vector<double> sim{0.1, 0.9, 0.5, 0.9};
  EXPECT_EQ(rank_options(sim), (std::vector<std::size_t>{1, 3, 2, 0}));
  const std::vector<char> harder{1, 0, 1, 0};
  EXPECT_EQ(rank_options(sim, harder), (std::vector<std::size_t>{2, 0, 1, 3}));
  EXPECT_EQ(argmax_first(sim), 1u);
  EXPECT_EQ(argmax_first(sim, harder), 2u);
}

TEST(Selection, Levenshtein) {
  auto s = [](std::string_view w) { return std::vector<int>(w.begin(), w.end()); };
  EXPECT_EQ(levenshtein(s("kitten"), s("sitting")), 3u);
  EXPECT_EQ(levenshtein(s(""), s("abc")), 3u);
  EXPECT_EQ(levenshtein(s("flaw"), s("lawn")), 2u);
  EXPECT_EQ(levenshtein(s("same"), s("same")), 0u);
}

TEST(Selection, ActionSymbolSectors) {
  const EnvId pm{EnvKind::PointMass};
  EXPECT_EQ(action_symbol(pm, Action::continuous(1.0, 0.1)), 0);
  EXPECT_EQ(action_symbol(pm, Action::continuous(0.0, 1.0)), 2);
  EXPECT_EQ(action_symbol(pm, Action::continuous(-1.0, 0.0)), 4);
  EXPECT_EQ(action_symbol(pm, Action::continuous(0.5, -0.5)), 7);
  EXPECT_EQ(action_symbol(kMkn, Action::discrete(5)), 5);
}

TEST(Selection, DatasetTruthsAndOracleAgreement) {
  const ThresholdPopulation pop{5};
  SelectionConfig cfg;
  cfg.n_examples = 30;
  cfg.easy_pool = 50;
  cfg.similarity_reps = 2;
  cfg.difficulty_reps = 2;
  const SelectionDataset ds = gen_selection_dataset(kMkn, pop, cfg, 3);
  ASSERT_EQ(ds.examples.size(), 30u);
  ASSERT_EQ(ds.easy_refs.size(), kEasyRefs);
  for (const auto& ex : ds.examples) {
    ASSERT_EQ(ex.options.size(), kSelectionOptions);
    EXPECT_EQ(ex.truth_type1, argmax_first(ex.option_mi));
    EXPECT_LT(ex.option_pos[ex.truth_type2], ex.ref_pos);
  }
  // Deterministic agents: a fresh oracle reproduces the ground truth.
  const SelectionAccuracy acc = selection_accuracies(ds, oracle_method(pop, {}, cfg, 99));
  EXPECT_EQ(acc.type1_top1, 1.0);
  EXPECT_EQ(acc.type2_top1, 1.0);
  EXPECT_EQ(selection_accuracy(ds, oracle_method(pop, {}, cfg, 99), QueryType::Type2, 1), 1.0);
}

TEST(Selection, EmbeddingMethodInvariantToPositiveScaling) {
  const ThresholdPopulation pop{3};
  SelectionConfig cfg;
  cfg.n_examples = 20;
  cfg.easy_pool = 20;
  cfg.similarity_reps = 1;
  cfg.difficulty_reps = 1;
  const SelectionDataset ds = gen_selection_dataset(kMkn, pop, cfg, 4);
  auto f = [](const Task& t) { return std::vector<double>{t.state0[0], t.state0[1] - 0.3, 0.2 * t.state0[5]}; };
  auto g = [&](const Task& t) {
    auto v = f(t);
    for (double& x : v) x *= 7.5;
    return v;
  };
  const auto a = selection_accuracies(ds, embedding_method(f));
  const auto b = selection_accuracies(ds, embedding_method(g));
  EXPECT_EQ(a.type1_top1, b.type1_top1);
  EXPECT_EQ(a.type2_top3, b.type2_top3);
  for (std::size_t k = 0; k < ds.examples.size(); ++k)
    EXPECT_EQ(rank_options(embedding_method(f)(ds, k).similarity), rank_options(embedding_method(g)(ds, k).similarity));
}

TEST(Selection, RandomMethodNearChance) {
  const ThresholdPopulation pop{3};
  SelectionConfig cfg;
  cfg.n_examples = 400;
  cfg.easy_pool = 10;
  cfg.similarity_reps = 1;
  cfg.difficulty_reps = 1;
  const SelectionDataset ds = gen_selection_dataset(kMkn, pop, cfg, 5);
  const auto acc = selection_accuracies(ds, random_method(1));
  EXPECT_NEAR(acc.type1_top1, 0.1, 0.05);
  EXPECT_NEAR(acc.type1_top3, 0.3, 0.07);
}

TEST(Selection, EasyReferenceRule) {
  SelectionDataset ds;
  Task easy{kMkn, {}}, ref{kMkn, {}}, near{kMkn, {}}, far{kMkn, {}};
  easy.state0[0] = 0.95;
  ref.state0[0] = 0.6;
  near.state0[0] = 0.9;
  far.state0[0] = 0.1;
  ds.easy_refs = {easy};
  ds.examples.push_back({ref, {near, far}, 0, 1, 0.5, {0.9, 0.1}, {0.0, 0.0}});
  const SelectionScores s = similarity_method(state_similarity)(ds, 0);
  EXPECT_EQ(s.harder, (std::vector<char>{0, 1}));
  EXPECT_GT(s.similarity[0], s.similarity[1]);
  EXPECT_EQ(half_population(10, 1).size(), 5u);
  EXPECT_EQ(half_population(10, 1), half_population(10, 1));
}

TEST(PredModel, KlMatchesMonteCarlo) {
  const std::vector<double> mu{0.3, -1.2}, lv{-0.5, 0.4};
  Rng rng(6);
  double mc = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 2; ++d) {
      const double sd = std::exp(0.5 * lv[d]);
      const double z = mu[d] + sd * rng.normal();
      const double log_q = -0.5 * std::pow((z - mu[d]) / sd, 2) - std::log(sd);
      const double log_p = -0.5 * z * z;
      mc += (log_q - log_p) / n;
    }
  EXPECT_NEAR(gaussian_kl(mu, lv), mc, 0.01);
  EXPECT_EQ(gaussian_kl(std::vector<double>{0.0}, std::vector<double>{0.0}), 0.0);
}

TEST(PredModel, TransitionsStripTheContext) {
  Rng rng(7);
  const TransitionData d = collect_transitions(kMkn, 5, rng);
  ASSERT_EQ(d.task_features.size(), 5u);
  ASSERT_FALSE(d.transitions.empty());
  for (const auto& t : d.transitions) {
    EXPECT_EQ(t.input.size(), context_free_dim(kMkn) + multikeynav::kNumActions);
    EXPECT_EQ(t.next.size(), context_free_dim(kMkn));
    EXPECT_TRUE(t.reward == 0.0 || t.reward == 1.0);
  }
}

TEST(PredModel, LossGradientMatchesFiniteDifferences) {
  for (EnvId env : {kMkn, EnvId{EnvKind::PointMass}}) {
    Rng rng(8);
    const TransitionData d = collect_transitions(env, 4, rng);
    const PredModel m = make_predmodel(env, 0, rng);
    const std::vector<std::size_t> batch{0, 1, 2, d.transitions.size() - 1};
    std::vector<double> noise(batch.size() * m.latent);
    for (double& v : noise) v = rng.normal();
    PredModelConfig cfg;
    cfg.beta_kl = 0.3;
    PredModelGrads g{MlpGradients(m.encoder), MlpGradients(m.decoder)};
    PredModelObjective(m).evaluate(d, batch, noise, cfg, &g);
    auto theta = flatten_parameters(m.encoder);
    const std::size_t ne = theta.size();
    const auto dec = flatten_parameters(m.decoder);
    theta.insert(theta.end(), dec.begin(), dec.end());
    auto grad = flatten_gradients(g.encoder);
    const auto gd = flatten_gradients(g.decoder);
    grad.insert(grad.end(), gd.begin(), gd.end());
    auto loss = [&](const std::vector<double>& x) {
      PredModel q = m;
      assign_parameters(q.encoder, std::span(x).subspan(0, ne));
      assign_parameters(q.decoder, std::span(x).subspan(ne));
      return PredModelObjective(q).evaluate(d, batch, noise, cfg);
    };
    EXPECT_LT(gradcheck::max_gradient_error(theta, grad, loss, 100, rng), 1e-4) << to_string(env);
  }
}

TEST(PredModel, TrainingReducesLossAndRoundTrips) {
  Rng rng(9);
  const TransitionData d = collect_transitions(kMkn, 30, rng);
  PredModelConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 64;
  const auto res = train_predmodel(d, cfg, rng);
  EXPECT_LT(res.epoch_loss.back(), res.epoch_loss.front());
  std::stringstream ss;
  write_predmodel(ss, res.model);
  const PredModel back = read_predmodel(ss);
  Task t = sample_task(kMkn, rng);
  EXPECT_EQ(predmodel_embed(back, t), predmodel_embed(res.model, t));
  EXPECT_EQ(predmodel_embed(back, t).size(), 6u);
}
