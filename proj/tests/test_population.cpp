#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "taskemb/population/population.hpp"

using namespace taskemb;

namespace {

const EnvId kMkn{EnvKind::MultiKeyNav};
const EnvId kCpv{EnvKind::CartPoleVar};
const EnvId kPm{EnvKind::PointMass};

SnapshotRule small_rule(EnvId env) {
  return SnapshotRule{snapshot_tasks(env, 20, 3), 2, 0.01, 17};
}

BcConfig short_bc() {
  BcConfig c;
  c.max_epochs = 6;
  c.patience = 6;
  c.expert_samples_per_epoch = 600;
  return c;
}

}  // namespace

TEST(Policy, MaskedActionsHaveZeroProbabilityAndAreNeverSampled) {
  Rng rng(1);
  const ActionMask mask = (1u << multikeynav::kPickB) | (1u << multikeynav::kFinish);
  Policy p = make_policy(kMkn, rng, mask);
  for (auto& l : p.net.layers)
    for (auto& b : l.biases) b = 3.0;  // large logits everywhere
  PolicyActor actor(p);
  for (int i = 0; i < 20000; ++i) {
    const Task t = sample_task(kMkn, rng);
    const auto probs = actor.probabilities(t.state0);
    ASSERT_EQ(probs[multikeynav::kPickB], 0.0);
    ASSERT_EQ(probs[multikeynav::kFinish], 0.0);
    const Action a = actor.act(t.state0, rng);
    ASSERT_FALSE(is_masked(mask, a.id));
  }
}

TEST(Policy, MaskingIgnoredForContinuousEnvironments) {
  Rng rng(2);
  EXPECT_EQ(make_policy(kPm, rng, 0b11).mask, 0u);
}

TEST(Policy, ScoreFunctionHasZeroMeanUnderThePolicy) {
  Rng rng(3);
  const Policy p = make_policy(kMkn, rng, 1u << multikeynav::kPickC);
  PolicyActor actor(p);
  const Task t = sample_task(kMkn, rng);
  const auto probs = actor.probabilities(t.state0);
  const auto f = featurize(kMkn, t.state0);
  MlpGradients g(p.net);
  PolicyGradScratch scratch;
  for (int a = 0; a < multikeynav::kNumActions; ++a)
    if (probs[static_cast<std::size_t>(a)] > 0.0)
      log_prob_backward(p, f, Action::discrete(a), {}, probs[static_cast<std::size_t>(a)], g, scratch);
  for (double v : flatten_gradients(g)) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Policy, LogProbGradientMatchesFiniteDifferences) {
  for (EnvId env : {kMkn, kCpv, kPm}) {
    Rng rng(4);
    Policy p = make_policy(env, rng, env == kMkn ? 1u << multikeynav::kPickA : 0u);
    p.log_std = -0.5;
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
    const double err =
        gradcheck::max_gradient_error(flatten_parameters(p.net), flatten_gradients(g), loss, 100, rng);
    EXPECT_LT(err, 1e-4) << to_string(env);
  }
}

TEST(Policy, LogProbOfDiscreteActionsNormalizes) {
  Rng rng(5);
  const Policy p = make_policy(kCpv, rng);
  const Task t = sample_task(kCpv, rng);
  const auto f = featurize(kCpv, t.state0);
  EXPECT_NEAR(std::exp(log_prob(p, f, Action::discrete(0))) + std::exp(log_prob(p, f, Action::discrete(1))), 1.0,
              1e-12);
}

TEST(Training, FirstSnapshotIsTheUntrainedPolicy) {
  Rng a(9), b(9);
  const auto snaps = train_bc(kMkn, 0, {}, small_rule(kMkn), short_bc(), a);
  ASSERT_FALSE(snaps.empty());
  const Policy fresh = make_policy(kMkn, b, 0);
  EXPECT_EQ(snaps[0].policy, fresh);
  EXPECT_EQ(snaps[0].provenance.snapshot_index, 0u);
}

TEST(Training, SnapshotScoresIncreaseByAtLeastDelta) {
  Rng rng(10);
  const SnapshotRule rule = small_rule(kMkn);
  const auto snaps = train_bc(kMkn, 0, {}, rule, short_bc(), rng);
  ASSERT_GE(snaps.size(), 2u);
  for (std::size_t i = 1; i < snaps.size(); ++i) {
    EXPECT_GE(snaps[i].provenance.validation_score, snaps[i - 1].provenance.validation_score + rule.delta - 1e-12);
    EXPECT_EQ(snaps[i].provenance.snapshot_index, i);
  }
  for (const auto& s : snaps)
    EXPECT_DOUBLE_EQ(s.provenance.validation_score,
                     evaluate_policy(s.policy, rule.tasks, rule.rollouts_per_task, rule.eval_seed));
}

TEST(Training, MaskIsCarriedIntoEverySnapshot) {
  Rng rng(11);
  const ActionMask mask = 1u << multikeynav::kPickD;
  for (const auto& s : train_bc(kMkn, mask, {}, small_rule(kMkn), short_bc(), rng)) {
    EXPECT_EQ(s.policy.mask, mask);
    EXPECT_EQ(s.provenance.mask, mask);
  }
}

TEST(Training, FullyMaskedExpertIsReported) {
  Rng rng(12);
  BcConfig c = short_bc();
  c.expert_samples_per_epoch = 10;
  const ActionMask everything = (1u << multikeynav::kNumActions) - 1;
  EXPECT_THROW(train_bc(kMkn, everything, {}, small_rule(kMkn), c, rng), Error);
}

TEST(Training, ReinforceIgnoresEpisodesAtTheBaseline) {
  Rng rng(13);
  const Policy p = make_policy(kCpv, rng);
  PgBatch batch = collect_pg_batch(p, {}, 4, ReturnMode::Binary, rng);
  for (double& r : batch.returns) r = 0.0;
  for (double v : flatten_gradients(reinforce_gradient(p, batch, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(Training, ReinforceMatchesScoreFunctionSum) {
  Rng rng(14);
  const Policy p = make_policy(kCpv, rng);
  PgBatch batch = collect_pg_batch(p, {}, 3, ReturnMode::SurvivalFraction, rng);
  const double baseline = 0.25;
  const auto g = flatten_gradients(reinforce_gradient(p, batch, baseline));
  const auto theta = flatten_parameters(p.net);
  auto surrogate = [&](const std::vector<double>& x) {
    Policy q = p;
    assign_parameters(q.net, x);
    double s = 0.0;
    for (std::size_t e = 0; e < batch.episodes.size(); ++e)
      for (const auto& st : batch.episodes[e])
        s -= (batch.returns[e] - baseline) *
             log_prob(q, std::span<const double>(st.features.data(), feature_dim(kCpv)), st.action, st.raw);
    return s / static_cast<double>(batch.episodes.size());
  };
  EXPECT_LT(gradcheck::max_gradient_error(theta, g, surrogate, 50, rng), 1e-4);
}

TEST(Training, SurvivalFractionReturnsAreInUnitInterval) {
  Rng rng(15);
  const Policy p = make_policy(kCpv, rng);
  const PgBatch batch = collect_pg_batch(p, {}, 8, ReturnMode::SurvivalFraction, rng);
  for (std::size_t e = 0; e < batch.returns.size(); ++e) {
    EXPECT_GE(batch.returns[e], 0.0);
    EXPECT_LE(batch.returns[e], 1.0);
    if (batch.returns[e] < 1.0) {
      EXPECT_DOUBLE_EQ(batch.returns[e], static_cast<double>(batch.episodes[e].size()) / horizon(kCpv));
    }
  }
}

TEST(Recipe, DefaultMultiKeyNavHasOneSubpopPerKeyMask) {
  const Recipe r = make_recipe(kMkn, "default", 40);
  ASSERT_EQ(r.subpops.size(), 6u);
  EXPECT_EQ(r.subpops[0].mask, 0u);
  EXPECT_EQ(r.subpops[1].mask, 1u << multikeynav::kPickA);
  EXPECT_EQ(r.subpops[5].mask, 0b0111100u);
  EXPECT_EQ(r.target_size, 40u);
}

TEST(Recipe, NamedAndListedRecipes) {
  EXPECT_EQ(make_recipe(kCpv, "default", 0).subpops.size(), 5u);
  EXPECT_EQ(make_recipe(kPm, "default", 0).subpops.size(), 3u);
  for (const auto& s : make_recipe(kCpv, "pg", 0).subpops) EXPECT_EQ(s.method, TrainingMethod::PolicyGradient);
  const Recipe d = make_recipe(kMkn, "door-bias", 0);
  ASSERT_EQ(d.subpops.size(), 5u);
  EXPECT_EQ(to_string(d.subpops[3].bias), "door3");
  EXPECT_THROW(make_recipe(kCpv, "door-bias", 0), ParseError);
  const Recipe custom = make_recipe(kMkn, "bc/mask=2,3; pg/bias=door2", 0);
  ASSERT_EQ(custom.subpops.size(), 2u);
  EXPECT_EQ(custom.subpops[0].mask, 0b1100u);
  EXPECT_EQ(custom.subpops[1].method, TrainingMethod::PolicyGradient);
  EXPECT_THROW(make_recipe(kCpv, "bc/bias=door2", 0), ParseError);
  EXPECT_THROW(make_recipe(kMkn, "bc/colour=red", 0), ParseError);
}

TEST(Recipe, SubpopSpecRoundTrips) {
  const SubpopSpec s{TrainingMethod::PolicyGradient, 0b101000, parse_bias("force-type1")};
  EXPECT_EQ(parse_subpop(to_string(s)), s);
  EXPECT_EQ(mask_to_string(0), "none");
  EXPECT_EQ(parse_mask("none"), 0u);
  EXPECT_THROW(parse_mask("40"), ParseError);
}

TEST(Thinning, KeepsEndpointsAndSpacing) {
  EXPECT_EQ(thin_indices(10, 3), (std::vector<std::size_t>{0, 5, 9}));  // 4.5 rounds away from zero
  EXPECT_EQ(thin_indices(4, 10), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(thin_indices(7, 1), (std::vector<std::size_t>{0}));
  EXPECT_EQ(thin_indices(5, 2), (std::vector<std::size_t>{0, 4}));
}

TEST(Thinning, QuotaFillsSmallGroupsFirst) {
  const std::vector<std::size_t> counts{2, 10, 10};
  EXPECT_EQ(allocate_quota(counts, 12), (std::vector<std::size_t>{2, 5, 5}));
  EXPECT_EQ(allocate_quota(counts, 100), counts);
  EXPECT_EQ(allocate_quota(counts, 4), (std::vector<std::size_t>{2, 1, 1}));
}

TEST(Population, BuildIsDeterministicAndThreadInvariant) {
  PopulationConfig cfg;
  cfg.bc = short_bc();
  cfg.bc.max_epochs = 3;
  cfg.snap_rollouts = 2;
  const Recipe r = make_recipe(kMkn, "bc; bc/mask=2", 5);
  cfg.threads = 1;
  const Population a = build_population(kMkn, r, cfg, 21);
  cfg.threads = 3;
  const Population b = build_population(kMkn, r, cfg, 21);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_LE(a.size(), 5u);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a.agents[k].policy, b.agents[k].policy);
  EXPECT_EQ(a.agents.back().provenance.subpopulation, 1u);
}

TEST(Population, SaveLoadRoundTrip) {
  PopulationConfig cfg;
  cfg.bc = short_bc();
  cfg.bc.max_epochs = 2;
  cfg.snap_tasks = 10;
  cfg.snap_rollouts = 1;
  const Population pop = build_population(kPm, make_recipe(kPm, "bc/bias=gate-left", 0), cfg, 5);
  const auto dir = (std::filesystem::temp_directory_path() / "taskemb_pop_roundtrip").string();
  std::filesystem::remove_all(dir);
  save_population(pop, dir, "bc/bias=gate-left", 5);
  const Population back = load_population(dir);
  ASSERT_EQ(back.size(), pop.size());
  EXPECT_EQ(back.env, pop.env);
  for (std::size_t k = 0; k < pop.size(); ++k) {
    EXPECT_EQ(back.agents[k].policy, pop.agents[k].policy);
    EXPECT_EQ(back.agents[k].provenance.bias, pop.agents[k].provenance.bias);
    EXPECT_EQ(back.agents[k].provenance.validation_score, pop.agents[k].provenance.validation_score);
  }
  write_file(dir + "/agent_0.txt", "1\n2 2 relu\n0 0 0 0\n0 0\n");
  EXPECT_THROW(load_population(dir), ParseError);
  std::filesystem::remove_all(dir);
}

namespace {
/// Agent k succeeds with probability rates[k], independently of the task.
struct BernoulliPopulation {
  std::vector<double> rates;
  std::size_t size() const { return rates.size(); }
  bool success(std::size_t k, const Task&, Rng& rng) const { return rng.bernoulli(rates[k]); }
};
}  // namespace

TEST(Population, EstimatePosAveragesAgents) {
  const BernoulliPopulation pop{{0.0, 1.0, 0.5, 0.5}};
  Rng rng(8);
  const Task t = sample_task(kMkn, rng);
  EXPECT_NEAR(estimate_pos(t, pop, 5000, rng), 0.5, 0.01);
  const BernoulliPopulation sure{{1.0, 1.0}};
  EXPECT_EQ(estimate_pos(t, sure, 3, rng), 1.0);
  EXPECT_THROW(estimate_pos(t, sure, 0, rng), Error);
}
