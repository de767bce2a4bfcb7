#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "fedil/client.hpp"
#include "fedil/errors.hpp"
#include "fedil/rng.hpp"
#include "json.hpp"
#include "support/oracles.hpp"

namespace fedil {
namespace {

Observation obs(ExampleId id, double conf, std::size_t weak, std::size_t server) {
  return {id, conf, weak, server, false};
}

UnlabeledShard shard_of(std::size_t client, std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  UnlabeledShard s{client, {}};
  for (std::size_t i = 0; i < n; ++i) s.examples.push_back({static_cast<ExampleId>(i * 3 + 1), testing::random_vector(dim, rng)});
  return s;
}

// ---- credibility automaton -------------------------------------------------

TEST(CredibilityTest, PromotesOnSeventhConsecutiveHit) {
  CredibilityTracker tracker;
  PseudoLabelSet set;
  const CredibilityRule rule{0.95, 7, 0};
  const std::vector<Observation> o{obs(1, 0.99, 2, 2)};
  for (int r = 1; r <= 6; ++r) EXPECT_TRUE(update_credibility(tracker, o, rule, set).empty()) << r;
  const auto p = update_credibility(tracker, o, rule, set);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].id, 1);
  EXPECT_EQ(p[0].label, 2u);
}

TEST(CredibilityTest, FailureAfterSixHitsRequiresSevenFreshHits) {
  CredibilityTracker tracker;
  PseudoLabelSet set;
  const CredibilityRule rule{0.95, 7, 0};
  const std::vector<Observation> hit{obs(1, 0.99, 0, 0)};
  const std::vector<Observation> miss{obs(1, 0.50, 0, 0)};
  for (int r = 0; r < 6; ++r) update_credibility(tracker, hit, rule, set);
  update_credibility(tracker, miss, rule, set);
  EXPECT_EQ(tracker.find(1)->consecutive_hits, 0u);
  EXPECT_FALSE(tracker.find(1)->candidate_label.has_value());
  for (int r = 0; r < 6; ++r) EXPECT_TRUE(update_credibility(tracker, hit, rule, set).empty());
  EXPECT_EQ(update_credibility(tracker, hit, rule, set).size(), 1u);
}

TEST(CredibilityTest, ArgmaxFlipResetsTheRun) {
  CredibilityTracker tracker;
  PseudoLabelSet set;
  const CredibilityRule rule{0.9, 3, 0};
  update_credibility(tracker, std::vector<Observation>{obs(5, 0.95, 1, 1)}, rule, set);
  update_credibility(tracker, std::vector<Observation>{obs(5, 0.95, 1, 1)}, rule, set);
  EXPECT_EQ(tracker.find(5)->consecutive_hits, 2u);
  EXPECT_TRUE(update_credibility(tracker, std::vector<Observation>{obs(5, 0.95, 2, 2)}, rule, set).empty());
  EXPECT_EQ(tracker.find(5)->consecutive_hits, 0u);
  EXPECT_EQ(tracker.find(5)->agreement_count, 3u);
}

TEST(CredibilityTest, ConfidentDisagreementNeverHits) {
  CredibilityTracker tracker;
  PseudoLabelSet set;
  const CredibilityRule rule{0.9, 2, 0};
  for (int r = 0; r < 5; ++r) {
    EXPECT_TRUE(update_credibility(tracker, std::vector<Observation>{obs(1, 0.99, 0, 1)}, rule, set).empty());
  }
  EXPECT_EQ(tracker.find(1)->agreement_count, 0u);
}

TEST(CredibilityTest, SeparateAgreementThresholdDelaysPromotion) {
  CredibilityTracker tracker;
  PseudoLabelSet set;
  const CredibilityRule rule{0.9, 2, 4};
  // Two agreeing but unconfident rounds bank agreement without hits.
  update_credibility(tracker, std::vector<Observation>{obs(1, 0.1, 0, 0)}, rule, set);
  update_credibility(tracker, std::vector<Observation>{obs(1, 0.1, 0, 0)}, rule, set);
  EXPECT_TRUE(update_credibility(tracker, std::vector<Observation>{obs(1, 0.99, 0, 0)}, rule, set).empty());
  EXPECT_EQ(update_credibility(tracker, std::vector<Observation>{obs(1, 0.99, 0, 0)}, rule, set).size(), 1u);

  CredibilityTracker fresh;
  const CredibilityRule strict{0.9, 2, 4};
  for (int r = 0; r < 3; ++r) {
    EXPECT_TRUE(update_credibility(fresh, std::vector<Observation>{obs(1, 0.99, 0, 0)}, strict, set).empty()) << r;
  }
  EXPECT_EQ(update_credibility(fresh, std::vector<Observation>{obs(1, 0.99, 0, 0)}, strict, set).size(), 1u);
}

TEST(CredibilityTest, ZeroThresholdDisablesPromotion) {
  CredibilityTracker tracker;
  PseudoLabelSet set;
  const CredibilityRule rule{0.5, 0, 0};
  for (int r = 0; r < 50; ++r) {
    EXPECT_TRUE(update_credibility(tracker, std::vector<Observation>{obs(1, 0.99, 0, 0)}, rule, set).empty());
  }
}

TEST(CredibilityTest, PromotedExamplesAreIgnored) {
  CredibilityTracker tracker;
  PseudoLabelSet set;
  set.insert(1, 0, 3);
  const CredibilityRule rule{0.5, 1, 0};
  EXPECT_TRUE(update_credibility(tracker, std::vector<Observation>{obs(1, 0.99, 0, 0)}, rule, set).empty());
  EXPECT_EQ(tracker.find(1), nullptr);
}

// Reference automaton written directly from the rule, recomputing the state
// from the whole history at every step.
std::optional<std::size_t> oracle_first_promotion(const std::vector<Observation>& seq, std::size_t T,
                                                  std::size_t A) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::size_t agree = 0, hits = 0;
    std::optional<std::size_t> cand;
    for (std::size_t j = 0; j <= i; ++j) {
      const Observation& o = seq[j];
      agree += o.weak_label == o.server_label;
      const bool good = o.confidence >= 0.9 && o.weak_label == o.server_label &&
                        (!cand.has_value() || cand == o.weak_label);
      hits = good ? hits + 1 : 0;
      cand = good ? std::optional<std::size_t>(o.weak_label) : std::nullopt;
    }
    if (hits >= T && agree >= A) return i;
  }
  return std::nullopt;
}

TEST(CredibilityTest, MatchesReferenceOnEveryShortHistory) {
  // All 8^6 sequences over {low, high confidence} x {weak 0,1} x {server 0,1}.
  const std::size_t len = 6;
  std::size_t total = 0, promoted = 0;
  for (std::size_t A : {0u, 4u}) {
    for (std::size_t code = 0; code < (1u << (3 * len)); ++code) {
      std::vector<Observation> seq;
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t s = (code >> (3 * j)) & 7u;
        seq.push_back(obs(1, (s & 1u) ? 0.95 : 0.5, (s >> 1) & 1u, (s >> 2) & 1u));
      }
      const CredibilityRule rule{0.9, 3, A};
      const auto expected = oracle_first_promotion(seq, 3, rule.agreement_threshold());
      CredibilityTracker tracker;
      PseudoLabelSet set;
      std::optional<std::size_t> got;
      std::size_t got_label = 0;
      for (std::size_t j = 0; j < len && !got; ++j) {
        const auto p = update_credibility(tracker, std::span<const Observation>(&seq[j], 1), rule, set);
        if (!p.empty()) {
          got = j;
          got_label = p[0].label;
        }
      }
      ASSERT_EQ(got, expected) << "code " << code << " A " << A;
      if (got) {
        EXPECT_EQ(got_label, seq[*got].weak_label);
        ++promoted;
      }
      ++total;
    }
  }
  EXPECT_GT(promoted, 0u);
  EXPECT_LT(promoted, total);
}

// ---- pseudo-label set -------------------------------------------------------

TEST(PseudoSetTest, PromoteAppendsAndFreezes) {
  const UnlabeledShard shard = shard_of(0, 5, 3, 1);
  PseudoLabelSet set;
  set.insert(shard.examples[0].id, 1, 2);
  const std::vector<Promotion> p{{shard.examples[3].id, 0}};
  const PseudoLabelSet next = promote(set, p, shard, 5);
  EXPECT_EQ(next.size(), 2u);
  EXPECT_EQ(next.label(shard.examples[0].id), 1u);
  EXPECT_EQ(next.entries().at(shard.examples[0].id).round, 2u);
  EXPECT_EQ(next.label(shard.examples[3].id), 0u);
  EXPECT_EQ(promote(set, {}, shard, 5).size(), 1u);
  EXPECT_THROW(promote(next, p, shard, 6), InvariantError);
  const std::vector<Promotion> stray{{999, 0}};
  EXPECT_THROW(promote(set, stray, shard, 6), InputError);
}

// ---- loss terms -------------------------------------------------------------

// Linear 2-input, 2-class model whose logit gap equals the first feature.
const ModelArch kLinear2{2, {}, 2, Activation::kTanh};
const ParamVector kGapModel(std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0, 0.0});

AugmentedView view(ExampleId id, std::vector<double> v, ViewKind k) { return {id, std::move(v), k, 0}; }

TEST(UnsupLossTest, OnlyConfidentExampleIsGated) {
  const double gap = std::log(0.97 / 0.03);
  const std::vector<ViewPair> batch{
      {view(1, {gap, 0.0}, ViewKind::kWeak), view(1, {1.0, 5.0}, ViewKind::kStrong)},
      {view(2, {1.0, 0.0}, ViewKind::kWeak), view(2, {-3.0, 0.0}, ViewKind::kStrong)},
  };
  const UnsupLosses l = compute_unsup_losses(kGapModel, kGapModel, kLinear2, batch, 0.95);
  ASSERT_EQ(l.diagnostics.size(), 2u);
  EXPECT_NEAR(l.diagnostics[0].confidence, 0.97, 1e-12);
  EXPECT_TRUE(l.diagnostics[0].gate);
  EXPECT_FALSE(l.diagnostics[1].gate);
  EXPECT_EQ(l.gated, 1u);
  // Only example 1 contributes: -log sigmoid(1).
  EXPECT_NEAR(l.xi_a, std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_EQ(l.xi_b, 0.0);
}

TEST(UnsupLossTest, NothingGatedGivesZeroCeButPositiveKl) {
  std::mt19937_64 rng(3);
  const ModelArch arch{4, {5}, 3, Activation::kTanh};
  const ParamVector client(std::vector<double>(arch.param_count(), 0.0));  // uniform output
  const ParamVector server(testing::random_vector(arch.param_count(), rng));
  std::vector<ViewPair> batch;
  for (int i = 0; i < 6; ++i) {
    batch.push_back({view(i, testing::random_vector(4, rng), ViewKind::kWeak),
                     view(i, testing::random_vector(4, rng), ViewKind::kStrong)});
  }
  const UnsupLosses l = compute_unsup_losses(client, server, arch, batch, 0.95);
  EXPECT_EQ(l.gated, 0u);
  EXPECT_EQ(l.xi_a, 0.0);
  EXPECT_GT(l.xi_b, 0.0);
  // Oracle: mean KL(server || uniform) with the naive forward pass.
  double kl = 0.0;
  for (const auto& pr : batch) {
    const auto q = testing::naive_forward(server.values, arch, pr.weak.view);
    for (double p : q) kl += p * std::log(p * 3.0);
  }
  EXPECT_NEAR(l.xi_b, kl / 6.0, 1e-12);
}

TEST(UnsupLossTest, IdenticalModelsHaveZeroConsistencyLoss) {
  std::mt19937_64 rng(4);
  const ModelArch arch{4, {5}, 3, Activation::kTanh};
  const ParamVector theta(testing::random_vector(arch.param_count(), rng));
  std::vector<ViewPair> batch;
  for (int i = 0; i < 4; ++i) {
    batch.push_back({view(i, testing::random_vector(4, rng), ViewKind::kWeak),
                     view(i, testing::random_vector(4, rng), ViewKind::kStrong)});
  }
  EXPECT_EQ(compute_unsup_losses(theta, theta, arch, batch, 0.5).xi_b, 0.0);
}

TEST(PseudoLossTest, HandComputedValues) {
  // One input, four classes, logits (ln 3, 0, 0, 0) * x.
  const ModelArch arch{1, {}, 4, Activation::kTanh};
  const ParamVector theta(std::vector<double>{std::log(3.0), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  const UnlabeledShard shard{0, {{10, {1.0}}, {11, {0.0}}}};
  PseudoLabelSet set;
  EXPECT_EQ(compute_pseudo_loss(theta, arch, shard, set), 0.0);
  set.insert(10, 0, 1);  // p = 0.5
  set.insert(11, 2, 1);  // p = 0.25
  EXPECT_NEAR(compute_pseudo_loss(theta, arch, shard, set), (std::log(2.0) + std::log(4.0)) / 2.0, 1e-12);

  const ParamVector sure(std::vector<double>{200.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  PseudoLabelSet certain;
  certain.insert(10, 0, 1);
  EXPECT_EQ(compute_pseudo_loss(sure, arch, shard, certain), 0.0);
}

// ---- client round -----------------------------------------------------------

struct RoundFixture : ::testing::Test {
  ModelArch arch{6, {8}, 3, Activation::kTanh};
  ParamVector global, server;
  ClientHyper hyper;

  void SetUp() override {
    std::mt19937_64 rng(11);
    global = ParamVector(testing::random_vector(arch.param_count(), rng, 0.5));
    server = ParamVector(testing::random_vector(arch.param_count(), rng, 0.5));
    hyper.local_epochs = 2;
    hyper.batch_size = 8;
    hyper.lr = 0.1;
    hyper.augment = {0.1, 0.5, 0.2, 0, 0};
  }
  ClientState state(std::uint64_t seed = 1) const { return ClientState(shard_of(2, 30, 6, 5), seed); }
};

TEST_F(RoundFixture, ZeroEpochsReturnsBroadcastWeights) {
  ClientState s = state();
  hyper.local_epochs = 0;
  const ClientUpdate u = client_round(s, global, server, arch, hyper, 1);
  EXPECT_EQ(u.params.values, global.values);
  EXPECT_EQ(u.steps, 0u);
}

TEST_F(RoundFixture, ZeroLearningRateStillAdvancesCounters) {
  ClientState s = state();
  hyper.lr = 0.0;
  hyper.rule = {0.0, 7, 0};
  const ClientUpdate u = client_round(s, global, server, arch, hyper, 1);
  EXPECT_EQ(u.params.values, global.values);
  EXPECT_EQ(u.observations.size(), 30u);
  EXPECT_EQ(s.tracker.entries().size(), 30u);
  EXPECT_EQ(s.participations, 1u);
  for (const Observation& o : u.observations) {
    const CredibilityEntry* e = s.tracker.find(o.id);
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->agreement_count, o.agrees() ? 1u : 0u);
    EXPECT_EQ(e->consecutive_hits, o.agrees() ? 1u : 0u);
  }
}

TEST_F(RoundFixture, DeterministicForSameState) {
  hyper.local_epochs = 5;
  ClientState a = state(), b = state();
  const ParamVector g0 = global, s0 = server;
  const ClientUpdate ua = client_round(a, global, server, arch, hyper, 4);
  const ClientUpdate ub = client_round(b, global, server, arch, hyper, 4);
  EXPECT_EQ(ua.params.values, ub.params.values);
  EXPECT_NE(ua.params.values, global.values);
  EXPECT_EQ(global.values, g0.values);
  EXPECT_EQ(server.values, s0.values);
  ClientState c = state();
  EXPECT_NE(client_round(c, global, server, arch, hyper, 5).params.values, ua.params.values);
}

TEST_F(RoundFixture, SingleStepMatchesHandBuiltObjective) {
  // One epoch, one batch covering the whole shard: the update must equal one
  // SGD step on the naive objective's finite-difference gradient.
  hyper.local_epochs = 1;
  hyper.batch_size = 64;
  hyper.credibility = false;
  hyper.rule.tau = 0.4;
  ClientState s = state();
  const ClientUpdate u = client_round(s, global, server, arch, hyper, 2);
  ASSERT_EQ(u.steps, 1u);

  const std::uint64_t ws = derive_seed(s.seed, {tag(Stream::kAugmentWeak), 2, 0});
  const std::uint64_t ss = derive_seed(s.seed, {tag(Stream::kAugmentStrong), 2, 0});
  std::vector<std::vector<double>> weak, strong, ref;
  std::vector<std::size_t> gated_label;
  std::vector<std::size_t> gated_idx;
  for (const auto& x : s.shard.examples) {
    weak.push_back(weak_augment(x, hyper.augment.weak(), ws).view);
    strong.push_back(strong_augment(x, hyper.augment.strong(), ss).view);
    ref.push_back(testing::naive_forward(server.values, arch, weak.back()));
  }
  std::vector<LossTerm> terms;
  for (std::size_t k = 0; k < weak.size(); ++k) {
    const auto q = testing::naive_forward(global.values, arch, weak[k]);
    const auto top = std::max_element(q.begin(), q.end());
    if (*top >= hyper.rule.tau) gated_idx.push_back(k), gated_label.push_back(top - q.begin());
  }
  ASSERT_GT(gated_idx.size(), 0u);
  for (std::size_t g = 0; g < gated_idx.size(); ++g) {
    terms.push_back(LossTerm::ce(strong[gated_idx[g]], gated_label[g], 1.0 / gated_idx.size()));
  }
  for (std::size_t k = 0; k < weak.size(); ++k) terms.push_back(LossTerm::kl(weak[k], ref[k], 1.0 / weak.size()));
  const auto grad = testing::finite_difference_grad(global.values, arch, terms);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    EXPECT_NEAR(u.params.values[i], global.values[i] - hyper.lr * grad[i], 1e-7) << i;
  }
}

TEST_F(RoundFixture, PromotedExampleLeavesUnlabeledPool) {
  UnlabeledShard one{0, {{7, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}}}};
  hyper.local_epochs = 3;
  {
    ClientState s(one, 1);
    s.pseudo_set.insert(7, 1, 0);
    hyper.weights.pseudo_ce = 0.0;
    const ClientUpdate u = client_round(s, global, server, arch, hyper, 1);
    EXPECT_TRUE(u.observations.empty());
    EXPECT_EQ(u.steps, 0u);
    EXPECT_EQ(u.params.values, global.values);
  }
  {
    ClientState s(one, 1);
    s.pseudo_set.insert(7, 1, 0);
    hyper.weights.pseudo_ce = 1.0;
    const ClientUpdate u = client_round(s, global, server, arch, hyper, 1);
    EXPECT_EQ(u.steps, 3u);
    // Only the pseudo-label term drives the update.
    const ProbDist before = forward(global, arch, one.examples[0].features);
    const ProbDist after = forward(u.params, arch, one.examples[0].features);
    EXPECT_GT(after.probs[1], before.probs[1]);
  }
}

TEST_F(RoundFixture, PseudoSetOnlyGrowsAndLabelsStayFrozen) {
  hyper.rule = {0.0, 2, 0};
  hyper.lr = 0.05;
  ClientState s = state();
  std::map<ExampleId, PseudoLabel> seen;
  ParamVector g = global;
  std::size_t total_promoted = 0;
  for (std::size_t r = 1; r <= 8; ++r) {
    const ClientUpdate u = client_round(s, g, g, arch, hyper, r);
    for (const auto& [id, p] : seen) {
      ASSERT_TRUE(s.pseudo_set.contains(id));
      EXPECT_EQ(s.pseudo_set.entries().at(id).label, p.label);
      EXPECT_EQ(s.pseudo_set.entries().at(id).round, p.round);
    }
    for (const Promotion& p : u.promoted) {
      const CredibilityEntry* e = s.tracker.find(p.id);
      ASSERT_NE(e, nullptr);
      EXPECT_GE(e->consecutive_hits, hyper.rule.promote_t);
      EXPECT_GE(e->agreement_count, hyper.rule.agreement_threshold());
      EXPECT_EQ(e->candidate_label, p.label);
    }
    total_promoted += u.promoted.size();
    seen = s.pseudo_set.entries();
    g = u.params;
  }
  EXPECT_EQ(s.pseudo_set.size(), total_promoted);
  EXPECT_GT(total_promoted, 0u);
}

TEST_F(RoundFixture, DivergenceIsReportedWithClientAndRound) {
  ClientState s = state();
  hyper.lr = std::numeric_limits<double>::infinity();
  try {
    client_round(s, global, server, arch, hyper, 9);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("client 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("round 9"), std::string::npos) << msg;
  }
}

TEST_F(RoundFixture, StateJsonListsCountersAndPseudoSet) {
  ClientState s = state();
  hyper.rule = {0.0, 1, 0};
  client_round(s, global, global, arch, hyper, 1);
  const auto j = nlohmann::json::parse(client_state_json(s));
  EXPECT_EQ(j["client_id"], 2);
  EXPECT_EQ(j["participations"], 1);
  EXPECT_EQ(j["pseudo_set"].size(), s.pseudo_set.size());
  EXPECT_EQ(j["tracker"].size(), s.tracker.entries().size());
}

}  // namespace
}  // namespace fedil
