#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedil/errors.hpp"
#include "fedil/model.hpp"
#include "support/oracles.hpp"

namespace fedil {
namespace {

ModelArch small_arch(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes,
                     Activation act = Activation::kTanh) {
  return ModelArch{in, std::move(hidden), classes, act};
}

TEST(ModelArchTest, ParamCountFollowsLayout) {
  EXPECT_EQ(small_arch(20, {32}, 3).param_count(), 20u * 32 + 32 + 32 * 3 + 3);
  EXPECT_EQ(small_arch(4, {}, 2).param_count(), 4u * 2 + 2);
  EXPECT_EQ(small_arch(784, {128}, 10).param_count(), 101770u);
}

TEST(ModelArchTest, RejectsDegenerateShapes) {
  EXPECT_THROW(small_arch(4, {}, 1).validate(), ConfigError);
  EXPECT_THROW(small_arch(0, {}, 2).validate(), ConfigError);
  EXPECT_THROW(small_arch(4, {0}, 2).validate(), ConfigError);
}

TEST(ForwardTest, ZeroParamsGiveUniform) {
  const ModelArch arch = small_arch(5, {7}, 4);
  const ParamVector zero(arch.param_count(), 0.0);
  const std::vector<double> x{0.3, -1.0, 2.0, 4.0, 0.1};
  const ProbDist p = forward(zero, arch, x);
  for (double v : p.probs) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(ForwardTest, SaturatesTowardOneHot) {
  // Linear 1-input model with logits (t, -t) for x = 1.
  const ModelArch arch = small_arch(1, {}, 2);
  const double t = 50.0;
  const ParamVector params(std::vector<double>{t, -t, 0.0, 0.0});
  const ProbDist p = forward(params, arch, std::vector<double>{1.0});
  EXPECT_NEAR(p.probs[0], 1.0, 1e-15);
  EXPECT_NEAR(p.probs[1], 0.0, 1e-15);
  p.validate();
}

TEST(ForwardTest, MatchesNaiveReevaluation) {
  std::mt19937_64 rng(7);
  for (Activation act : {Activation::kTanh, Activation::kRelu}) {
    const ModelArch arch = small_arch(6, {5, 4}, 3, act);
    for (int trial = 0; trial < 10; ++trial) {
      const auto theta = testing::random_vector(arch.param_count(), rng);
      const auto x = testing::random_vector(arch.input_dim, rng);
      const ProbDist p = forward(ParamVector(theta), arch, x);
      const auto ref = testing::naive_forward(theta, arch, x);
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(p.probs[j], ref[j], 1e-14);
    }
  }
}

TEST(ForwardTest, DimensionMismatchIsConfigError) {
  const ModelArch arch = small_arch(3, {}, 2);
  EXPECT_THROW(forward(ParamVector(arch.param_count()), arch, std::vector<double>{1.0}), ConfigError);
  EXPECT_THROW(forward(ParamVector(5), arch, std::vector<double>{1.0, 2.0, 3.0}), ConfigError);
}

TEST(ForwardTest, OutputIsAlwaysAValidDistribution) {
  std::mt19937_64 rng(11);
  const ModelArch arch = small_arch(4, {6}, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto theta = testing::random_vector(arch.param_count(), rng, 5.0);
    const auto x = testing::random_vector(arch.input_dim, rng, 10.0);
    EXPECT_NO_THROW(forward(ParamVector(theta), arch, x).validate());
  }
}

TEST(LossTest, CrossEntropyValues) {
  EXPECT_DOUBLE_EQ(cross_entropy(ProbDist{{0.0, 1.0, 0.0}}, 1), 0.0);
  EXPECT_NEAR(cross_entropy(ProbDist{{0.25, 0.25, 0.25, 0.25}}, 2), 1.386294, 1e-6);
  EXPECT_NEAR(cross_entropy(ProbDist{{0.7, 0.2, 0.1}}, 1), 1.609438, 1e-6);
  EXPECT_THROW(cross_entropy(ProbDist{{0.5, 0.5}}, 2), InputError);
  // Floor keeps the value finite.
  EXPECT_NEAR(cross_entropy(ProbDist{{1.0, 0.0}}, 1), -std::log(kProbFloor), 1e-9);
}

TEST(LossTest, KlDivergenceValues) {
  const ProbDist p{{0.8, 0.2}};
  const ProbDist u{{0.5, 0.5}};
  EXPECT_DOUBLE_EQ(kl_divergence(p, p), 0.0);
  EXPECT_NEAR(kl_divergence(ProbDist{{1.0, 0.0}}, u), 0.693147, 1e-6);
  EXPECT_NEAR(kl_divergence(p, u), 0.192745, 1e-6);
  EXPECT_NEAR(kl_divergence(u, p), 0.223144, 1e-6);
}

TEST(LossTest, NonNegativityOnRandomDistributions) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const ProbDist p{testing::random_distribution(4, rng)};
    const ProbDist q{testing::random_distribution(4, rng)};
    EXPECT_GE(kl_divergence(p, q), 0.0);
    EXPECT_EQ(kl_divergence(p, p), 0.0);
    EXPECT_GE(cross_entropy(q, trial % 4), 0.0);
  }
}

TEST(BackwardTest, EmptyBatchIsInputError) {
  const ModelArch arch = small_arch(2, {}, 2);
  EXPECT_THROW(backward(ParamVector(arch.param_count()), arch, {}), InputError);
}

TEST(BackwardTest, ZeroWeightTermsGiveZeroGradient) {
  const ModelArch arch = small_arch(3, {4}, 2);
  std::mt19937_64 rng(5);
  const ParamVector theta(testing::random_vector(arch.param_count(), rng));
  const std::vector<double> x{1.0, 2.0, 3.0};
  const std::vector<LossTerm> terms{LossTerm::ce(x, 0, 0.0), LossTerm::ce(x, 1, 0.0)};
  const GradVector g = backward(theta, arch, terms);
  for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(BackwardTest, LogisticRegressionClosedForm) {
  const ModelArch arch = small_arch(3, {}, 4);
  std::mt19937_64 rng(9);
  const ParamVector theta(testing::random_vector(arch.param_count(), rng));
  const std::vector<double> x{0.5, -1.5, 2.0};
  const std::size_t y = 2;
  const std::vector<LossTerm> terms{LossTerm::ce(x, y, 1.0)};
  const GradVector g = backward(theta, arch, terms);

  const auto q = testing::naive_forward(theta.values, arch, x);
  for (std::size_t o = 0; o < 4; ++o) {
    const double d = q[o] - (o == y ? 1.0 : 0.0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.values[o * 3 + i], d * x[i], 1e-14);
    EXPECT_NEAR(g.values[12 + o], d, 1e-14);
  }
}

// Random objective mixing CE and KL terms with random weights.
std::vector<LossTerm> random_terms(const ModelArch& arch, std::mt19937_64& rng,
                                   std::vector<std::vector<double>>& inputs,
                                   std::vector<std::vector<double>>& refs, std::size_t n) {
  inputs.clear();
  refs.clear();
  inputs.reserve(n);
  refs.reserve(n);
  std::uniform_real_distribution<double> w(0.1, 1.0);
  std::vector<LossTerm> terms;
  for (std::size_t k = 0; k < n; ++k) {
    inputs.push_back(testing::random_vector(arch.input_dim, rng));
    if (k % 2 == 0) {
      terms.push_back(LossTerm::ce(inputs.back(), k % arch.num_classes, w(rng)));
    } else {
      refs.push_back(testing::random_distribution(arch.num_classes, rng));
      terms.push_back(LossTerm::kl(inputs.back(), refs.back(), w(rng)));
    }
  }
  return terms;
}

TEST(BackwardTest, MatchesFiniteDifferencesOn200ParamModel) {
  // 10 -> 14 -> 3: 10*14 + 14 + 14*3 + 3 = 199 parameters.
  const ModelArch arch = small_arch(10, {14}, 3);
  ASSERT_NEAR(static_cast<double>(arch.param_count()), 200.0, 1.0);
  std::mt19937_64 rng(21);
  std::vector<std::vector<double>> inputs, refs;
  for (int trial = 0; trial < 5; ++trial) {
    const auto theta = testing::random_vector(arch.param_count(), rng, 0.5);
    const auto terms = random_terms(arch, rng, inputs, refs, 6);
    const GradVector g = backward(ParamVector(theta), arch, terms);
    const auto fd = testing::finite_difference_grad(theta, arch, terms, 1e-5);
    double worst = 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) worst = std::max(worst, testing::rel_error(g.values[k], fd[k]));
    EXPECT_LE(worst, 1e-4) << "trial " << trial;
  }
}

TEST(BackwardTest, ReluNetworkMatchesFiniteDifferences) {
  const ModelArch arch = small_arch(5, {8}, 3, Activation::kRelu);
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> inputs, refs;
  const auto theta = testing::random_vector(arch.param_count(), rng, 0.5);
  const auto terms = random_terms(arch, rng, inputs, refs, 4);
  const GradVector g = backward(ParamVector(theta), arch, terms);
  const auto fd = testing::finite_difference_grad(theta, arch, terms, 1e-5);
  for (std::size_t k = 0; k < theta.size(); ++k) EXPECT_LE(testing::rel_error(g.values[k], fd[k]), 1e-4);
}

TEST(BackwardTest, LossValueMatchesNaiveObjective) {
  const ModelArch arch = small_arch(4, {3}, 3);
  std::mt19937_64 rng(8);
  std::vector<std::vector<double>> inputs, refs;
  const auto theta = testing::random_vector(arch.param_count(), rng);
  const auto terms = random_terms(arch, rng, inputs, refs, 5);
  const LossAndGrad lg = loss_and_gradient(ParamVector(theta), arch, terms);
  EXPECT_NEAR(lg.loss, testing::naive_objective(theta, arch, terms), 1e-12);
  EXPECT_NEAR(evaluate_loss(ParamVector(theta), arch, terms), lg.loss, 1e-12);
}

TEST(BackwardTest, LabelOutOfRangeIsInputError) {
  const ModelArch arch = small_arch(2, {}, 2);
  const std::vector<double> x{1.0, 1.0};
  const std::vector<LossTerm> terms{LossTerm::ce(x, 5, 1.0)};
  EXPECT_THROW(backward(ParamVector(arch.param_count()), arch, terms), InputError);
}

TEST(SgdTest, Arithmetic) {
  const ParamVector p(std::vector<double>{1.0, 1.0});
  EXPECT_EQ(sgd_step(p, GradVector{{2.0, -2.0}}, 0.5), ParamVector(std::vector<double>{0.0, 2.0}));
  EXPECT_EQ(sgd_step(p, GradVector{{0.0, 0.0}}, 0.5), p);
}

TEST(SgdTest, TwoStepsEqualOneDoubledStep) {
  std::mt19937_64 rng(2);
  const ParamVector p(testing::random_vector(30, rng));
  const GradVector g{testing::random_vector(30, rng)};
  const ParamVector twice = sgd_step(sgd_step(p, g, 0.1), g, 0.1);
  const ParamVector once = sgd_step(p, g, 0.2);
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(twice.values[k], once.values[k], 1e-14);
}

TEST(SgdTest, NonFiniteGradientIsTrainingError) {
  const ParamVector p(std::vector<double>{1.0});
  EXPECT_THROW(sgd_step(p, GradVector{{std::nan("")}}, 0.1), TrainingError);
  EXPECT_THROW(sgd_step(p, GradVector{{INFINITY}}, 0.1), TrainingError);
}

TEST(LayoutTest, FlattenUnflattenRoundTrip) {
  std::mt19937_64 rng(13);
  const ModelArch arch = small_arch(7, {5, 3}, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const ParamVector v(testing::random_vector(arch.param_count(), rng));
    const auto layers = unflatten(v, arch);
    ASSERT_EQ(layers.size(), 3u);
    EXPECT_EQ(flatten(layers), v);
  }
}

TEST(InitTest, DeterministicAndBoundedByFanIn) {
  const ModelArch arch = small_arch(16, {9}, 3);
  const ParamVector a = init_params(arch, 42);
  EXPECT_EQ(a, init_params(arch, 42));
  EXPECT_NE(a, init_params(arch, 43));
  const auto layers = unflatten(a, arch);
  for (const DenseLayer& l : layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (double w : l.weights) EXPECT_LE(std::abs(w), bound);
    for (double b : l.bias) EXPECT_EQ(b, 0.0);
  }
}

}  // namespace
}  // namespace fedil
