#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "vdst/game.hpp"
#include "vdst/model.hpp"

namespace vdst {
namespace {

using testing::check_gradients;
using testing::random_tensor;
using testing::tiny_config;

const Tensor& values(ad::Var v) { return v.tape->value(v); }

TEST(ProjectObjects, ZeroWeightsGiveZeros) {
  ad::Tape t(false);
  auto out = project_objects(t.constant(Tensor(Shape{8, 10}, 1.5)), t.constant(Tensor(Shape{10, 4})),
                             t.constant(Tensor(Shape{4})));
  EXPECT_EQ(values(out).shape(), (Shape{8, 4}));
  for (double v : values(out).data()) EXPECT_EQ(v, 0.0);
}

TEST(ProjectObjects, SwishOfIdentityPaddedProjection) {
  ad::Tape t(false);
  Tensor raw(Shape{1, 10});
  raw(0, 0) = 1;
  raw(0, 1) = -1;
  Tensor w(Shape{10, 2});
  w(0, 0) = w(1, 1) = 1;
  auto out = values(project_objects(t.constant(raw), t.constant(w), t.constant(Tensor(Shape{2}))));
  EXPECT_NEAR(out[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(out[0], 0.73106, 1e-5);
  EXPECT_NEAR(out[1], -0.26894, 1e-5);
  EXPECT_THROW(project_objects(t.constant(raw), t.constant(Tensor(Shape{9, 2})), t.constant(Tensor(Shape{2}))),
               ShapeError);
}

TEST(Uoor, OneHotUniformAndHandExample) {
  std::mt19937_64 rng(1);
  ad::Tape t(false);
  const Tensor O = random_tensor({4, 3}, rng);
  auto o = t.constant(O);
  auto one_hot = values(uoor(o, t.constant(Tensor::vector({0, 0, 1, 0}))));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(one_hot(i, j), i == 2 ? O(i, j) : 0.0);
  auto uni = values(uoor(o, t.constant(Tensor::vector({0.25, 0.25, 0.25, 0.25}))));
  for (std::size_t i = 0; i < O.size(); ++i) EXPECT_DOUBLE_EQ(uni[i], O[i] / 4);
  auto scaled = values(uoor(o, t.constant(Tensor::vector({0.25, 0.25, 0.25, 0.25})), true));
  for (std::size_t i = 0; i < O.size(); ++i) EXPECT_DOUBLE_EQ(scaled[i], O[i]);
  EXPECT_EQ(values(o).values(), O.values());  // input untouched

  auto hand = values(uoor(t.constant(Tensor::matrix({{2, 0}, {0, 2}, {1, 1}})), t.constant(Tensor::vector({0.5, 0.3, 0.2}))));
  const std::vector<double> expected{1, 0, 0, 0.6, 0.2, 0.2};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(hand[i], expected[i], 1e-15);
  EXPECT_THROW(uoor(o, t.constant(Tensor::vector({0.5, 0.5}))), ShapeError);
}

TEST(Osda, SingleObjectIdenticalObjectsAndHandExample) {
  ad::Tape t(false);
  auto single = osda(t.constant(Tensor::matrix({{1.5, -2.0}})), t.constant(Tensor(Shape{2, 3}, 0.7)));
  EXPECT_EQ(values(single.visual).values(), (std::vector<double>{1.5, -2, 1.5, -2, 1.5, -2}));

  Tensor same(Shape{3, 2});
  for (std::size_t i = 0; i < 3; ++i) same(i, 0) = 0.4, same(i, 1) = -1.1;
  std::mt19937_64 rng(2);
  auto r = osda(t.constant(same), t.constant(random_tensor({6, 2}, rng)));
  for (double a : values(r.attention).data()) EXPECT_NEAR(a, 1.0 / 3, 1e-15);
  const Tensor v = values(r.visual);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(v[2 * k], 0.4, 1e-15);
    EXPECT_NEAR(v[2 * k + 1], -1.1, 1e-15);
  }

  // D = [[0, 1(1-3)], [3(3-1), 0]] = [[0,-2],[6,0]]; logits = row sums.
  auto hand = osda(t.constant(Tensor::matrix({{1}, {3}})), t.constant(Tensor::matrix({{1}, {1}})));
  const double a0 = std::exp(-2.0) / (std::exp(-2.0) + std::exp(6.0));
  EXPECT_NEAR(values(hand.attention)[0], a0, 1e-15);
  EXPECT_NEAR(values(hand.attention)[0], 3.35e-4, 1e-6);
  EXPECT_NEAR(values(hand.visual)[0], a0 * 1 + (1 - a0) * 3, 1e-14);
  EXPECT_NEAR(values(hand.visual)[0], 2.99933, 1e-5);
}

TEST(Osda, PermutationEquivariance) {
  std::mt19937_64 rng(3);
  const std::size_t m = 3, d = 4, g = 2;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor O = random_tensor({m, d}, rng), W = random_tensor({m * d, g}, rng);
    std::vector<std::size_t> perm{0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor Op(Shape{m, d}), Wp(Shape{m * d, g});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < d; ++j) Op(i, j) = O(perm[i], j);
      for (std::size_t j = 0; j < d * g; ++j) Wp[(i * d) * g + j] = W[(perm[i] * d) * g + j];
    }
    ad::Tape t(false);
    const Tensor a = values(osda(t.constant(O), t.constant(W)).attention);
    const Tensor ap = values(osda(t.constant(Op), t.constant(Wp)).attention);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < g; ++k) EXPECT_NEAR(ap(i, k), a(perm[i], k), 1e-13);
  }
}

TEST(Osda, PaddingGetsNoAttention) {
  std::mt19937_64 rng(4);
  ad::Tape t(false);
  const std::vector<double> mask{1, 1, 0, 0};
  auto r = osda(t.constant(random_tensor({4, 3}, rng)), t.constant(random_tensor({12, 2}, rng)), &mask);
  const Tensor a = values(r.attention);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(a(2, k), 0.0);
    EXPECT_EQ(a(3, k), 0.0);
    EXPECT_NEAR(a(0, k) + a(1, k), 1.0, 1e-15);
  }
  EXPECT_THROW(osda(t.constant(random_tensor({4, 3}, rng)), t.constant(random_tensor({9, 2}, rng))), ShapeError);
}

TEST(Cmm, SymmetricCasesAreUniform) {
  std::mt19937_64 rng(5);
  ad::Tape t(false);
  auto U = t.constant(random_tensor({3, 3}, rng)), V = t.constant(random_tensor({6, 3}, rng));
  auto zero_pair = values(cmm(t.constant(random_tensor({4, 3}, rng)), t.constant(Tensor(Shape{6})), U, V));
  for (double p : zero_pair.data()) EXPECT_NEAR(p, 0.25, 1e-15);
  Tensor same(Shape{4, 3}, 0.3);
  auto identical = values(cmm(t.constant(same), t.constant(random_tensor({6}, rng)), U, V));
  for (double p : identical.data()) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(Cmm, HandExample) {
  ad::Tape t(false);
  auto p = values(cmm(t.constant(Tensor::matrix({{1}, {-1}})), t.constant(Tensor::vector({1, 1})),
                      t.constant(Tensor::matrix({{1}})), t.constant(Tensor::matrix({{1}, {1}}))));
  const double m0 = std::tanh(2.0), e0 = std::exp(m0), e1 = std::exp(-m0);
  EXPECT_NEAR(p[0], e0 / (e0 + e1), 1e-15);
  EXPECT_NEAR(p[0], 0.873034, 1e-6);
  EXPECT_NEAR(p[1], 0.126966, 1e-6);
}

TEST(UpdateBelief, FixedPointsAndHandExample) {
  std::mt19937_64 rng(6);
  ad::Tape t(false);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor prev = random_tensor({5}, rng);
    for (double& x : prev.data()) x = std::abs(x) + 0.01;
    const double s = std::accumulate(prev.data().begin(), prev.data().end(), 0.0);
    for (double& x : prev.data()) x /= s;
    auto out = values(update_belief(t.constant(prev), t.constant(Tensor(Shape{5}, 0.2))));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out[i], prev[i], 1e-15);
    auto out2 = values(update_belief(t.constant(Tensor(Shape{5}, 0.2)), t.constant(prev)));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out2[i], prev[i], 1e-15);
  }
  auto hand = values(update_belief(t.constant(Tensor::vector({0.5, 0.3, 0.2})), t.constant(Tensor::vector({0.2, 0.4, 0.4}))));
  EXPECT_NEAR(hand[0], 1.0 / 3, 1e-15);
  EXPECT_NEAR(hand[1], 0.4, 1e-15);
  EXPECT_NEAR(hand[2], 4.0 / 15, 1e-15);
}

TEST(UpdateBelief, FloorPreventsAbsorptionAndDegenerateInputThrows) {
  ad::Tape t(false);
  auto out = values(update_belief(t.constant(Tensor::vector({0.5, 0.5})), t.constant(Tensor::vector({1.0, 0.0}))));
  EXPECT_GT(out[1], 0.0);
  EXPECT_NEAR(out[1], 1e-9 / (1 + 1e-9), 1e-20);
  EXPECT_THROW(update_belief(t.constant(Tensor::vector({0.0, 0.0})), t.constant(Tensor::vector({0.5, 0.5}))),
               std::domain_error);
  EXPECT_THROW(update_belief(t.constant(Tensor::vector({0.5, 0.5})), t.constant(Tensor::vector({1.0}))), ShapeError);
}

TEST(UpdateBelief, MonotoneEvidence) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  ad::Tape t(false);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor prev(Shape{4}), hat(Shape{4});
    for (std::size_t i = 0; i < 4; ++i) prev[i] = u(rng), hat[i] = u(rng);
    auto out = values(update_belief(t.constant(prev), t.constant(hat)));
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b)
        if (hat[a] > hat[b] && prev[a] >= prev[b]) {
          EXPECT_GT(out[a], out[b]);
        }
  }
}

TEST(UpdateBelief, InvariantsOverRandomCalls) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> real(2, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = real(rng);
    std::vector<double> mask(8, 0.0);
    for (int i = 0; i < n; ++i) mask[static_cast<std::size_t>(i)] = 1.0;
    ad::Tape t(false);
    Tensor prev = uniform_belief(mask);
    for (int i = 0; i < n; ++i) prev[static_cast<std::size_t>(i)] *= 0.05 + u(rng);
    Tensor logits(Shape{8});
    for (double& x : logits.data()) x = 40 * (u(rng) - 0.5);
    auto hat = ad::softmax(ad::add(t.constant(logits), t.constant(logit_mask(mask))));
    auto pi = values(update_belief(ad::normalize(t.constant(prev)), hat, &mask));
    double s = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      ASSERT_GE(pi[i], 0.0);
      if (mask[i] == 0.0) {
        ASSERT_EQ(pi[i], 0.0);
      }
      s += pi[i];
    }
    ASSERT_NEAR(s, 1.0, 1e-9);
  }
}

// --- decoder ---------------------------------------------------------------

TEST(Decoder, MaxWordsOneTruncates) {
  VdstParams p(tiny_config(10));
  p.initialize(1);
  ad::Tape t(false);
  ModelVars vars = bind(t, std::as_const(p));
  QuestionDecoder dec(t, vars, t.constant(Tensor(Shape{3}, 0.5)));
  for (auto mode : {DecodeMode::greedy(), DecodeMode::beam(5)}) {
    auto q = dec.decode(mode, 1);
    EXPECT_EQ(q.tokens.size(), 1u);
  }
  Rng rng(3);
  EXPECT_EQ(dec.decode(DecodeMode::sample(), 1, &rng).tokens.size(), 1u);
}

TEST(Decoder, RiggedEndTokenEndsQuestion) {
  VdstParams p(tiny_config(10));
  p.initialize(1);
  p.output_bias[kEnd] = 50;
  ad::Tape t(false);
  ModelVars vars = bind(t, std::as_const(p));
  QuestionDecoder dec(t, vars, t.constant(Tensor(Shape{3}, 0.5)));
  EXPECT_EQ(dec.decode(DecodeMode::greedy(), 12).tokens, std::vector<int>{kEnd});
  EXPECT_EQ(dec.decode(DecodeMode::beam(20), 12).tokens, std::vector<int>{kEnd});
}

TEST(Decoder, NeverEmitsReservedNonEndTokens) {
  VdstParams p(tiny_config(10));
  p.initialize(2);
  for (int id : {kPad, kStart, kYes, kNo, kNa}) p.output_bias[static_cast<std::size_t>(id)] = 30;
  ad::Tape t(false);
  ModelVars vars = bind(t, std::as_const(p));
  QuestionDecoder dec(t, vars, t.constant(Tensor(Shape{3}, 0.5)));
  Rng rng(4);
  for (int k = 0; k < 50; ++k)
    for (int tok : dec.decode(DecodeMode::sample(), 12, &rng).tokens) EXPECT_TRUE(tok == kEnd || tok >= kReservedCount);
}

TEST(Decoder, SampledLogProbsMatchTeacherForcedRescoring) {
  VdstParams p(tiny_config(12, 5));
  p.initialize(9);
  ad::Tape t(false);
  ModelVars vars = bind(t, std::as_const(p));
  std::mt19937_64 g(5);
  QuestionDecoder dec(t, vars, t.constant(random_tensor({5}, g)));
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    auto q = dec.decode(DecodeMode::sample(), 12, &rng);
    auto r = dec.score(q.tokens);
    const double a = std::accumulate(q.log_probs.begin(), q.log_probs.end(), 0.0);
    const double b = std::accumulate(r.log_probs.begin(), r.log_probs.end(), 0.0);
    EXPECT_NEAR(a, b, 1e-12);
    EXPECT_EQ(t.value(q.hidden).values(), t.value(r.hidden).values());
  }
}

TEST(Decoder, BeamTwentyMatchesExhaustiveEnumeration) {
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto r = testing::beam_vs_exhaustive(trial, g);
    EXPECT_EQ(r.beam, r.exhaustive) << "trial " << trial;
    EXPECT_NEAR(r.beam_score, r.exhaustive_score, 1e-12);
  }
}

TEST(DecodeModeNames, ParseRoundTrip) {
  EXPECT_EQ(DecodeMode::parse("greedy").name(), "greedy");
  EXPECT_EQ(DecodeMode::parse("sampling").name(), "sampling");
  EXPECT_EQ(DecodeMode::parse("beam5").beam_size, 5u);
  EXPECT_EQ(DecodeMode::parse("beam").beam_size, 20u);
  EXPECT_THROW(DecodeMode::parse("nucleus"), std::invalid_argument);
  EXPECT_THROW(DecodeMode::beam(0), std::invalid_argument);
}

// --- full round ----------------------------------------------------------------

struct Fixture {
  World world{EnvConfig{}};
  ModelConfig config;
  VdstParams params;
  explicit Fixture(std::size_t dim = 8, std::uint64_t seed = 3) : config(model_config_for(world, dim, 2)), params(config) {
    params.initialize(seed);
  }
};

TEST(Dialogue, RoundCounterAndBeliefInvariants) {
  Fixture f;
  const Scene scene = f.world.generate(42);
  ad::Tape t(false);
  ModelVars vars = bind(t, std::as_const(f.params));
  Dialogue dlg(t, vars, f.config, scene);
  auto pi0 = dlg.belief().pi;
  for (std::size_t i = 0; i < f.config.slots; ++i) EXPECT_DOUBLE_EQ(pi0[i], scene.real_mask[i] / scene.real_count());
  AnswerProvider oracle = [&](const std::vector<int>& q) { return oracle_answer(f.world, scene.spec, q); };
  for (std::size_t r = 1; r <= 5; ++r) {
    dlg.play_round(oracle, DecodeMode::greedy(), 12);
    EXPECT_EQ(dlg.round(), r);
    auto pi = dlg.belief().pi;
    double s = 0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
      EXPECT_GE(pi[i], 0.0);
      if (scene.real_mask[i] == 0.0) {
        EXPECT_EQ(pi[i], 0.0);
      }
      s += pi[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_THROW(dlg.answer(Answer::yes), InvalidTransition);
  dlg.ask(DecodeMode::greedy(), 12);
  EXPECT_THROW(dlg.ask(DecodeMode::greedy(), 12), InvalidTransition);
}

TEST(Dialogue, DisabledStateTrackingKeepsBeliefAndRepresentations) {
  Fixture f;
  f.config.ablation.disable_state_tracking = true;
  const Scene scene = f.world.generate(5);
  ad::Tape t(false);
  ModelVars vars = bind(t, std::as_const(f.params));
  Dialogue dlg(t, vars, f.config, scene);
  const auto pi0 = dlg.belief().pi.values();
  std::vector<std::vector<int>> questions;
  for (int r = 0; r < 4; ++r) {
    dlg.play_round([](const std::vector<int>&) { return Answer::yes; }, DecodeMode::greedy(), 12);
    EXPECT_EQ(dlg.belief().pi.values(), pi0);
    const ObjectSet objs = dlg.objects();
    EXPECT_EQ(objs.current.values(), objs.initial.values());
    questions.push_back(dlg.rounds().back().tokens);
  }
  // Static visual input: the same question every round.
  for (const auto& q : questions) EXPECT_EQ(q, questions.front());
}

TEST(Dialogue, RoundComposesSubOperations) {
  Fixture f;
  const Scene scene = f.world.generate(77);
  ad::Tape t(false);
  ModelVars vars = bind(t, std::as_const(f.params));
  Dialogue dlg(t, vars, f.config, scene);
  dlg.play_round([](const std::vector<int>&) { return Answer::no; }, DecodeMode::greedy(), 12);
  const auto& tokens = dlg.rounds().back().tokens;

  // Recompute the round from the individual operations on a fresh tape.
  ad::Tape u(false);
  ModelVars v2 = bind(u, std::as_const(f.params));
  auto o0 = project_objects(u.constant(scene.features), v2.projection_weight, v2.projection_bias);
  auto pi0 = u.constant(uniform_belief(scene.real_mask));
  auto oj = uoor(o0, pi0);
  auto vis = osda(oj, v2.attention, &scene.real_mask).visual;
  QuestionDecoder dec(u, v2, vis);
  auto q = dec.decode(DecodeMode::greedy(), 12);
  EXPECT_EQ(q.tokens, tokens);
  auto pair = ad::concat({q.hidden, ad::embedding(v2.answer_embedding, static_cast<std::size_t>(Answer::no))});
  auto hat = cmm(oj, pair, v2.match_object, v2.match_dialogue, &scene.real_mask);
  auto pi1 = update_belief(pi0, hat, &scene.real_mask);
  EXPECT_EQ(u.value(pi1).values(), dlg.belief().pi.values());
  EXPECT_EQ(u.value(pair).values(), dlg.rounds().back().pair);
}

TEST(Dialogue, FullRoundGradientsMatchFiniteDifferences) {
  const auto c = testing::full_round_gradient_case();
  auto r = check_gradients(c.f, c.in, c.step);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 500u);
}

TEST(HandOracles, AllMatchToNineDigits) {
  for (const auto& h : testing::hand_oracles()) EXPECT_NEAR(h.got, h.expected, 1e-9) << h.name;
}

TEST(Params, InitializationFollowsRanges) {
  Fixture f(16);
  for (auto& [name, t] : f.params.named()) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double x = (*t)[i];
      if (name == "decoder.lstm.bias")
        EXPECT_EQ(x, (i >= 16 && i < 32) ? 1.0 : 0.0);
      else if (name.ends_with(".bias"))
        EXPECT_EQ(x, 0.0);
      else
        EXPECT_LE(std::abs(x), 0.08);
    }
  }
  Fixture g(16);
  EXPECT_EQ(f.params.word_embedding.values(), g.params.word_embedding.values());
}

}  // namespace
}  // namespace vdst
