#include <gtest/gtest.h>

#include <set>

#include "vdst/guesser.hpp"

using namespace vdst;

namespace {

EnvConfig small_world() {
  EnvConfig c;
  c.min_objects = 2;
  c.max_objects = 4;
  return c;
}

bool unique_categories(const SceneSpec& s) {
  std::set<int> cats;
  for (const auto& o : s.objects) cats.insert(o.category);
  return cats.size() == s.objects.size();
}

std::vector<GuesserExample> unique_category_games(const World& w, std::size_t n, std::uint64_t seed) {
  std::vector<GuesserExample> out;
  Rng rng(seed);
  for (std::uint64_t s = seed * 1000003; out.size() < n; ++s) {
    const Scene sc = w.generate(s);
    if (unique_categories(sc.spec)) out.push_back(guesser_example(w, sc, 3, 0.0, rng));
  }
  return out;
}

double mean_loss(const GuesserParams& p, std::span<const GuesserExample> data) {
  double total = 0;
  for (const auto& ex : data) {
    ad::Tape tape(false);
    total += tape.value(ad::cross_entropy(guesser_logits(tape, p, ex.scene, ex.dialogue), ex.target)).item();
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

TEST(Guesser, IdenticalObjectsGiveUniformDistribution) {
  EnvConfig c;
  c.noise = 0.0;
  const World w{c};
  SceneSpec s;
  s.seed = 3;
  for (int i = 0; i < 5; ++i) s.objects.push_back({1, 2, Quadrant::br, SizeClass::big, {0.1, 0.1, 0.8, 0.8}});
  const Scene sc = w.materialize(s);
  GuesserParams p(guesser_config_for(w, 16));
  p.initialize(1);
  const std::vector<QaPair> dialogue{{w.vocab().encode("is it a dog ?"), Answer::yes}};
  const Tensor pi = guesser_distribution(p, sc, dialogue);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(pi[i], 0.2, 1e-12);
  for (std::size_t i = 5; i < 8; ++i) EXPECT_EQ(pi[i], 0.0);
}

TEST(Guesser, DistributionSumsToOneWithZeroPaddingMass) {
  const World w{EnvConfig{}};
  GuesserParams p(guesser_config_for(w, 16));
  p.initialize(2);
  Rng rng(1);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene sc = w.generate(seed);
    const auto ex = guesser_example(w, sc, 5, 0.5, rng);
    const Tensor pi = guesser_distribution(p, sc, ex.dialogue);
    double sum = 0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
      if (sc.real_mask[i] == 0.0) {
        EXPECT_EQ(pi[i], 0.0);
      }
      sum += pi[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Guesser, RejectsDegenerateInputs) {
  const World w{EnvConfig{}};
  GuesserParams p(guesser_config_for(w, 8));
  p.initialize(1);
  Scene sc = w.generate(1);
  std::fill(sc.real_mask.begin(), sc.real_mask.end(), 0.0);
  EXPECT_THROW(guesser_distribution(p, sc, {}), std::invalid_argument);
  const Scene ok = w.generate(1);
  const std::vector<QaPair> bad{{{999}, Answer::yes}};
  EXPECT_THROW(guesser_distribution(p, ok, bad), UnknownTokenError);
  std::vector<GuesserExample> empty;
  EXPECT_THROW(train_guesser(p, empty, {}, 1, [](const GuesserEpoch&) {}), std::invalid_argument);
}

TEST(Guesser, LossDecreasesAfterFirstEpoch) {
  const World w{small_world()};
  const auto data = unique_category_games(w, 200, 1);
  GuesserParams p(guesser_config_for(w, 16));
  p.initialize(4);
  const double before = mean_loss(p, data);
  GuesserTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 16;
  cfg.learning_rate = 5e-3;
  train_guesser(p, data, cfg, 1, [](const GuesserEpoch&) {});
  EXPECT_LT(mean_loss(p, data), before);
}

TEST(Guesser, InformationCompleteDialoguesAreSolved) {
  const World w{small_world()};
  const auto train = unique_category_games(w, 600, 1);
  const auto held = unique_category_games(w, 300, 2);
  GuesserParams p(guesser_config_for(w, 16));
  p.initialize(5);
  GuesserTrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch = 16;
  cfg.learning_rate = 5e-3;
  train_guesser(p, train, cfg, 1, [](const GuesserEpoch&) {});
  EXPECT_GT(guesser_accuracy(p, held), 0.95);
}

TEST(Guesser, ShuffledLabelsStayNearChance) {
  const World w{small_world()};
  auto train = unique_category_games(w, 600, 1);
  const auto held = unique_category_games(w, 600, 2);
  Rng rng(9);
  for (auto& ex : train) ex.target = std::uniform_int_distribution<std::size_t>(0, ex.scene.real_count() - 1)(rng);
  GuesserParams p(guesser_config_for(w, 16));
  p.initialize(5);
  GuesserTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 16;
  cfg.learning_rate = 5e-3;
  train_guesser(p, train, cfg, 1, [](const GuesserEpoch&) {});
  double chance = 0;
  for (const auto& ex : held) chance += 1.0 / static_cast<double>(ex.scene.real_count());
  chance /= static_cast<double>(held.size());
  // Three standard errors of a proportion over 600 games.
  EXPECT_NEAR(guesser_accuracy(p, held), chance, 3 * std::sqrt(chance * (1 - chance) / 600.0));
}

TEST(Guesser, RandomQuestionRateReplacesRounds) {
  const World w{EnvConfig{}};
  Rng rng(3);
  std::size_t replaced = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const Scene sc = w.generate(seed);
    const auto script = scripted_dialogue(w, sc.spec, 5);
    const auto ex = guesser_example(w, sc, 5, 1.0, rng);
    ASSERT_EQ(ex.dialogue.size(), script.rounds.size());
    for (std::size_t i = 0; i < ex.dialogue.size(); ++i) {
      ASSERT_TRUE(parse_question(ex.dialogue[i].tokens, w.vocab()).has_value());
      EXPECT_EQ(ex.dialogue[i].answer, oracle_answer(w, sc.spec, ex.dialogue[i].tokens));
      replaced += ex.dialogue[i].tokens != script.rounds[i].tokens;
      ++total;
    }
    const auto same = guesser_example(w, sc, 5, 0.0, rng);
    for (std::size_t i = 0; i < same.dialogue.size(); ++i) EXPECT_EQ(same.dialogue[i].tokens, script.rounds[i].tokens);
  }
  EXPECT_GT(replaced, total / 2);
}
