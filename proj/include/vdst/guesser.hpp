#pragma once

// Dot-product guesser: an MLP embeds each object's raw features, an LSTM over
// the dialogue rounds produces an encoding, and the score of object k is
// <mlp(o_k), encoding>. The guesser reads question tokens and answers only, so
// it stays fixed while the question generator changes during RL.

#include <algorithm>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdst/autodiff.hpp"
#include "vdst/env.hpp"
#include "vdst/model.hpp"
#include "vdst/optim.hpp"
#include "vdst/rng.hpp"

namespace vdst {

struct GuesserConfig {
  std::size_t slots = 8;
  std::size_t feature_dim = 32;
  std::size_t dim = 64;
  std::size_t vocab_size = 0;

  void validate() const {
    if (slots < 1 || feature_dim < 1 || dim < 1) throw ConfigError("guesser sizes must be positive");
    if (vocab_size <= static_cast<std::size_t>(kReservedCount)) throw ConfigError("guesser vocabulary too small");
  }
};

inline void to_json(nlohmann::json& j, const GuesserConfig& c) {
  j = {{"m", c.slots}, {"feature_dim", c.feature_dim}, {"d", c.dim}, {"vocab", c.vocab_size}};
}
inline void from_json(const nlohmann::json& j, GuesserConfig& c) {
  j.at("m").get_to(c.slots);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("d").get_to(c.dim);
  j.at("vocab").get_to(c.vocab_size);
}

inline GuesserConfig guesser_config_for(const World& world, std::size_t dim = 64) {
  return {world.config().slots, world.config().feature_dim(), dim, world.vocab().size()};
}

struct GuesserParams {
  GuesserConfig config;
  Tensor word_embedding;    // V x d
  Tensor answer_embedding;  // 3 x d
  Tensor lstm_input;        // 4d x 2d
  Tensor lstm_hidden;       // 4d x d
  Tensor lstm_bias;         // 4d
  Tensor object_weight1;    // feature_dim x d
  Tensor object_bias1;      // d
  Tensor object_weight2;    // d x d
  Tensor object_bias2;      // d

  GuesserParams() = default;
  explicit GuesserParams(const GuesserConfig& c) : config(c) {
    c.validate();
    const std::size_t d = c.dim;
    word_embedding = Tensor(Shape{c.vocab_size, d});
    answer_embedding = Tensor(Shape{3, d});
    lstm_input = Tensor(Shape{4 * d, 2 * d});
    lstm_hidden = Tensor(Shape{4 * d, d});
    lstm_bias = Tensor(Shape{4 * d});
    object_weight1 = Tensor(Shape{c.feature_dim, d});
    object_bias1 = Tensor(Shape{d});
    object_weight2 = Tensor(Shape{d, d});
    object_bias2 = Tensor(Shape{d});
    for (auto& [n, t] : named()) t->enable_grad();
  }

  std::vector<std::pair<std::string, Tensor*>> named() {
    return {{"guesser.embedding.word", &word_embedding}, {"guesser.embedding.answer", &answer_embedding},
            {"guesser.lstm.input", &lstm_input},         {"guesser.lstm.hidden", &lstm_hidden},
            {"guesser.lstm.bias", &lstm_bias},           {"guesser.mlp.weight1", &object_weight1},
            {"guesser.mlp.bias1", &object_bias1},        {"guesser.mlp.weight2", &object_weight2},
            {"guesser.mlp.bias2", &object_bias2}};
  }
  std::vector<std::pair<std::string, const Tensor*>> named() const {
    auto v = const_cast<GuesserParams*>(this)->named();
    return {v.begin(), v.end()};
  }
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& [n, t] : named()) out.push_back(t);
    return out;
  }

  void initialize(std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x6E55);
    std::uniform_real_distribution<double> u(-kInitRange, kInitRange);
    for (auto& [name, t] : named()) {
      const bool bias = name.find("bias") != std::string::npos;
      for (double& x : t->data()) x = bias ? 0.0 : u(rng);
    }
    for (std::size_t k = config.dim; k < 2 * config.dim; ++k) lstm_bias[k] = kForgetBias;
  }
};

// One exchange as the guesser sees it.
struct QaPair {
  std::vector<int> tokens;
  Answer answer = Answer::na;
};

// Logits over the m slots (padding at kMaskedLogit).
template <typename Params>
ad::Var guesser_logits(ad::Tape& tape, Params& p, const Scene& scene, std::span<const QaPair> dialogue) {
  const GuesserConfig& c = p.config;
  if (scene.features.rows() != c.slots || scene.features.cols() != c.feature_dim)
    throw ShapeError("guesser: scene features " + shape_str(scene.features.shape()) + " do not match guesser");
  if (std::none_of(scene.real_mask.begin(), scene.real_mask.end(), [](double w) { return w != 0.0; }))
    throw std::invalid_argument("guesser: scene has no real objects");
  ad::Var words = tape.param(p.word_embedding), answers = tape.param(p.answer_embedding);
  ad::Var wx = tape.param(p.lstm_input), wh = tape.param(p.lstm_hidden), b = tape.param(p.lstm_bias);
  ad::Var zero = tape.constant(Tensor(Shape{c.dim}));
  ad::LstmState st{zero, zero};
  for (const QaPair& qa : dialogue) {
    if (qa.tokens.empty()) throw std::invalid_argument("guesser: empty question");
    std::vector<ad::Var> embedded;
    for (int tok : qa.tokens) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= c.vocab_size)
        throw UnknownTokenError("guesser: token id " + std::to_string(tok) + " outside vocabulary");
      embedded.push_back(ad::embedding(words, static_cast<std::size_t>(tok)));
    }
    ad::Var bag = embedded.front();
    for (std::size_t i = 1; i < embedded.size(); ++i) bag = ad::add(bag, embedded[i]);
    bag = ad::scale(bag, 1.0 / static_cast<double>(embedded.size()));
    ad::Var x = ad::concat({bag, ad::embedding(answers, static_cast<std::size_t>(qa.answer))});
    st = ad::lstm_cell(x, st.h, st.c, wx, wh, b);
  }
  ad::Var hidden = ad::tanh(ad::add_rowwise(ad::matmul(tape.constant(scene.features), tape.param(p.object_weight1)),
                                            tape.param(p.object_bias1)));
  ad::Var objects = ad::add_rowwise(ad::matmul(hidden, tape.param(p.object_weight2)), tape.param(p.object_bias2));
  ad::Var scores = ad::matmul(objects, ad::reshape(st.h, Shape{c.dim, 1}));
  return ad::add(ad::reshape(scores, Shape{c.slots}), tape.constant(logit_mask(scene.real_mask)));
}

inline Tensor guesser_distribution(const GuesserParams& p, const Scene& scene, std::span<const QaPair> dialogue) {
  ad::Tape tape(false);
  return tape.value(ad::softmax(guesser_logits(tape, p, scene, dialogue)));
}

inline std::size_t guess(const GuesserParams& p, const Scene& scene, std::span<const QaPair> dialogue) {
  const Tensor pi = guesser_distribution(p, scene, dialogue);
  std::size_t best = 0;
  for (std::size_t i = 1; i < pi.size(); ++i)
    if (pi[i] > pi[best]) best = i;
  return best;
}

struct GuesserExample {
  Scene scene;
  std::vector<QaPair> dialogue;
  std::size_t target = 0;
};

// Scripted dialogue for a scene, optionally with some rounds replaced by
// random template questions so the guesser also sees off-script dialogues.
inline GuesserExample guesser_example(const World& world, const Scene& scene, std::size_t max_questions,
                                      double random_question_rate, Rng& rng) {
  GuesserExample ex{scene, {}, scene.spec.target_index};
  const ScriptedDialogue script = scripted_dialogue(world, scene.spec, max_questions);
  for (const ScriptedRound& r : script.rounds) {
    if (uniform01(rng) < random_question_rate) {
      const std::size_t kinds = 5;
      Question q;
      q.kind = static_cast<QuestionKind>(std::uniform_int_distribution<std::size_t>(0, kinds - 1)(rng));
      const std::size_t range = q.kind == QuestionKind::category        ? world.config().categories
                                : q.kind == QuestionKind::supercategory ? world.config().supercategories()
                                : q.kind == QuestionKind::color         ? world.config().colors
                                : q.kind == QuestionKind::location      ? 4
                                                                        : 2;
      q.value = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, range - 1)(rng));
      std::vector<int> tokens = render_question(q, world.vocab());
      ex.dialogue.push_back({tokens, oracle_answer(world, scene.spec, tokens)});
    } else {
      ex.dialogue.push_back({r.tokens, r.answer});
    }
  }
  return ex;
}

struct GuesserTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
};

struct GuesserEpoch {
  std::size_t epoch = 0;
  double loss = 0;
  double train_accuracy = 0;
};

inline double guesser_accuracy(const GuesserParams& p, std::span<const GuesserExample> data) {
  if (data.empty()) throw std::invalid_argument("guesser_accuracy: empty dataset");
  std::size_t hits = 0;
  for (const auto& ex : data) hits += guess(p, ex.scene, ex.dialogue) == ex.target;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

template <typename Log>
void train_guesser(GuesserParams& p, std::span<const GuesserExample> data, const GuesserTrainConfig& cfg,
                   std::uint64_t seed, Log&& on_epoch) {
  if (data.empty()) throw std::invalid_argument("train_guesser: empty dataset");
  if (cfg.batch < 1) throw ConfigError("guesser batch must be positive");
  auto params = p.tensors();
  OptimizerState opt = make_optimizer(OptimizerKind::adam, cfg.learning_rate);
  Rng rng = make_rng(seed, 0x6E55 + 1);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      for (std::size_t k = start; k < end; ++k) {
        const GuesserExample& ex = data[order[k]];
        ad::Tape tape;
        ad::Var logits = guesser_logits(tape, p, ex.scene, ex.dialogue);
        const Tensor& l = tape.value(logits);
        hits += static_cast<std::size_t>(std::max_element(l.data().begin(), l.data().end()) - l.data().begin()) == ex.target;
        ad::Var loss = ad::scale(ad::cross_entropy(logits, ex.target), 1.0 / static_cast<double>(end - start));
        total += tape.value(loss).item() * static_cast<double>(end - start);
        tape.backward(loss);
      }
      clip_grad_norm(params, cfg.clip_norm);
      optimizer_step(params, opt);
    }
    on_epoch(GuesserEpoch{epoch, total / static_cast<double>(data.size()),
                          static_cast<double>(hits) / static_cast<double>(data.size())});
  }
}

}  // namespace vdst
