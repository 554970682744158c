#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vdst/autodiff.hpp"
#include "vdst/decoder.hpp"
#include "vdst/env.hpp"
#include "vdst/model.hpp"

namespace vdst {

// Raw features O^f, initial projections O^(0) and the current O^(j).
struct ObjectSet {
  Tensor raw;
  Tensor initial;
  Tensor current;
  std::size_t count() const { return initial.rows(); }
};

struct BeliefState {
  Tensor pi;
  std::size_t round = 0;
};

struct DialogueRound {
  std::vector<int> tokens;
  Answer answer = Answer::na;
  std::vector<double> log_probs;
  std::vector<double> hidden;  // h(j)
  std::vector<double> pair;    // h_a(j) = [h(j); answer embedding]
  std::vector<double> belief;  // pi after this round's update
};

using AnswerProvider = std::function<Answer(const std::vector<int>&)>;

class InvalidTransition : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// One game of the question generator on a tape. A round is ask() followed by
// answer(); play_round() runs both with an answer provider in between.
class Dialogue {
 public:
  Dialogue(ad::Tape& tape, const ModelVars& vars, const ModelConfig& config, const Scene& scene)
      : tape_(tape), vars_(vars), config_(config), mask_(scene.real_mask) {
    if (scene.features.rows() != config.slots || scene.features.cols() != config.feature_dim())
      throw ShapeError("dialogue: scene features " + shape_str(scene.features.shape()) + " do not match model (" +
                       std::to_string(config.slots) + " x " + std::to_string(config.feature_dim()) + ")");
    raw_ = tape.constant(scene.features);
    initial_ = project_objects(raw_, vars.projection_weight, vars.projection_bias);
    pi_ = tape.constant(uniform_belief(mask_));
    current_ = initial_;
  }

  ad::Tape& tape() { return tape_; }
  std::size_t round() const { return round_; }
  bool awaiting_answer() const { return pending_.has_value(); }
  ad::Var belief_var() const { return pi_; }
  ad::Var initial_var() const { return initial_; }
  ad::Var current_var() const { return current_; }
  const std::vector<double>& real_mask() const { return mask_; }
  const std::vector<ad::Var>& token_nll() const { return token_nll_; }
  const std::vector<DialogueRound>& rounds() const { return rounds_; }
  // Last visual context and attention; attention is invalid when osda is ablated.
  ad::Var last_visual() const { return visual_; }
  ad::Var last_attention() const { return attention_; }

  ObjectSet objects() const { return {tape_.value(raw_), tape_.value(initial_), tape_.value(current_)}; }
  BeliefState belief() const { return {tape_.value(pi_), round_}; }

  // Updates representations, attends, and decodes the next question.
  const DecodedQuestion& ask(const DecodeMode& mode, std::size_t max_words, Rng* rng = nullptr) {
    if (pending_) throw InvalidTransition("dialogue: previous question is still awaiting an answer");
    QuestionDecoder dec = prepare();
    pending_ = dec.decode(mode, max_words, rng);
    return *pending_;
  }

  // Teacher-forced question (supervised training, rescoring).
  const DecodedQuestion& ask_forced(const std::vector<int>& tokens) {
    if (pending_) throw InvalidTransition("dialogue: previous question is still awaiting an answer");
    QuestionDecoder dec = prepare();
    pending_ = dec.score(tokens);
    return *pending_;
  }

  const std::vector<int>& pending_tokens() const {
    if (!pending_) throw InvalidTransition("dialogue: no question pending");
    return pending_->tokens;
  }

  // Fuses the answer with the question representation and updates the belief.
  const DialogueRound& answer(Answer a) {
    if (!pending_) throw InvalidTransition("dialogue: no question pending");
    DecodedQuestion q = std::move(*pending_);
    pending_.reset();
    ad::Var ans = ad::embedding(vars_.answer_embedding, static_cast<std::size_t>(a));
    ad::Var pair = ad::concat({q.hidden, ans});
    if (!config_.ablation.disable_state_tracking) {
      ad::Var pi_hat = cmm(current_, pair, vars_.match_object, vars_.match_dialogue, &mask_);
      pi_ = update_belief(pi_, pi_hat, &mask_);
    }
    for (ad::Var v : q.token_nll) token_nll_.push_back(v);
    DialogueRound r;
    r.tokens = std::move(q.tokens);
    r.answer = a;
    r.log_probs = std::move(q.log_probs);
    r.hidden = tape_.value(q.hidden).values();
    r.pair = tape_.value(pair).values();
    r.belief = tape_.value(pi_).values();
    ++round_;
    rounds_.push_back(std::move(r));
    return rounds_.back();
  }

  const DialogueRound& play_round(const AnswerProvider& provider, const DecodeMode& mode, std::size_t max_words,
                                  Rng* rng = nullptr) {
    const DecodedQuestion& q = ask(mode, max_words, rng);
    return answer(provider(q.tokens));
  }

 private:
  QuestionDecoder prepare() {
    if (config_.ablation.disable_state_tracking)
      current_ = initial_;
    else
      current_ = uoor(initial_, pi_, config_.scale_uoor_by_slots);
    if (config_.ablation.disable_osda) {
      visual_ = mean_visual(current_, mask_, config_.glimpses);
      attention_ = {};
    } else {
      OsdaResult r = osda(current_, vars_.attention, &mask_);
      visual_ = r.visual;
      attention_ = r.attention;
    }
    return QuestionDecoder(tape_, vars_, visual_);
  }

  ad::Tape& tape_;
  ModelVars vars_;
  ModelConfig config_;
  std::vector<double> mask_;
  ad::Var raw_, initial_, current_, pi_, visual_, attention_;
  std::optional<DecodedQuestion> pending_;
  std::vector<ad::Var> token_nll_;
  std::vector<DialogueRound> rounds_;
  std::size_t round_ = 0;
};

}  // namespace vdst
