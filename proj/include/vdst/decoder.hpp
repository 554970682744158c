#pragma once

// Autoregressive question decoder. Each step feeds [v ; embedding(previous
// word)] to a one-layer LSTM that starts from a zero state at <start>; a
// question ends at "?" or after max_words tokens. The final hidden state is
// the question representation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdst/autodiff.hpp"
#include "vdst/model.hpp"
#include "vdst/rng.hpp"
#include "vdst/vocab.hpp"

namespace vdst {

inline constexpr std::size_t kDefaultMaxWords = 12;
inline constexpr std::size_t kDefaultBeam = 20;

struct DecodeMode {
  enum class Kind { greedy, sample, beam };
  Kind kind = Kind::greedy;
  std::size_t beam_size = kDefaultBeam;

  static DecodeMode greedy() { return {Kind::greedy, 0}; }
  static DecodeMode sample() { return {Kind::sample, 0}; }
  static DecodeMode beam(std::size_t k) {
    if (k < 1) throw std::invalid_argument("beam size must be at least 1");
    return {Kind::beam, k};
  }
  std::string name() const {
    switch (kind) {
      case Kind::greedy: return "greedy";
      case Kind::sample: return "sampling";
      case Kind::beam: return "beam" + std::to_string(beam_size);
    }
    return "?";
  }
  static DecodeMode parse(const std::string& s) {
    if (s == "greedy") return greedy();
    if (s == "sample" || s == "sampling") return sample();
    if (s.rfind("beam", 0) == 0) {
      const std::string k = s.substr(4);
      return beam(k.empty() ? kDefaultBeam : static_cast<std::size_t>(std::stoul(k)));
    }
    throw std::invalid_argument("unknown decode mode '" + s + "'");
  }
};

struct DecodedQuestion {
  std::vector<int> tokens;
  std::vector<double> log_probs;
  ad::Var hidden;                  // h(j) on the caller's tape
  std::vector<ad::Var> token_nll;  // -log p(token) per step, differentiable when the tape records grads
};

// Logit offsets that exclude <pad>, <start> and the answer words from emission.
inline Tensor emission_mask(std::size_t vocab_size) {
  Tensor t(Shape{vocab_size});
  for (std::size_t i = 0; i < vocab_size; ++i) {
    const int id = static_cast<int>(i);
    t[i] = (id == kEnd || id >= kReservedCount) ? 0.0 : kMaskedLogit;
  }
  return t;
}

class QuestionDecoder {
 public:
  QuestionDecoder(ad::Tape& tape, const ModelVars& vars, ad::Var visual)
      : tape_(tape), vars_(vars), visual_bias_(ad::add(ad::linear(vars.lstm_visual, visual), vars.lstm_bias)) {
    const Tensor& V = tape.value(visual);
    const Tensor& Wv = tape.value(vars.lstm_visual);
    if (V.size() != Wv.shape()[1])
      throw ShapeError("decoder: visual context of length " + std::to_string(V.size()) + ", expected " +
                       std::to_string(Wv.shape()[1]));
    vocab_size_ = tape.value(vars.output_weight).shape()[0];
    hidden_ = tape.value(vars.lstm_hidden).shape()[1];
    mask_ = tape.constant(emission_mask(vocab_size_));
  }

  std::size_t vocab_size() const { return vocab_size_; }

  ad::LstmState initial_state() {
    Tensor zero(Shape{hidden_});
    ad::Var z = tape_.constant(zero);
    return {z, z};
  }

  struct Step {
    ad::LstmState state;
    ad::Var logits;  // masked
  };

  Step step(const ad::LstmState& st, int previous_token) {
    if (previous_token < 0 || static_cast<std::size_t>(previous_token) >= vocab_size_)
      throw UnknownTokenError("decoder: token id " + std::to_string(previous_token) + " outside vocabulary");
    ad::Var word = ad::embedding(vars_.word_embedding, static_cast<std::size_t>(previous_token));
    ad::LstmState next = ad::lstm_cell(word, st.h, st.c, vars_.lstm_word, vars_.lstm_hidden, visual_bias_);
    ad::Var logits = ad::add(ad::linear(vars_.output_weight, next.h, vars_.output_bias), mask_);
    return {next, logits};
  }

  // Scores a given token sequence (teacher forcing).
  DecodedQuestion score(const std::vector<int>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("decoder: cannot score an empty question");
    DecodedQuestion out;
    ad::LstmState st = initial_state();
    int prev = kStart;
    for (int tok : tokens) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size_)
        throw UnknownTokenError("decoder: token id " + std::to_string(tok) + " outside vocabulary");
      Step s = step(st, prev);
      ad::Var nll = ad::cross_entropy(s.logits, static_cast<std::size_t>(tok));
      out.tokens.push_back(tok);
      out.log_probs.push_back(-tape_.value(nll).item());
      out.token_nll.push_back(nll);
      st = s.state;
      prev = tok;
    }
    out.hidden = st.h;
    return out;
  }

  DecodedQuestion decode(const DecodeMode& mode, std::size_t max_words, Rng* rng = nullptr) {
    if (max_words < 1) throw std::invalid_argument("decoder: max_words must be at least 1");
    if (mode.kind == DecodeMode::Kind::beam) return score(beam_tokens(mode.beam_size, max_words));
    if (mode.kind == DecodeMode::Kind::sample && !rng) throw std::invalid_argument("decoder: sampling needs an rng");
    DecodedQuestion out;
    ad::LstmState st = initial_state();
    int prev = kStart;
    for (std::size_t i = 0; i < max_words; ++i) {
      Step s = step(st, prev);
      const int tok = mode.kind == DecodeMode::Kind::greedy ? argmax(tape_.value(s.logits)) : draw(tape_.value(s.logits), *rng);
      ad::Var nll = ad::cross_entropy(s.logits, static_cast<std::size_t>(tok));
      out.tokens.push_back(tok);
      out.log_probs.push_back(-tape_.value(nll).item());
      out.token_nll.push_back(nll);
      st = s.state;
      prev = tok;
      if (tok == kEnd) break;
    }
    out.hidden = st.h;
    return out;
  }

  // Standard beam search over summed log-probabilities. Hypotheses that emit
  // "?" or reach max_words leave the beam; search stops once no live
  // hypothesis can beat the best finished one.
  std::vector<int> beam_tokens(std::size_t beam_size, std::size_t max_words) {
    if (beam_size < 1) throw std::invalid_argument("beam size must be at least 1");
    struct Hyp {
      std::vector<int> tokens;
      double score = 0;
      ad::LstmState state;
    };
    struct Candidate {
      std::size_t parent;
      int token;
      double score;
    };
    std::vector<Hyp> live{Hyp{{}, 0.0, initial_state()}};
    std::vector<Hyp> finished;
    auto better = [](double sa, const std::vector<int>& ta, double sb, const std::vector<int>& tb) {
      if (sa != sb) return sa > sb;
      return ta < tb;
    };
    for (std::size_t len = 1; len <= max_words && !live.empty(); ++len) {
      std::vector<Candidate> cands;
      std::vector<ad::LstmState> next_states(live.size());
      for (std::size_t h = 0; h < live.size(); ++h) {
        Step s = step(live[h].state, live[h].tokens.empty() ? kStart : live[h].tokens.back());
        next_states[h] = s.state;
        const Tensor& logits = tape_.value(s.logits);
        const double lse = log_sum_exp(logits);
        for (std::size_t t = 0; t < logits.size(); ++t) {
          if (logits[t] <= kMaskedLogit / 2) continue;
          cands.push_back({h, static_cast<int>(t), live[h].score + logits[t] - lse});
        }
      }
      auto cand_tokens = [&](const Candidate& c) {
        auto t = live[c.parent].tokens;
        t.push_back(c.token);
        return t;
      };
      std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return cand_tokens(a) < cand_tokens(b);
      });
      if (cands.size() > beam_size) cands.resize(beam_size);
      std::vector<Hyp> next;
      for (const Candidate& c : cands) {
        Hyp h{cand_tokens(c), c.score, next_states[c.parent]};
        if (c.token == kEnd || len == max_words)
          finished.push_back(std::move(h));
        else
          next.push_back(std::move(h));
      }
      live = std::move(next);
      if (!finished.empty() && !live.empty()) {
        const auto best = std::max_element(finished.begin(), finished.end(), [&](const Hyp& a, const Hyp& b) {
          return better(b.score, b.tokens, a.score, a.tokens);
        });
        if (best->score >= live.front().score) break;
      }
    }
    const auto best = std::max_element(finished.begin(), finished.end(), [&](const Hyp& a, const Hyp& b) {
      return better(b.score, b.tokens, a.score, a.tokens);
    });
    return best->tokens;
  }

 private:
  static double log_sum_exp(const Tensor& x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x.data()) mx = std::max(mx, v);
    double z = 0;
    for (double v : x.data()) z += std::exp(v - mx);
    return mx + std::log(z);
  }
  static int argmax(const Tensor& x) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
      if (x[i] > x[best]) best = i;
    return static_cast<int>(best);
  }
  static int draw(const Tensor& logits, Rng& rng) {
    const double lse = log_sum_exp(logits);
    double u = uniform01(rng);
    std::size_t last = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double p = std::exp(logits[i] - lse);
      if (p <= 0) continue;
      last = i;
      if (u < p) return static_cast<int>(i);
      u -= p;
    }
    return static_cast<int>(last);
  }

  ad::Tape& tape_;
  ModelVars vars_;
  ad::Var visual_bias_;
  ad::Var mask_;
  std::size_t vocab_size_ = 0;
  std::size_t hidden_ = 0;
};

}  // namespace vdst
