#pragma once

// The question generator's trainable parameters and the four per-round
// mechanisms operating on the visual dialogue state <belief, representations>:
// object projection, belief-weighted representation update, object-self
// difference attention, and cross-modal matching with the multiplicative
// belief update.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdst/autodiff.hpp"
#include "vdst/env.hpp"
#include "vdst/rng.hpp"
#include "vdst/tensor.hpp"

namespace vdst {

struct AblationConfig {
  bool disable_state_tracking = false;  // belief frozen uniform, representations static
  bool disable_osda = false;            // visual context is the mean object row per glimpse
  bool operator==(const AblationConfig&) const = default;
};

struct ModelConfig {
  std::size_t slots = 8;       // m
  std::size_t static_dim = 24; // d_s
  std::size_t dim = 64;        // d; also the decoder hidden size and answer embedding size
  std::size_t glimpses = 2;    // g
  std::size_t vocab_size = 0;
  bool scale_uoor_by_slots = false;
  AblationConfig ablation;

  std::size_t feature_dim() const { return static_dim + 8; }
  std::size_t hidden() const { return dim; }

  void validate() const {
    if (slots < 1) throw ConfigError("model slots must be positive");
    if (dim < 1) throw ConfigError("model dim must be positive");
    if (glimpses < 1) throw ConfigError("glimpse count must be at least 1");
    if (vocab_size <= static_cast<std::size_t>(kReservedCount)) throw ConfigError("vocabulary too small");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"m", c.slots},
       {"d_s", c.static_dim},
       {"d", c.dim},
       {"g", c.glimpses},
       {"vocab", c.vocab_size},
       {"hidden", c.hidden()},
       {"scale_uoor_by_slots", c.scale_uoor_by_slots},
       {"disable_state_tracking", c.ablation.disable_state_tracking},
       {"disable_osda", c.ablation.disable_osda}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("m").get_to(c.slots);
  j.at("d_s").get_to(c.static_dim);
  j.at("d").get_to(c.dim);
  j.at("g").get_to(c.glimpses);
  j.at("vocab").get_to(c.vocab_size);
  if (j.at("hidden").get<std::size_t>() != c.dim) throw ConfigError("hidden size must equal d");
  c.scale_uoor_by_slots = j.value("scale_uoor_by_slots", false);
  c.ablation.disable_state_tracking = j.at("disable_state_tracking");
  c.ablation.disable_osda = j.at("disable_osda");
}

inline ModelConfig model_config_for(const World& world, std::size_t dim = 64, std::size_t glimpses = 2) {
  ModelConfig c;
  c.slots = world.config().slots;
  c.static_dim = world.config().static_dim();
  c.dim = dim;
  c.glimpses = glimpses;
  c.vocab_size = world.vocab().size();
  return c;
}

inline constexpr double kInitRange = 0.08;
inline constexpr double kForgetBias = 1.0;

struct VdstParams {
  ModelConfig config;
  Tensor projection_weight;  // (d_s+8) x d
  Tensor projection_bias;    // d
  Tensor word_embedding;     // V x d
  Tensor answer_embedding;   // 3 x d
  Tensor lstm_visual;        // 4H x (g d): LSTM input weights acting on v
  Tensor lstm_word;          // 4H x d: LSTM input weights acting on the previous word
  Tensor lstm_hidden;        // 4H x H
  Tensor lstm_bias;          // 4H
  Tensor output_weight;      // V x H
  Tensor output_bias;        // V
  Tensor attention;          // W: (m d) x g
  Tensor match_object;       // U: d x d
  Tensor match_dialogue;     // V: 2d x d

  VdstParams() = default;
  explicit VdstParams(const ModelConfig& c) : config(c) {
    c.validate();
    const std::size_t d = c.dim, h = c.hidden(), V = c.vocab_size;
    projection_weight = Tensor(Shape{c.feature_dim(), d});
    projection_bias = Tensor(Shape{d});
    word_embedding = Tensor(Shape{V, d});
    answer_embedding = Tensor(Shape{3, d});
    lstm_visual = Tensor(Shape{4 * h, c.glimpses * d});
    lstm_word = Tensor(Shape{4 * h, d});
    lstm_hidden = Tensor(Shape{4 * h, h});
    lstm_bias = Tensor(Shape{4 * h});
    output_weight = Tensor(Shape{V, h});
    output_bias = Tensor(Shape{V});
    attention = Tensor(Shape{c.slots * d, c.glimpses});
    match_object = Tensor(Shape{d, d});
    match_dialogue = Tensor(Shape{2 * d, d});
    for (auto& [name, t] : named()) t->enable_grad();
  }

  VdstParams(const VdstParams& o) : config(o.config) {
    auto src = o.named();
    auto dst = named();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = *src[i].second;
  }
  VdstParams& operator=(const VdstParams& o) {
    if (this != &o) {
      config = o.config;
      auto src = o.named();
      auto dst = named();
      for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = *src[i].second;
    }
    return *this;
  }

  // Fixed serialisation order.
  std::vector<std::pair<std::string, Tensor*>> named() {
    return {{"projection.weight", &projection_weight}, {"projection.bias", &projection_bias},
            {"embedding.word", &word_embedding},       {"embedding.answer", &answer_embedding},
            {"decoder.lstm.visual", &lstm_visual},     {"decoder.lstm.word", &lstm_word},
            {"decoder.lstm.hidden", &lstm_hidden},     {"decoder.lstm.bias", &lstm_bias},
            {"decoder.output.weight", &output_weight}, {"decoder.output.bias", &output_bias},
            {"osda.W", &attention},                    {"cmm.U", &match_object},
            {"cmm.V", &match_dialogue}};
  }
  std::vector<std::pair<std::string, const Tensor*>> named() const {
    auto v = const_cast<VdstParams*>(this)->named();
    return {v.begin(), v.end()};
  }
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& [n, t] : named()) out.push_back(t);
    return out;
  }

  // uniform(-0.08, 0.08) weights, zero biases, forget-gate bias +1.
  void initialize(std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x1A17);
    std::uniform_real_distribution<double> u(-kInitRange, kInitRange);
    for (auto& [name, t] : named()) {
      const bool bias = name.ends_with(".bias");
      for (double& x : t->data()) x = bias ? 0.0 : u(rng);
    }
    const std::size_t h = config.hidden();
    for (std::size_t k = h; k < 2 * h; ++k) lstm_bias[k] = kForgetBias;
  }

  void zero_grad() {
    for (auto& [n, t] : named()) t->zero_grad();
  }
};

// Parameters bound to one tape.
struct ModelVars {
  ad::Var projection_weight, projection_bias, word_embedding, answer_embedding;
  ad::Var lstm_visual, lstm_word, lstm_hidden, lstm_bias, output_weight, output_bias;
  ad::Var attention, match_object, match_dialogue;
};

template <typename Params>
ModelVars bind(ad::Tape& tape, Params& p) {
  return ModelVars{tape.param(p.projection_weight), tape.param(p.projection_bias), tape.param(p.word_embedding),
                   tape.param(p.answer_embedding),  tape.param(p.lstm_visual),     tape.param(p.lstm_word),
                   tape.param(p.lstm_hidden),       tape.param(p.lstm_bias),       tape.param(p.output_weight),
                   tape.param(p.output_bias),       tape.param(p.attention),       tape.param(p.match_object),
                   tape.param(p.match_dialogue)};
}

// Added to logits of real rows; padding rows get a large negative value.
inline constexpr double kMaskedLogit = -1e30;

inline Tensor logit_mask(const std::vector<double>& real_mask, std::size_t cols = 0) {
  const std::size_t m = real_mask.size();
  Tensor t(cols ? Shape{m, cols} : Shape{m});
  const std::size_t c = cols ? cols : 1;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) t[i * c + j] = real_mask[i] != 0.0 ? 0.0 : kMaskedLogit;
  return t;
}

// O(0) = swish(raw W + b), row-wise.
inline ad::Var project_objects(ad::Var raw, ad::Var weight, ad::Var bias) {
  const Tensor& R = raw.tape->value(raw);
  const Tensor& W = weight.tape->value(weight);
  if (R.rank() != 2 || W.rank() != 2 || R.shape()[1] != W.shape()[0])
    throw ShapeError("project_objects: feature width " + shape_str(R.shape()) + " does not match projection " +
                     shape_str(W.shape()));
  return ad::swish(ad::add_rowwise(ad::matmul(raw, weight), bias));
}

// Row k of O(0) scaled by pi[k] (optionally times m so a uniform belief is the identity).
inline ad::Var uoor(ad::Var initial, ad::Var pi, bool scale_by_slots = false) {
  const Tensor& O = initial.tape->value(initial);
  const Tensor& P = pi.tape->value(pi);
  if (O.rank() != 2 || P.size() != O.shape()[0])
    throw ShapeError("uoor: belief of length " + std::to_string(P.size()) + " for representations " +
                     shape_str(O.shape()));
  ad::Var scaled = ad::scale_rows(initial, pi);
  return scale_by_slots ? ad::scale(scaled, static_cast<double>(O.shape()[0])) : scaled;
}

struct OsdaResult {
  ad::Var visual;     // g*d, glimpses concatenated
  ad::Var attention;  // m x g, each column a distribution over objects
};

// Object-self difference attention. `real_mask` (optional) excludes padding rows
// from every glimpse's softmax.
inline OsdaResult osda(ad::Var objects, ad::Var weight, const std::vector<double>* real_mask = nullptr) {
  ad::Tape& tape = *objects.tape;
  const Tensor& O = tape.value(objects);
  const Tensor& W = tape.value(weight);
  if (O.rank() != 2 || W.rank() != 2) throw ShapeError("osda: rank-2 operands required");
  const std::size_t m = O.shape()[0], d = O.shape()[1], g = W.shape()[1];
  if (W.shape()[0] != m * d)
    throw ShapeError("osda: W " + shape_str(W.shape()) + " expects " + std::to_string(W.shape()[0] / std::max<std::size_t>(d, 1)) +
                     " objects, representations are " + shape_str(O.shape()));
  ad::Var logits = ad::matmul(ad::self_difference(objects), weight);  // m x g
  if (real_mask) {
    if (real_mask->size() != m) throw ShapeError("osda: mask length mismatch");
    logits = ad::add(logits, tape.constant(logit_mask(*real_mask, g)));
  }
  ad::Var att = ad::softmax(logits, 0);
  ad::Var pooled = ad::matmul(ad::transpose(att), objects);  // g x d
  return {ad::reshape(pooled, Shape{g * d}), att};
}

// Replacement for osda when it is ablated: mean real row, once per glimpse.
inline ad::Var mean_visual(ad::Var objects, const std::vector<double>& real_mask, std::size_t glimpses) {
  ad::Var mean = ad::masked_mean_rows(objects, real_mask);
  return ad::concat(std::vector<ad::Var>(glimpses, mean));
}

// pi_hat = softmax(rowsum(tanh((O U^T) . (V^T h_a))) / sqrt(d)).
inline ad::Var cmm(ad::Var objects, ad::Var pair, ad::Var match_object, ad::Var match_dialogue,
                   const std::vector<double>* real_mask = nullptr) {
  ad::Tape& tape = *objects.tape;
  const Tensor& O = tape.value(objects);
  const Tensor& H = tape.value(pair);
  const Tensor& U = tape.value(match_object);
  const Tensor& V = tape.value(match_dialogue);
  if (O.rank() != 2) throw ShapeError("cmm: representations must be m x d");
  const std::size_t d = O.shape()[1];
  if (U.shape() != Shape{d, d} || V.shape() != Shape{2 * d, d} || H.size() != 2 * d)
    throw ShapeError("cmm: shapes O" + shape_str(O.shape()) + " U" + shape_str(U.shape()) + " V" +
                     shape_str(V.shape()) + " h_a" + shape_str(H.shape()));
  ad::Var visual = ad::matmul(objects, ad::transpose(match_object));  // m x d
  ad::Var textual = ad::matmul(pair, match_dialogue);                 // d
  ad::Var fused = ad::scale(ad::tanh(ad::mul_rowwise(visual, textual)), 1.0 / std::sqrt(static_cast<double>(d)));
  ad::Var logits = ad::row_sum(fused);
  if (real_mask) logits = ad::add(logits, tape.constant(logit_mask(*real_mask)));
  return ad::softmax(logits);
}

inline constexpr double kBeliefFloor = 1e-9;

// pi = norm(pi_prev * max(pi_hat, floor)), padding forced to zero.
inline ad::Var update_belief(ad::Var pi_prev, ad::Var pi_hat, const std::vector<double>* real_mask = nullptr) {
  ad::Tape& tape = *pi_prev.tape;
  const Tensor& P = tape.value(pi_prev);
  const Tensor& Q = tape.value(pi_hat);
  if (P.shape() != Q.shape()) throw ShapeError("update_belief: " + shape_str(P.shape()) + " vs " + shape_str(Q.shape()));
  ad::Var prod = ad::mul(pi_prev, ad::clamp_min(pi_hat, kBeliefFloor));
  if (real_mask) {
    if (real_mask->size() != P.size()) throw ShapeError("update_belief: mask length mismatch");
    prod = ad::mul(prod, tape.constant(Tensor::vector(*real_mask)));
  }
  return ad::normalize(prod);
}

inline Tensor uniform_belief(const std::vector<double>& real_mask) {
  double n = 0;
  for (double w : real_mask) n += (w != 0.0);
  Tensor pi(Shape{real_mask.size()});
  for (std::size_t i = 0; i < real_mask.size(); ++i) pi[i] = real_mask[i] != 0.0 ? 1.0 / n : 0.0;
  return pi;
}

}  // namespace vdst
