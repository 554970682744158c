#pragma once

// Supervised pre-training on scripted dialogues and REINFORCE fine-tuning in
// self-play against the rule oracle and a fixed guesser.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdst/autodiff.hpp"
#include "vdst/game.hpp"
#include "vdst/guesser.hpp"
#include "vdst/metrics.hpp"
#include "vdst/model.hpp"
#include "vdst/optim.hpp"

namespace vdst {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SlConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-4;
  std::size_t batch = 64;
  OptimizerKind optimizer = OptimizerKind::adam;
};

struct RlConfig {
  std::size_t epochs = 200;
  std::size_t games_per_epoch = 2000;
  double learning_rate = 1e-3;
  std::size_t batch = 64;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double baseline_decay = 0.99;
};

struct TrainConfig {
  std::size_t max_questions = 5;
  std::size_t max_words = kDefaultMaxWords;
  double clip_norm = 5.0;
  SlConfig sl;
  RlConfig rl;

  void validate() const {
    if (max_words < 1) throw ConfigError("max_words must be at least 1");
    if (sl.batch < 1 || rl.batch < 1) throw ConfigError("batch size must be positive");
    if (!(sl.learning_rate > 0) || !(rl.learning_rate > 0)) throw ConfigError("learning rates must be positive");
    if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
    if (!(rl.baseline_decay >= 0 && rl.baseline_decay < 1)) throw ConfigError("baseline_decay must lie in [0, 1)");
  }
};

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_questions", c.max_questions},
       {"max_words", c.max_words},
       {"clip_norm", c.clip_norm},
       {"sl",
        {{"epochs", c.sl.epochs},
         {"lr", c.sl.learning_rate},
         {"batch", c.sl.batch},
         {"optimizer", optimizer_name(c.sl.optimizer)}}},
       {"rl",
        {{"epochs", c.rl.epochs},
         {"games_per_epoch", c.rl.games_per_epoch},
         {"lr", c.rl.learning_rate},
         {"batch", c.rl.batch},
         {"optimizer", optimizer_name(c.rl.optimizer)},
         {"baseline_decay", c.rl.baseline_decay}}}};
}

// --- scene splits --------------------------------------------------------------

// Training scenes and new-game scenes come from disjoint seed sets (top bit).
inline std::uint64_t train_scene_seed(std::uint64_t seed, std::size_t i) {
  return mix_seed(seed, i) & ~(std::uint64_t{1} << 63);
}
inline std::uint64_t new_game_scene_seed(std::uint64_t seed, std::size_t i) {
  return mix_seed(seed ^ 0x9E37, i) | (std::uint64_t{1} << 63);
}

struct SlCorpus {
  std::uint64_t seed = 0;
  std::size_t max_questions = 0;
  std::vector<Scene> scenes;
  std::vector<ScriptedDialogue> dialogues;
  std::size_t size() const { return scenes.size(); }
};

inline SlCorpus build_sl_corpus(const World& world, std::size_t n_games, std::uint64_t seed, std::size_t max_questions) {
  SlCorpus c;
  c.seed = seed;
  c.max_questions = max_questions;
  for (std::size_t i = 0; i < n_games; ++i) {
    c.scenes.push_back(world.generate(train_scene_seed(seed, i)));
    c.dialogues.push_back(scripted_dialogue(world, c.scenes.back().spec, max_questions));
  }
  return c;
}

// --- games -----------------------------------------------------------------------

using GuessFn = std::function<std::size_t(const Scene&, std::span<const QaPair>)>;

inline GuessFn guesser_fn(const GuesserParams& g) {
  return [&g](const Scene& s, std::span<const QaPair> d) { return guess(g, s, d); };
}

struct GameRecord {
  SceneSpec scene;
  std::vector<DialogueRound> rounds;
  std::vector<double> initial_belief;
  std::size_t guess_index = 0;
  double reward = 0;               // r_D
  std::vector<double> action_rewards;  // r_A, one per emitted token
  double baseline = 0;
  std::string mode;
  std::uint64_t seed = 0;

  std::size_t action_count() const {
    std::size_t n = 0;
    for (const auto& r : rounds) n += r.tokens.size();
    return n;
  }
  TokenDialogue questions() const {
    TokenDialogue q;
    for (const auto& r : rounds) q.push_back(r.tokens);
    return q;
  }
  std::vector<QaPair> qa_pairs() const {
    std::vector<QaPair> out;
    for (const auto& r : rounds) out.push_back({r.tokens, r.answer});
    return out;
  }
};

struct GameOptions {
  DecodeMode mode = DecodeMode::greedy();
  std::size_t max_questions = 5;
  std::size_t max_words = kDefaultMaxWords;
};

// Plays one game on `dlg`'s tape. `rng` drives sampling; oracle noise (if
// configured) draws from its own stream derived from the scene seed.
inline GameRecord play_game(Dialogue& dlg, const World& world, const Scene& scene, const GuessFn& guesser,
                            const GameOptions& opt, Rng* rng) {
  GameRecord rec;
  rec.scene = scene.spec;
  rec.mode = opt.mode.name();
  rec.seed = scene.spec.seed;
  rec.initial_belief = dlg.belief().pi.values();
  Rng noise = make_rng(scene.spec.seed, 0x0AC1E);
  Rng* noise_rng = world.config().oracle_noise_p > 0 ? &noise : nullptr;
  for (std::size_t r = 0; r < opt.max_questions; ++r) {
    const DecodedQuestion& q = dlg.ask(opt.mode, opt.max_words, rng);
    dlg.answer(oracle_answer(world, scene.spec, q.tokens, noise_rng));
  }
  rec.rounds = dlg.rounds();
  const auto qa = rec.qa_pairs();
  rec.guess_index = guesser(scene, qa);
  rec.reward = rec.guess_index == scene.spec.target_index ? 1.0 : 0.0;
  const std::size_t T = rec.action_count();
  rec.action_rewards.assign(T, T ? rec.reward / static_cast<double>(T) : 0.0);
  return rec;
}

inline GameRecord rollout(const VdstParams& params, const GuessFn& guesser, const World& world, const Scene& scene,
                          const GameOptions& opt, Rng* rng = nullptr) {
  ad::Tape tape(false);
  ModelVars vars = bind(tape, params);
  Dialogue dlg(tape, vars, params.config, scene);
  return play_game(dlg, world, scene, guesser, opt, rng);
}

// --- logs --------------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0;
  std::optional<double> success_rate;
  std::optional<double> avg_reward;
  std::optional<double> repeated_q_rate;
  bool zero_reward_variance = false;
};

inline void write_log_header(std::ostream& os) { os << "epoch,loss,success_rate,avg_reward,repeated_q_rate\n"; }

inline void write_log_row(std::ostream& os, const EpochLog& e) {
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << e.epoch << ',' << e.loss << ',';
  opt(e.success_rate);
  os << ',';
  opt(e.avg_reward);
  os << ',';
  opt(e.repeated_q_rate);
  os << '\n';
}

// Greedy self-play summary over a fixed list of scenes.
struct PlaySummary {
  double success_rate = 0;
  double repeated_q_rate = 0;
};

inline PlaySummary greedy_summary(const VdstParams& params, const GuessFn& guesser, const World& world,
                                  std::span<const Scene> scenes, std::size_t max_questions, std::size_t max_words) {
  PlaySummary s;
  if (scenes.empty()) return s;
  std::vector<TokenDialogue> dialogues;
  double hits = 0;
  for (const Scene& sc : scenes) {
    GameRecord r = rollout(params, guesser, world, sc, {DecodeMode::greedy(), max_questions, max_words});
    hits += r.reward;
    dialogues.push_back(r.questions());
  }
  s.success_rate = hits / static_cast<double>(scenes.size());
  s.repeated_q_rate = repeated_question_rate(dialogues);
  return s;
}

// --- supervised phase -----------------------------------------------------------------

// Teacher-forced negative log-likelihood of one scripted dialogue; beliefs are
// updated by the model's own matching on the gold question/answer pairs.
inline std::vector<ad::Var> sl_dialogue_nll(Dialogue& dlg, const ScriptedDialogue& gold) {
  for (const ScriptedRound& r : gold.rounds) {
    dlg.ask_forced(r.tokens);
    dlg.answer(r.answer);
  }
  return dlg.token_nll();
}

struct SlMonitor {
  const GuessFn* guesser = nullptr;
  std::span<const Scene> scenes;
};

template <typename Log>
void sl_train(VdstParams& params, const World& world, const SlCorpus& corpus, const TrainConfig& cfg,
              std::uint64_t seed, Log&& on_epoch, SlMonitor monitor = {}) {
  cfg.validate();
  if (corpus.size() == 0) throw std::invalid_argument("sl_train: empty corpus");
  auto tensors = params.tensors();
  OptimizerState opt = make_optimizer(cfg.sl.optimizer, cfg.sl.learning_rate);
  Rng rng = make_rng(seed, 0x51);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  params.zero_grad();
  for (std::size_t epoch = 1; epoch <= cfg.sl.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.sl.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.sl.batch);
      std::size_t batch_tokens = 0;
      for (std::size_t k = start; k < end; ++k)
        for (const auto& r : corpus.dialogues[order[k]].rounds) batch_tokens += r.tokens.size();
      if (batch_tokens == 0) continue;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        if (corpus.dialogues[i].rounds.empty()) continue;
        ad::Tape tape;
        ModelVars vars = bind(tape, params);
        Dialogue dlg(tape, vars, params.config, corpus.scenes[i]);
        const auto nll = sl_dialogue_nll(dlg, corpus.dialogues[i]);
        ad::Var loss = ad::sum(ad::concat(nll));
        total += tape.value(loss).item();
        tape.backward(ad::scale(loss, 1.0 / static_cast<double>(batch_tokens)));
      }
      tokens += batch_tokens;
      if (!std::isfinite(clip_grad_norm(tensors, cfg.clip_norm)))
        throw TrainingError("supervised training diverged at epoch " + std::to_string(epoch) +
                            " (non-finite gradient)");
      optimizer_step(tensors, opt);
    }
    EpochLog log{epoch, tokens ? total / static_cast<double>(tokens) : 0.0, {}, {}, {}};
    if (!std::isfinite(log.loss))
      throw TrainingError("supervised training diverged at epoch " + std::to_string(epoch) + " (loss " +
                          std::to_string(log.loss) + ")");
    if (monitor.guesser && !monitor.scenes.empty()) {
      PlaySummary s = greedy_summary(params, *monitor.guesser, world, monitor.scenes, cfg.max_questions, cfg.max_words);
      log.success_rate = s.success_rate;
      log.avg_reward = s.success_rate;
      log.repeated_q_rate = s.repeated_q_rate;
    }
    on_epoch(log);
  }
}

// --- reinforcement phase ---------------------------------------------------------------

struct RlState {
  double baseline = 0;
  std::size_t games = 0;
};

// One sampled game with its policy-gradient contribution accumulated into the
// parameter gradients: sum_t (r_A - b/T) * -d log p(a_t), i.e. the advantage
// (r_D - b) spread uniformly over the T emitted tokens. Returns the record;
// `weight` scales the contribution (1 / batch size).
inline GameRecord reinforce_game(VdstParams& params, const GuessFn& guesser, const World& world, const Scene& scene,
                                 const TrainConfig& cfg, RlState& state, double weight, Rng& rng, double* surrogate) {
  ad::Tape tape;
  ModelVars vars = bind(tape, params);
  Dialogue dlg(tape, vars, params.config, scene);
  GameRecord rec = play_game(dlg, world, scene, guesser, {DecodeMode::sample(), cfg.max_questions, cfg.max_words}, &rng);
  rec.baseline = state.baseline;
  const std::size_t T = rec.action_count();
  if (T > 0) {
    const double advantage = (rec.reward - state.baseline) / static_cast<double>(T);
    ad::Var nll = ad::sum(ad::concat(dlg.token_nll()));
    if (surrogate) *surrogate += advantage * tape.value(nll).item();
    if (advantage != 0.0) tape.backward(ad::scale(nll, advantage * weight));
  }
  state.baseline = cfg.rl.baseline_decay * state.baseline + (1.0 - cfg.rl.baseline_decay) * rec.reward;
  ++state.games;
  return rec;
}

template <typename Log>
void rl_train(VdstParams& params, const GuessFn& guesser, const World& world, std::span<const Scene> scenes,
              const TrainConfig& cfg, std::uint64_t seed, Log&& on_epoch, RlState* state_out = nullptr) {
  cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("rl_train: no training scenes");
  auto tensors = params.tensors();
  OptimizerState opt = make_optimizer(cfg.rl.optimizer, cfg.rl.learning_rate);
  Rng rng = make_rng(seed, 0x2E1);
  RlState state;
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  params.zero_grad();
  for (std::size_t epoch = 1; epoch <= cfg.rl.epochs; ++epoch) {
    double surrogate = 0, rewards = 0, squares = 0;
    std::vector<TokenDialogue> dialogues;
    for (std::size_t start = 0; start < cfg.rl.games_per_epoch; start += cfg.rl.batch) {
      const std::size_t n = std::min(cfg.rl.batch, cfg.rl.games_per_epoch - start);
      for (std::size_t k = 0; k < n; ++k) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const Scene& scene = scenes[order[cursor++]];
        GameRecord rec = reinforce_game(params, guesser, world, scene, cfg, state, 1.0 / static_cast<double>(n), rng,
                                        &surrogate);
        rewards += rec.reward;
        squares += rec.reward * rec.reward;
        dialogues.push_back(rec.questions());
      }
      if (!std::isfinite(clip_grad_norm(tensors, cfg.clip_norm)))
        throw TrainingError("policy-gradient training diverged at epoch " + std::to_string(epoch) +
                            " (non-finite gradient)");
      optimizer_step(tensors, opt);
    }
    const double games = static_cast<double>(cfg.rl.games_per_epoch);
    EpochLog log{epoch, surrogate / games, rewards / games, rewards / games, repeated_question_rate(dialogues)};
    log.zero_reward_variance = squares / games - (rewards / games) * (rewards / games) <= 0.0;
    if (!std::isfinite(log.loss)) throw TrainingError("policy-gradient training diverged at epoch " + std::to_string(epoch));
    on_epoch(log);
  }
  if (state_out) *state_out = state;
}

}  // namespace vdst
