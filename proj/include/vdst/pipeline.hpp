#pragma once

// End-to-end runs: guesser training, supervised pre-training, policy-gradient
// fine-tuning, evaluation, and the ablation suite built on top of them.

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdst/evaluation.hpp"
#include "vdst/guesser.hpp"
#include "vdst/training.hpp"

namespace vdst {

struct GuesserSetup {
  std::size_t games = 2000;
  std::size_t dim = 64;
  double random_question_rate = 0.3;
  std::uint64_t corpus_seed = 99;
  GuesserTrainConfig train{30, 64, 1e-3, 5.0};
};

struct PipelineConfig {
  EnvConfig env;
  std::size_t dim = 64;
  std::size_t glimpses = 2;
  bool scale_uoor_by_slots = false;
  std::size_t corpus_size = 2000;
  TrainConfig train;
  GuesserSetup guesser;
  std::size_t eval_games = 500;
  std::uint64_t eval_seed = 12345;

  PipelineConfig() {
    // Desk-scale optimisation settings (see README).
    train.sl.learning_rate = 2e-3;
    train.sl.batch = 8;
    train.rl.learning_rate = 0.1;
  }

  ModelConfig model(const World& world, const AblationConfig& ablation = {}) const {
    ModelConfig c = model_config_for(world, dim, glimpses);
    c.scale_uoor_by_slots = scale_uoor_by_slots;
    c.ablation = ablation;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = {{"env", c.env},
       {"dim", c.dim},
       {"glimpses", c.glimpses},
       {"scale_uoor_by_slots", c.scale_uoor_by_slots},
       {"corpus_size", c.corpus_size},
       {"train", c.train},
       {"guesser",
        {{"games", c.guesser.games},
         {"dim", c.guesser.dim},
         {"random_question_rate", c.guesser.random_question_rate},
         {"corpus_seed", c.guesser.corpus_seed},
         {"epochs", c.guesser.train.epochs},
         {"batch", c.guesser.train.batch},
         {"lr", c.guesser.train.learning_rate}}},
       {"eval_games", c.eval_games},
       {"eval_seed", c.eval_seed}};
}

using GuesserLog = std::function<void(const GuesserEpoch&)>;

inline std::vector<GuesserExample> guesser_corpus(const World& world, const GuesserSetup& g, std::size_t max_questions,
                                                  std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x6C0);
  std::vector<GuesserExample> data;
  for (std::size_t i = 0; i < g.games; ++i)
    data.push_back(guesser_example(world, world.generate(train_scene_seed(g.corpus_seed, i)), max_questions,
                                   g.random_question_rate, rng));
  return data;
}

inline GuesserParams train_default_guesser(const World& world, const GuesserSetup& g, std::size_t max_questions,
                                           std::uint64_t seed, const GuesserLog& log = {}) {
  GuesserParams p(guesser_config_for(world, g.dim));
  p.initialize(seed);
  const auto data = guesser_corpus(world, g, max_questions, seed);
  train_guesser(p, data, g.train, seed, [&](const GuesserEpoch& e) {
    if (log) log(e);
  });
  return p;
}

struct PipelineRun {
  VdstParams sl;
  VdstParams rl;
  std::vector<EpochLog> sl_log;
  std::vector<EpochLog> rl_log;
};

using EpochCallback = std::function<void(const char* phase, const EpochLog&)>;

inline VdstParams run_supervised(const World& world, const PipelineConfig& cfg, const AblationConfig& ablation,
                                 std::uint64_t seed, std::vector<EpochLog>* log = nullptr,
                                 const EpochCallback& cb = {}) {
  VdstParams p(cfg.model(world, ablation));
  p.initialize(seed);
  const SlCorpus corpus = build_sl_corpus(world, cfg.corpus_size, seed, cfg.train.max_questions);
  sl_train(p, world, corpus, cfg.train, seed, [&](const EpochLog& e) {
    if (log) log->push_back(e);
    if (cb) cb("sl", e);
  });
  return p;
}

inline void run_reinforce(VdstParams& p, const World& world, const GuessFn& guesser, const PipelineConfig& cfg,
                          std::uint64_t seed, std::vector<EpochLog>* log = nullptr, const EpochCallback& cb = {}) {
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < cfg.corpus_size; ++i) scenes.push_back(world.generate(train_scene_seed(seed, i)));
  rl_train(p, guesser, world, scenes, cfg.train, seed, [&](const EpochLog& e) {
    if (log) log->push_back(e);
    if (cb) cb("rl", e);
  });
}

inline PipelineRun run_pipeline(const World& world, const GuessFn& guesser, const PipelineConfig& cfg,
                                const AblationConfig& ablation, std::uint64_t seed, const EpochCallback& cb = {}) {
  PipelineRun run;
  run.sl = run_supervised(world, cfg, ablation, seed, &run.sl_log, cb);
  run.rl = run.sl;
  run_reinforce(run.rl, world, guesser, cfg, seed, &run.rl_log, cb);
  return run;
}

inline EvalSettings default_eval_settings(const PipelineConfig& cfg, std::uint64_t seed) {
  EvalSettings s;
  s.games = cfg.eval_games;
  s.max_questions = cfg.train.max_questions;
  s.max_words = cfg.train.max_words;
  s.corpus_seed = seed;
  s.corpus_size = cfg.corpus_size;
  s.eval_seed = cfg.eval_seed;
  return s;
}

struct AblationOutcome {
  std::vector<VariantResult> results;
  std::string markdown;
  nlohmann::json json;
};

// Trains every variant on each seed (same corpus, guesser and evaluation
// scenes across variants) and reports greedy success on `split`.
inline AblationOutcome ablation_suite(const World& world, const GuessFn& guesser, const PipelineConfig& cfg,
                                      const std::vector<std::uint64_t>& seeds, Split split,
                                      const std::vector<Variant>& variants = standard_variants(),
                                      const EpochCallback& cb = {}) {
  AblationOutcome out;
  out.json = nlohmann::json::object();
  for (const Variant& v : variants) {
    VariantResult r{v.name, {}, {}};
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::uint64_t seed : seeds) {
      const PipelineRun run = run_pipeline(world, guesser, cfg, v.ablation, seed, cb);
      const auto scenes = eval_scenes(world, split, cfg.eval_games, seed, cfg.corpus_size, cfg.eval_seed);
      const SuccessResult s = eval_success(run.rl, guesser, world, scenes,
                                           {DecodeMode::greedy(), cfg.train.max_questions, cfg.train.max_words}, seed);
      const double rep = repeated_question_rate(dialogues_of(s.records));
      r.success.push_back(s.rate);
      r.repeated.push_back(rep);
      per_seed.push_back({{"seed", seed}, {"success", s.rate}, {"repeated_question_rate", rep},
                          {"fingerprint", params_fingerprint(run.rl)}});
    }
    const auto [m, sd] = mean_stdev(r.success);
    out.json[v.name] = {{"mean_success", m}, {"stdev_success", sd}, {"runs", per_seed}};
    out.results.push_back(std::move(r));
  }
  out.markdown = ablation_markdown(out.results, std::string("greedy ") + split_name(split));
  return out;
}

}  // namespace vdst
