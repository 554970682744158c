#pragma once

// Success rates per decoding mode and split, dialogue-quality metrics,
// strategy analysis, ablation tables and belief traces.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdst/metrics.hpp"
#include "vdst/training.hpp"

namespace vdst {

enum class Split { new_object, new_game };

inline const char* split_name(Split s) { return s == Split::new_object ? "new_object" : "new_game"; }

inline Split parse_split(const std::string& s) {
  if (s == "new_object") return Split::new_object;
  if (s == "new_game") return Split::new_game;
  throw ConfigError("unknown split '" + s + "'");
}

// new_object: training scenes (regenerated from the corpus seed) with a
// different target; new_game: scenes from seeds never used for training.
inline std::vector<Scene> eval_scenes(const World& world, Split split, std::size_t n, std::uint64_t corpus_seed,
                                      std::size_t corpus_size, std::uint64_t eval_seed) {
  if (n == 0) throw std::invalid_argument("evaluation needs at least one game");
  std::vector<Scene> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (split == Split::new_object) {
      if (corpus_size == 0) throw std::invalid_argument("new_object split needs a training corpus");
      const Scene base = world.generate(train_scene_seed(corpus_seed, i % corpus_size));
      out.push_back(world.retarget(base, mix_seed(eval_seed, i)));
    } else {
      out.push_back(world.generate(new_game_scene_seed(eval_seed, i)));
    }
  }
  return out;
}

inline double chance_rate(std::span<const Scene> scenes) {
  if (scenes.empty()) return 0.0;
  double s = 0;
  for (const Scene& sc : scenes) s += 1.0 / static_cast<double>(sc.real_count());
  return s / static_cast<double>(scenes.size());
}

struct SuccessResult {
  double rate = 0;
  double half_width = 0;
  std::size_t games = 0;
  std::vector<GameRecord> records;
};

inline SuccessResult eval_success(const VdstParams& params, const GuessFn& guesser, const World& world,
                                  std::span<const Scene> scenes, const GameOptions& opt, std::uint64_t seed) {
  if (scenes.empty()) throw std::invalid_argument("eval_success: n_games must be positive");
  SuccessResult r;
  Rng rng = make_rng(seed, 0xE7A1);
  double hits = 0;
  for (const Scene& s : scenes) {
    r.records.push_back(rollout(params, guesser, world, s, opt, &rng));
    hits += r.records.back().reward;
  }
  r.games = scenes.size();
  r.rate = hits / static_cast<double>(r.games);
  r.half_width = proportion_half_width(r.rate, r.games);
  return r;
}

inline std::vector<TokenDialogue> dialogues_of(const std::vector<GameRecord>& records) {
  std::vector<TokenDialogue> out;
  for (const auto& r : records) out.push_back(r.questions());
  return out;
}

inline double strategy_adherence(const std::vector<GameRecord>& records, const Vocabulary& vocab) {
  if (records.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& rec : records) {
    std::vector<QuestionLabel> labels;
    std::vector<Answer> answers;
    for (const auto& r : rec.rounds) {
      labels.push_back(label_question(r.tokens, vocab));
      answers.push_back(r.answer);
    }
    hits += adheres_to_strategy(labels, answers);
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

// Reference questioners sharing the game loop with the model.
inline GameRecord random_questioner_game(const World& world, const Scene& scene, const GuessFn& guesser,
                                         std::size_t max_questions, std::size_t max_words, Rng& rng) {
  std::vector<int> emittable;
  for (std::size_t i = 0; i < world.vocab().size(); ++i)
    if (world.vocab().emittable(static_cast<int>(i))) emittable.push_back(static_cast<int>(i));
  std::uniform_int_distribution<std::size_t> pick(0, emittable.size() - 1);
  GameRecord rec;
  rec.scene = scene.spec;
  rec.mode = "random";
  rec.seed = scene.spec.seed;
  for (std::size_t q = 0; q < max_questions; ++q) {
    DialogueRound r;
    while (r.tokens.size() < max_words) {
      r.tokens.push_back(emittable[pick(rng)]);
      if (r.tokens.back() == kEnd) break;
    }
    r.answer = oracle_answer(world, scene.spec, r.tokens);
    rec.rounds.push_back(std::move(r));
  }
  rec.guess_index = guesser(scene, rec.qa_pairs());
  rec.reward = rec.guess_index == scene.spec.target_index;
  return rec;
}

inline GameRecord scripted_questioner_game(const World& world, const Scene& scene, const GuessFn& guesser,
                                           std::size_t max_questions) {
  GameRecord rec;
  rec.scene = scene.spec;
  rec.mode = "scripted";
  rec.seed = scene.spec.seed;
  for (const auto& sr : scripted_dialogue(world, scene.spec, max_questions).rounds) {
    DialogueRound r;
    r.tokens = sr.tokens;
    r.answer = sr.answer;
    rec.rounds.push_back(std::move(r));
  }
  rec.guess_index = guesser(scene, rec.qa_pairs());
  rec.reward = rec.guess_index == scene.spec.target_index;
  return rec;
}

// --- reports -----------------------------------------------------------------------

struct EvalSettings {
  std::size_t games = 500;
  std::size_t max_questions = 5;
  std::size_t max_words = kDefaultMaxWords;
  std::vector<std::string> modes{"sampling", "greedy", "beam20", "beam5"};
  std::vector<Split> splits{Split::new_object, Split::new_game};
  std::uint64_t corpus_seed = 1;
  std::size_t corpus_size = 2000;
  std::uint64_t eval_seed = 12345;
  bool traces = false;
};

inline std::string fingerprint(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string params_fingerprint(const VdstParams& p) {
  std::string bytes = nlohmann::json(p.config).dump();
  for (const auto& [name, t] : p.named()) {
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(t->data().data()), t->size() * sizeof(double));
  }
  return fingerprint(bytes);
}

inline nlohmann::json belief_trace(const GameRecord& rec, const Vocabulary& vocab) {
  nlohmann::json rounds = nlohmann::json::array();
  rounds.push_back({{"round", 0}, {"pi", rec.initial_belief}});
  for (std::size_t i = 0; i < rec.rounds.size(); ++i) {
    const auto& r = rec.rounds[i];
    rounds.push_back({{"round", i + 1},
                      {"question", vocab.decode(r.tokens)},
                      {"tokens", r.tokens},
                      {"answer", answer_name(r.answer)},
                      {"pi", r.belief}});
  }
  return {{"seed", rec.seed},
          {"target_index", rec.scene.target_index},
          {"guess_index", rec.guess_index},
          {"success", rec.reward == 1.0},
          {"rounds", std::move(rounds)}};
}

inline nlohmann::json eval_report(const VdstParams& params, const GuessFn& guesser, const World& world,
                                  const EvalSettings& s) {
  nlohmann::json success = nlohmann::json::object();
  nlohmann::json traces = nlohmann::json::array();
  std::vector<GameRecord> greedy_records;
  nlohmann::json chance = nlohmann::json::object();
  for (Split split : s.splits) {
    const auto scenes = eval_scenes(world, split, s.games, s.corpus_seed, s.corpus_size, s.eval_seed);
    chance[split_name(split)] = chance_rate(scenes);
    for (const std::string& m : s.modes) {
      const DecodeMode mode = DecodeMode::parse(m);
      SuccessResult r = eval_success(params, guesser, world, scenes, {mode, s.max_questions, s.max_words}, s.eval_seed);
      success[mode.name()][split_name(split)] = {{"rate", r.rate}, {"half_width", r.half_width}, {"games", r.games}};
      if (mode.kind == DecodeMode::Kind::greedy) {
        greedy_records.insert(greedy_records.end(), r.records.begin(), r.records.end());
        if (s.traces)
          for (const auto& rec : r.records) traces.push_back(belief_trace(rec, world.vocab()));
      }
    }
  }
  nlohmann::json report = {{"success_rate", success}, {"chance_rate", chance}};
  if (!greedy_records.empty()) {
    const auto dialogues = dialogues_of(greedy_records);
    report["repeated_question_rate"] = repeated_question_rate(dialogues);
    report["lexical_diversity"] = lexical_diversity(dialogues);
    report["strategy_adherence_rate"] = strategy_adherence(greedy_records, world.vocab());
    report["metrics_decode_mode"] = "greedy";
  }
  nlohmann::json settings = {{"games", s.games},           {"max_questions", s.max_questions},
                             {"max_words", s.max_words},   {"modes", s.modes},
                             {"corpus_seed", s.corpus_seed}, {"corpus_size", s.corpus_size},
                             {"eval_seed", s.eval_seed},   {"env", world.config()}};
  report["settings"] = settings;
  report["config_fingerprint"] = fingerprint(settings.dump() + params_fingerprint(params));
  report["model"] = params.config;
  if (s.traces) report["traces"] = std::move(traces);
  return report;
}

// --- ablations ----------------------------------------------------------------------

struct Variant {
  std::string name;
  AblationConfig ablation;
};

inline std::vector<Variant> standard_variants() {
  return {{"full", {}}, {"-UoOR&CMM", {true, false}}, {"-OsDA", {false, true}}};
}

struct VariantResult {
  std::string name;
  std::vector<double> success;   // one per seed
  std::vector<double> repeated;  // one per seed
};

inline std::pair<double, double> mean_stdev(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  const double sd = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) : 0.0;
  return {m, sd};
}

inline std::string ablation_markdown(const std::vector<VariantResult>& results, const std::string& column) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| Model | " << column << " success (%) | repeated questions (%) | seeds |\n";
  os << "|---|---|---|---|\n";
  for (const auto& r : results) {
    const auto [m, sd] = mean_stdev(r.success);
    const auto [rm, rsd] = mean_stdev(r.repeated);
    os << "| " << r.name << " | " << 100 * m << " ± " << 100 * sd << " | " << 100 * rm << " ± " << 100 * rsd << " | "
       << r.success.size() << " |\n";
  }
  return os.str();
}

}  // namespace vdst
