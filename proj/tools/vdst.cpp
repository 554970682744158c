#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vdst/checkpoint.hpp"
#include "vdst/config.hpp"
#include "vdst/evaluation.hpp"
#include "vdst/pipeline.hpp"
#include "vdst/service.hpp"

namespace {

using namespace vdst;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Args {
  std::string config;
  std::uint64_t seed = 1;
  std::string out, log, model, guesser, init, traces, json_out;
  std::optional<std::size_t> epochs, games, batch, games_per_epoch, max_questions, seeds, monitor_games, count;
  std::size_t checkpoint_every = 0;
  std::optional<double> lr;
  std::string modes = "sampling,greedy,beam20,beam5";
  std::string splits = "new_object,new_game";
  std::string split = "new_game";
  std::string ablate_split = "new_object";
  std::string mode = "greedy";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t ttl_minutes = 30;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

PipelineConfig base_config(const Args& a) {
  PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : load_config(a.config);
  if (a.max_questions) cfg.train.max_questions = *a.max_questions;
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

struct LoadedModel {
  VdstParams params;
  nlohmann::json extra;
  EnvConfig env;
};

LoadedModel load_qgen(const Args& a, const PipelineConfig& cfg) {
  if (a.model.empty()) throw ConfigError("--model is required");
  nlohmann::json extra;
  VdstParams p = load_model(a.model, &extra);
  EnvConfig env = cfg.env;
  if (extra.is_object() && extra.contains("env")) env = extra["env"].get<EnvConfig>();
  return {std::move(p), std::move(extra), env};
}

std::uint64_t corpus_seed_of(const nlohmann::json& extra, std::uint64_t fallback) {
  return extra.is_object() ? extra.value("corpus_seed", fallback) : fallback;
}
std::size_t corpus_size_of(const nlohmann::json& extra, std::size_t fallback) {
  return extra.is_object() ? extra.value("corpus_size", fallback) : fallback;
}

std::optional<GuesserParams> maybe_guesser(const Args& a) {
  if (a.guesser.empty()) return std::nullopt;
  return load_guesser(a.guesser);
}

GuesserParams require_guesser(const Args& a) {
  if (a.guesser.empty()) throw ConfigError("--guesser is required");
  return load_guesser(a.guesser);
}

nlohmann::json model_extra(const PipelineConfig& cfg, std::uint64_t seed, const char* phase) {
  return {{"env", cfg.env},         {"corpus_seed", seed},       {"corpus_size", cfg.corpus_size},
          {"phase", phase},         {"train", cfg.train},        {"seed", seed}};
}

int cmd_scenes(const Args& a) {
  PipelineConfig cfg = base_config(a);
  validate(cfg);
  const std::size_t n = a.count.value_or(cfg.corpus_size);
  if (n == 0) throw ConfigError("--count must be positive");
  const Split split = a.split == "train" ? Split::new_object : parse_split(a.split);
  const World world(cfg.env);
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  std::ostream& os = a.out.empty() ? std::cout : file;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = split == Split::new_game ? new_game_scene_seed(a.seed, i) : train_scene_seed(a.seed, i);
    os << scene_to_json(world.generate(s).spec, &world).dump() << '\n';
  }
  return 0;
}

int cmd_train_guesser(const Args& a) {
  PipelineConfig cfg = base_config(a);
  if (a.epochs) cfg.guesser.train.epochs = *a.epochs;
  if (a.games) cfg.guesser.games = *a.games;
  if (a.lr) cfg.guesser.train.learning_rate = *a.lr;
  if (a.batch) cfg.guesser.train.batch = *a.batch;
  validate(cfg);
  if (a.out.empty()) throw ConfigError("--out is required");
  const World world(cfg.env);
  std::ofstream log;
  if (!a.log.empty()) {
    log = open_out(a.log);
    write_log_header(log);
  }
  GuesserParams g = train_default_guesser(world, cfg.guesser, cfg.train.max_questions, a.seed, [&](const GuesserEpoch& e) {
    std::cerr << "guesser epoch " << e.epoch << " loss " << e.loss << " train_acc " << e.train_accuracy << '\n';
    if (log.is_open()) write_log_row(log, {e.epoch, e.loss, e.train_accuracy, {}, {}});
  });
  GuesserSetup held = cfg.guesser;
  held.games = 500;
  held.corpus_seed = cfg.guesser.corpus_seed ^ 0x5EED;
  const auto heldout = guesser_corpus(world, held, cfg.train.max_questions, a.seed + 1);
  const double acc = guesser_accuracy(g, heldout);
  save_guesser(a.out, g, {{"env", cfg.env}, {"seed", a.seed}, {"heldout_accuracy", acc}});
  std::cout << "held-out accuracy " << acc << '\n';
  return 0;
}

std::vector<Scene> monitor_scenes_of(const World& world, const PipelineConfig& cfg, const Args& a) {
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < a.monitor_games.value_or(100); ++i)
    scenes.push_back(world.generate(new_game_scene_seed(cfg.eval_seed, i)));
  return scenes;
}

// Writes <out>.epochN every --checkpoint-every epochs and at the last epoch, and
// keeps <out>.best at the highest monitored greedy success seen at those epochs.
class PeriodicCheckpoints {
 public:
  PeriodicCheckpoints(const Args& a, std::size_t last_epoch, nlohmann::json extra)
      : out_(a.out), every_(a.checkpoint_every), last_(last_epoch), extra_(std::move(extra)) {}

  bool due(std::size_t epoch) const { return every_ > 0 && (epoch % every_ == 0 || epoch == last_); }

  void save(const VdstParams& p, std::size_t epoch, std::optional<double> monitored) {
    nlohmann::json extra = extra_;
    extra["epoch"] = epoch;
    save_model(out_ + ".epoch" + std::to_string(epoch), p, extra);
    if (monitored && (!best_ || *monitored > *best_)) {
      best_ = monitored;
      extra["monitor_greedy_success"] = *monitored;
      save_model(out_ + ".best", p, extra);
      std::cerr << "best checkpoint at epoch " << epoch << " (greedy success " << *monitored << ")\n";
    }
  }

 private:
  std::string out_;
  std::size_t every_, last_;
  nlohmann::json extra_;
  std::optional<double> best_;
};

void apply_sl_flags(const Args& a, PipelineConfig& cfg) {
  if (a.epochs) cfg.train.sl.epochs = *a.epochs;
  if (a.games) cfg.corpus_size = *a.games;
  if (a.lr) cfg.train.sl.learning_rate = *a.lr;
  if (a.batch) cfg.train.sl.batch = *a.batch;
}

int cmd_train_sl(const Args& a) {
  PipelineConfig cfg = base_config(a);
  apply_sl_flags(a, cfg);
  validate(cfg);
  if (a.out.empty()) throw ConfigError("--out is required");
  const World world(cfg.env);
  const auto guesser = maybe_guesser(a);
  std::optional<GuessFn> gf;
  if (guesser) gf = guesser_fn(*guesser);
  std::vector<Scene> monitor_scenes;
  if (gf) monitor_scenes = monitor_scenes_of(world, cfg, a);
  PeriodicCheckpoints checkpoints(a, cfg.train.sl.epochs, model_extra(cfg, a.seed, "sl"));
  std::ofstream log;
  if (!a.log.empty()) {
    log = open_out(a.log);
    write_log_header(log);
  }
  VdstParams p(cfg.model(world));
  p.initialize(a.seed);
  const SlCorpus corpus = build_sl_corpus(world, cfg.corpus_size, a.seed, cfg.train.max_questions);
  sl_train(
      p, world, corpus, cfg.train, a.seed,
      [&](const EpochLog& e) {
        std::cerr << "sl epoch " << e.epoch << " loss " << e.loss;
        if (e.success_rate) std::cerr << " greedy_success " << *e.success_rate << " repeats " << *e.repeated_q_rate;
        std::cerr << '\n';
        if (log.is_open()) write_log_row(log, e);
        if (checkpoints.due(e.epoch)) checkpoints.save(p, e.epoch, e.success_rate);
      },
      SlMonitor{gf ? &*gf : nullptr, monitor_scenes});
  save_model(a.out, p, model_extra(cfg, a.seed, "sl"));
  return 0;
}

int cmd_train_rl(const Args& a) {
  PipelineConfig cfg = base_config(a);
  if (a.epochs) cfg.train.rl.epochs = *a.epochs;
  if (a.games_per_epoch) cfg.train.rl.games_per_epoch = *a.games_per_epoch;
  if (a.lr) cfg.train.rl.learning_rate = *a.lr;
  if (a.batch) cfg.train.rl.batch = *a.batch;
  if (a.init.empty()) throw ConfigError("--init (supervised checkpoint) is required");
  if (a.out.empty()) throw ConfigError("--out is required");
  nlohmann::json extra;
  VdstParams p = load_model(a.init, &extra);
  if (extra.is_object() && extra.contains("env")) cfg.env = extra["env"].get<EnvConfig>();
  const std::uint64_t corpus_seed = corpus_seed_of(extra, a.seed);
  cfg.corpus_size = a.games.value_or(corpus_size_of(extra, cfg.corpus_size));
  validate(cfg);
  const World world(cfg.env);
  const GuesserParams g = require_guesser(a);
  const GuessFn gf = guesser_fn(g);
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < cfg.corpus_size; ++i) scenes.push_back(world.generate(train_scene_seed(corpus_seed, i)));
  std::ofstream log;
  if (!a.log.empty()) {
    log = open_out(a.log);
    write_log_header(log);
  }
  nlohmann::json out_extra = model_extra(cfg, corpus_seed, "rl");
  out_extra["rl_seed"] = a.seed;
  const std::vector<Scene> monitor_scenes = monitor_scenes_of(world, cfg, a);
  PeriodicCheckpoints checkpoints(a, cfg.train.rl.epochs, out_extra);
  rl_train(p, gf, world, scenes, cfg.train, a.seed, [&](const EpochLog& e) {
    std::cerr << "rl epoch " << e.epoch << " surrogate " << e.loss << " success " << *e.success_rate << " repeats "
              << *e.repeated_q_rate << '\n';
    if (e.zero_reward_variance)
      std::cerr << "warning: reward variance is zero in epoch " << e.epoch << "; the policy gradient carries no signal\n";
    if (log.is_open()) write_log_row(log, e);
    if (checkpoints.due(e.epoch)) {
      const PlaySummary m = greedy_summary(p, gf, world, monitor_scenes, cfg.train.max_questions, cfg.train.max_words);
      std::cerr << "rl epoch " << e.epoch << " monitor greedy_success " << m.success_rate << '\n';
      checkpoints.save(p, e.epoch, m.success_rate);
    }
  });
  save_model(a.out, p, out_extra);
  return 0;
}

int cmd_eval(const Args& a) {
  PipelineConfig cfg = base_config(a);
  if (a.games) cfg.eval_games = *a.games;
  if (cfg.eval_games == 0) throw ConfigError("--games must be positive");
  EvalSettings s;
  s.modes = split_list(a.modes);
  if (s.modes.empty()) throw ConfigError("--modes is empty");
  for (const auto& m : s.modes) {
    try {
      DecodeMode::parse(m);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  s.splits.clear();
  for (const auto& sp : split_list(a.splits)) s.splits.push_back(parse_split(sp));
  if (s.splits.empty()) throw ConfigError("--splits is empty");
  validate(cfg);
  const LoadedModel m = load_qgen(a, cfg);
  const World world(m.env);
  const GuesserParams g = require_guesser(a);
  s.games = cfg.eval_games;
  s.max_questions = cfg.train.max_questions;
  s.max_words = cfg.train.max_words;
  s.corpus_seed = corpus_seed_of(m.extra, a.seed);
  s.corpus_size = corpus_size_of(m.extra, cfg.corpus_size);
  s.eval_seed = a.seed;
  s.traces = !a.traces.empty();
  nlohmann::json report = eval_report(m.params, guesser_fn(g), world, s);
  if (s.traces) {
    std::ofstream tr = open_out(a.traces);
    for (const auto& t : report["traces"]) tr << t.dump() << '\n';
    report.erase("traces");
  }
  const std::string text = report.dump(2);
  if (a.out.empty()) {
    std::cout << text << '\n';
  } else {
    open_out(a.out) << text << '\n';
  }
  return 0;
}

int cmd_trace(const Args& a) {
  PipelineConfig cfg = base_config(a);
  const std::size_t n = a.games.value_or(10);
  if (n == 0) throw ConfigError("--games must be positive");
  DecodeMode mode;
  try {
    mode = DecodeMode::parse(a.mode);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const Split split = parse_split(a.split);
  validate(cfg);
  const LoadedModel m = load_qgen(a, cfg);
  const World world(m.env);
  const GuesserParams g = require_guesser(a);
  const auto scenes = eval_scenes(world, split, n, corpus_seed_of(m.extra, a.seed),
                                  corpus_size_of(m.extra, cfg.corpus_size), a.seed);
  const SuccessResult r = eval_success(m.params, guesser_fn(g), world, scenes,
                                       {mode, cfg.train.max_questions, cfg.train.max_words}, a.seed);
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  std::ostream& os = a.out.empty() ? std::cout : file;
  for (const auto& rec : r.records) os << belief_trace(rec, world.vocab()).dump() << '\n';
  return 0;
}

int cmd_ablate(const Args& a) {
  PipelineConfig cfg = base_config(a);
  apply_sl_flags(a, cfg);
  if (a.games_per_epoch) cfg.train.rl.games_per_epoch = *a.games_per_epoch;
  const std::size_t n_seeds = a.seeds.value_or(5);
  if (n_seeds == 0) throw ConfigError("--seeds must be positive");
  const Split split = parse_split(a.ablate_split);
  validate(cfg);
  const World world(cfg.env);
  GuesserParams g = a.guesser.empty() ? train_default_guesser(world, cfg.guesser, cfg.train.max_questions, a.seed)
                                      : load_guesser(a.guesser);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(a.seed + i);
  const AblationOutcome out = ablation_suite(world, guesser_fn(g), cfg, seeds, split, standard_variants(),
                                             [](const char* phase, const EpochLog& e) {
                                               if (e.epoch % 10 == 0) std::cerr << phase << " epoch " << e.epoch << '\n';
                                             });
  std::cout << out.markdown;
  if (!a.out.empty()) open_out(a.out) << out.markdown;
  if (!a.json_out.empty()) open_out(a.json_out) << out.json.dump(2) << '\n';
  return 0;
}

std::string ask_line(const std::string& prompt) {
  std::cout << prompt << std::flush;
  std::string line;
  if (!std::getline(std::cin, line)) throw std::runtime_error("input closed");
  return line;
}

void print_pi(const nlohmann::json& pi) {
  std::cout << "  belief:";
  for (std::size_t i = 0; i < pi.size(); ++i) std::cout << ' ' << i << '=' << std::fixed << std::setprecision(3) << pi[i].get<double>();
  std::cout << '\n';
}

int cmd_play(const Args& a) {
  PipelineConfig cfg = base_config(a);
  validate(cfg);
  const LoadedModel m = load_qgen(a, cfg);
  const World world(m.env);
  const auto g = maybe_guesser(a);
  ServiceOptions opt;
  opt.seed = a.seed;
  opt.default_max_questions = cfg.train.max_questions;
  opt.max_words = cfg.train.max_words;
  GameService service(world, m.params, g ? &*g : nullptr, opt);
  HttpResult r = service.handle("POST", "/games", nlohmann::json{{"seed", a.seed}}.dump());
  const std::string id = r.body["session_id"];
  std::cout << "Pick one of these objects as the secret target:\n";
  const auto& objs = r.body["scene"]["objects"];
  for (std::size_t i = 0; i < objs.size(); ++i)
    std::cout << "  [" << i << "] " << objs[i]["size"].get<std::string>() << ' '
              << objs[i]["color_name"].get<std::string>() << ' ' << objs[i]["category_name"].get<std::string>()
              << " (" << objs[i]["quadrant"].get<std::string>() << ")\n";
  for (;;) {
    r = service.handle("GET", "/games/" + id + "/question", "");
    if (r.status == 409) break;
    std::cout << "Q" << r.body["round"].get<std::size_t>() << ": " << r.body["question"].get<std::string>() << '\n';
    for (;;) {
      const std::string ans = ask_line("  answer (yes/no/na): ");
      r = service.handle("POST", "/games/" + id + "/answer", nlohmann::json{{"answer", ans}}.dump());
      if (r.status == 200) break;
      std::cout << "  " << r.body["error"].get<std::string>() << '\n';
    }
    print_pi(r.body["pi"]);
  }
  r = service.handle("POST", "/games/" + id + "/guess", "");
  const std::size_t guess_index = r.body["guess_index"];
  std::cout << "My guess: object " << guess_index << '\n';
  for (;;) {
    const std::string t = ask_line("Which object was it? ");
    std::size_t idx = 0;
    try {
      idx = std::stoul(t);
    } catch (const std::exception&) {
      continue;
    }
    r = service.handle("POST", "/games/" + id + "/reveal", nlohmann::json{{"target_index", idx}}.dump());
    if (r.status == 200) break;
    std::cout << r.body["error"].get<std::string>() << '\n';
  }
  std::cout << (r.body["correct"].get<bool>() ? "Found it.\n" : "Missed.\n");
  return 0;
}

int cmd_serve(const Args& a) {
  PipelineConfig cfg = base_config(a);
  validate(cfg);
  const LoadedModel m = load_qgen(a, cfg);
  const World world(m.env);
  const auto g = maybe_guesser(a);
  ServiceOptions opt;
  opt.seed = a.seed;
  opt.default_max_questions = cfg.train.max_questions;
  opt.max_words = cfg.train.max_words;
  opt.ttl = std::chrono::minutes(a.ttl_minutes);
  GameService service(world, m.params, g ? &*g : nullptr, opt);
  httplib::Server server;
  std::cerr << "listening on http://" << a.host << ':' << a.port << '\n';
  if (!serve(service, server, a.host, a.port)) throw std::runtime_error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual dialogue state tracking question generator"};
  app.require_subcommand(1);
  Args a;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", a.config, "TOML configuration file");
    c->add_option("--seed", a.seed, "Random seed");
    c->add_option("--max-questions", a.max_questions, "Questions per game");
    return c;
  };
  auto model_opts = [&](CLI::App* c, bool guesser_required) {
    c->add_option("--model", a.model, "Question generator checkpoint")->required();
    auto* g = c->add_option("--guesser", a.guesser, "Guesser checkpoint");
    if (guesser_required) g->required();
  };

  auto* scenes = common(app.add_subcommand("scenes", "Write a JSONL scene corpus"));
  scenes->add_option("--count", a.count, "Number of scenes");
  scenes->add_option("--split", a.split, "train or new_game")->check(CLI::IsMember({"train", "new_game"}));
  scenes->add_option("--out", a.out, "Output file (default stdout)");

  auto* tg = common(app.add_subcommand("train-guesser", "Train the guesser on scripted dialogues"));
  tg->add_option("--out", a.out, "Checkpoint path")->required();
  tg->add_option("--epochs", a.epochs);
  tg->add_option("--games", a.games, "Training dialogues");
  tg->add_option("--lr", a.lr);
  tg->add_option("--batch", a.batch);
  tg->add_option("--log", a.log, "CSV training log");

  auto* sl = common(app.add_subcommand("train-sl", "Supervised training on scripted dialogues"));
  sl->add_option("--out", a.out, "Checkpoint path")->required();
  sl->add_option("--epochs", a.epochs);
  sl->add_option("--games", a.games, "Corpus size");
  sl->add_option("--lr", a.lr);
  sl->add_option("--batch", a.batch);
  sl->add_option("--log", a.log, "CSV training log");
  sl->add_option("--guesser", a.guesser, "Guesser checkpoint for greedy self-play monitoring");
  sl->add_option("--monitor-games", a.monitor_games);
  sl->add_option("--checkpoint-every", a.checkpoint_every, "Also save <out>.epochN every N epochs and <out>.best");

  auto* rl = common(app.add_subcommand("train-rl", "Policy-gradient fine-tuning in self-play"));
  rl->add_option("--init", a.init, "Supervised checkpoint")->required();
  rl->add_option("--guesser", a.guesser, "Guesser checkpoint")->required();
  rl->add_option("--out", a.out, "Checkpoint path")->required();
  rl->add_option("--epochs", a.epochs);
  rl->add_option("--games", a.games, "Training scene pool size");
  rl->add_option("--games-per-epoch", a.games_per_epoch);
  rl->add_option("--lr", a.lr);
  rl->add_option("--batch", a.batch);
  rl->add_option("--log", a.log, "CSV training log");
  rl->add_option("--monitor-games", a.monitor_games, "new_game scenes scored at checkpoint epochs");
  rl->add_option("--checkpoint-every", a.checkpoint_every, "Also save <out>.epochN every N epochs and <out>.best");

  auto* ev = common(app.add_subcommand("eval", "Evaluate success rates and dialogue metrics"));
  model_opts(ev, true);
  ev->add_option("--games", a.games, "Games per split");
  ev->add_option("--modes", a.modes, "Comma-separated decoding modes");
  ev->add_option("--splits", a.splits, "Comma-separated splits");
  ev->add_option("--out", a.out, "EvalReport JSON (default stdout)");
  ev->add_option("--traces", a.traces, "Belief traces JSONL (greedy games)");

  auto* ab = common(app.add_subcommand("ablate", "Train and compare the ablated variants"));
  ab->add_option("--seeds", a.seeds, "Number of seeds (from --seed upward)");
  ab->add_option("--guesser", a.guesser, "Guesser checkpoint (trained when absent)");
  ab->add_option("--split", a.ablate_split)->check(CLI::IsMember({"new_object", "new_game"}));
  ab->add_option("--epochs", a.epochs, "Supervised epochs");
  ab->add_option("--games", a.games, "Corpus size");
  ab->add_option("--games-per-epoch", a.games_per_epoch);
  ab->add_option("--out", a.out, "Markdown table");
  ab->add_option("--json", a.json_out, "Per-seed results JSON");

  auto* pl = common(app.add_subcommand("play", "Play the oracle in the terminal"));
  model_opts(pl, false);

  auto* tr = common(app.add_subcommand("trace", "Write per-round belief traces"));
  model_opts(tr, true);
  tr->add_option("--games", a.games);
  tr->add_option("--split", a.split)->check(CLI::IsMember({"new_object", "new_game"}));
  tr->add_option("--mode", a.mode, "Decoding mode");
  tr->add_option("--out", a.out, "JSONL output (default stdout)");

  auto* sv = common(app.add_subcommand("serve", "Serve interactive games over HTTP"));
  model_opts(sv, false);
  sv->add_option("--host", a.host);
  sv->add_option("--port", a.port);
  sv->add_option("--ttl-minutes", a.ttl_minutes);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }

  try {
    if (scenes->parsed()) return cmd_scenes(a);
    if (tg->parsed()) return cmd_train_guesser(a);
    if (sl->parsed()) return cmd_train_sl(a);
    if (rl->parsed()) return cmd_train_rl(a);
    if (ev->parsed()) return cmd_eval(a);
    if (ab->parsed()) return cmd_ablate(a);
    if (pl->parsed()) return cmd_play(a);
    if (tr->parsed()) return cmd_trace(a);
    if (sv->parsed()) return cmd_serve(a);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
