#pragma once

// TOML run configuration. Every table and key is optional; unknown keys are
// rejected so typos surface as configuration errors.

#include <filesystem>
#include <set>
#include <string>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "vdst/pipeline.hpp"

namespace vdst {

namespace detail {

inline void check_keys(const toml::table& t, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : t)
    if (!allowed.count(std::string(k.str())))
      throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + std::string(k.str()) + "'");
}

template <typename T>
void read_key(const toml::table& t, const std::string& where, const char* key, T& out) {
  const toml::node* n = t.get(key);
  if (!n) return;
  const std::string name = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!n->is_boolean()) throw ConfigError(name + " must be a boolean");
    out = n->as_boolean()->get();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!n->is_string()) throw ConfigError(name + " must be a string");
    out = n->as_string()->get();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (n->is_integer())
      out = static_cast<T>(n->as_integer()->get());
    else if (n->is_floating_point())
      out = static_cast<T>(n->as_floating_point()->get());
    else
      throw ConfigError(name + " must be a number");
  } else {
    if (!n->is_integer() || n->as_integer()->get() < 0) throw ConfigError(name + " must be a non-negative integer");
    out = static_cast<T>(n->as_integer()->get());
  }
}

inline const toml::table* section(const toml::table& root, const char* name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) throw ConfigError(std::string("config entry '") + name + "' must be a table");
  return n->as_table();
}

}  // namespace detail

inline void apply_toml(PipelineConfig& cfg, const toml::table& root) {
  using detail::read_key;
  detail::check_keys(root, "", {"env", "model", "train", "sl", "rl", "guesser", "eval"});
  if (const auto* t = detail::section(root, "env")) {
    detail::check_keys(*t, "env", {"slots", "min_objects", "max_objects", "categories", "colors", "block_dim", "noise",
                                   "world_seed", "oracle_noise_p"});
    read_key(*t, "env", "slots", cfg.env.slots);
    read_key(*t, "env", "min_objects", cfg.env.min_objects);
    read_key(*t, "env", "max_objects", cfg.env.max_objects);
    read_key(*t, "env", "categories", cfg.env.categories);
    read_key(*t, "env", "colors", cfg.env.colors);
    read_key(*t, "env", "block_dim", cfg.env.block_dim);
    read_key(*t, "env", "noise", cfg.env.noise);
    read_key(*t, "env", "world_seed", cfg.env.world_seed);
    read_key(*t, "env", "oracle_noise_p", cfg.env.oracle_noise_p);
  }
  if (const auto* t = detail::section(root, "model")) {
    detail::check_keys(*t, "model", {"dim", "glimpses", "scale_uoor_by_slots"});
    read_key(*t, "model", "dim", cfg.dim);
    read_key(*t, "model", "glimpses", cfg.glimpses);
    read_key(*t, "model", "scale_uoor_by_slots", cfg.scale_uoor_by_slots);
  }
  if (const auto* t = detail::section(root, "train")) {
    detail::check_keys(*t, "train", {"max_questions", "max_words", "clip_norm", "corpus_size"});
    read_key(*t, "train", "max_questions", cfg.train.max_questions);
    read_key(*t, "train", "max_words", cfg.train.max_words);
    read_key(*t, "train", "clip_norm", cfg.train.clip_norm);
    read_key(*t, "train", "corpus_size", cfg.corpus_size);
  }
  if (const auto* t = detail::section(root, "sl")) {
    detail::check_keys(*t, "sl", {"epochs", "lr", "batch", "optimizer"});
    read_key(*t, "sl", "epochs", cfg.train.sl.epochs);
    read_key(*t, "sl", "lr", cfg.train.sl.learning_rate);
    read_key(*t, "sl", "batch", cfg.train.sl.batch);
    std::string opt = optimizer_name(cfg.train.sl.optimizer);
    read_key(*t, "sl", "optimizer", opt);
    cfg.train.sl.optimizer = parse_optimizer(opt);
  }
  if (const auto* t = detail::section(root, "rl")) {
    detail::check_keys(*t, "rl", {"epochs", "games_per_epoch", "lr", "batch", "optimizer", "baseline_decay"});
    read_key(*t, "rl", "epochs", cfg.train.rl.epochs);
    read_key(*t, "rl", "games_per_epoch", cfg.train.rl.games_per_epoch);
    read_key(*t, "rl", "lr", cfg.train.rl.learning_rate);
    read_key(*t, "rl", "batch", cfg.train.rl.batch);
    read_key(*t, "rl", "baseline_decay", cfg.train.rl.baseline_decay);
    std::string opt = optimizer_name(cfg.train.rl.optimizer);
    read_key(*t, "rl", "optimizer", opt);
    cfg.train.rl.optimizer = parse_optimizer(opt);
  }
  if (const auto* t = detail::section(root, "guesser")) {
    detail::check_keys(*t, "guesser", {"games", "dim", "random_question_rate", "corpus_seed", "epochs", "batch", "lr"});
    read_key(*t, "guesser", "games", cfg.guesser.games);
    read_key(*t, "guesser", "dim", cfg.guesser.dim);
    read_key(*t, "guesser", "random_question_rate", cfg.guesser.random_question_rate);
    read_key(*t, "guesser", "corpus_seed", cfg.guesser.corpus_seed);
    read_key(*t, "guesser", "epochs", cfg.guesser.train.epochs);
    read_key(*t, "guesser", "batch", cfg.guesser.train.batch);
    read_key(*t, "guesser", "lr", cfg.guesser.train.learning_rate);
  }
  if (const auto* t = detail::section(root, "eval")) {
    detail::check_keys(*t, "eval", {"games", "eval_seed"});
    read_key(*t, "eval", "games", cfg.eval_games);
    read_key(*t, "eval", "eval_seed", cfg.eval_seed);
  }
}

inline PipelineConfig parse_config_string(std::string_view text, const std::string& source = "config") {
  PipelineConfig cfg;
  try {
    apply_toml(cfg, toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    throw ConfigError(source + ": " + std::string(e.description()));
  }
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  PipelineConfig cfg;
  try {
    apply_toml(cfg, toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    throw ConfigError(path.string() + ": " + std::string(e.description()));
  }
  return cfg;
}

inline void validate(const PipelineConfig& cfg) {
  cfg.env.validate();
  cfg.train.validate();
  if (cfg.dim < 1 || cfg.glimpses < 1) throw ConfigError("model dim and glimpses must be positive");
  if (cfg.corpus_size < 1) throw ConfigError("corpus_size must be positive");
  if (cfg.eval_games < 1) throw ConfigError("games must be positive");
  if (cfg.guesser.games < 1 || cfg.guesser.dim < 1) throw ConfigError("guesser games and dim must be positive");
  if (!(cfg.guesser.random_question_rate >= 0 && cfg.guesser.random_question_rate <= 1))
    throw ConfigError("guesser.random_question_rate must lie in [0, 1]");
}

}  // namespace vdst
