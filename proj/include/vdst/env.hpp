#pragma once

// Synthetic guessing-game environment: a seeded world of attribute embeddings,
// scene generation in [-1, 1] image coordinates, the templated question
// grammar, a rule-based oracle, and the scripted questioner that produces gold
// dialogues.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdst/rng.hpp"
#include "vdst/tensor.hpp"
#include "vdst/vocab.hpp"

namespace vdst {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EnvConfig {
  std::size_t slots = 8;  // m: fixed object capacity of the model
  std::size_t min_objects = 4;
  std::size_t max_objects = 8;
  std::size_t categories = 6;
  std::size_t colors = 4;
  std::size_t block_dim = 8;  // per-attribute static feature block
  double noise = 0.1;
  std::uint64_t world_seed = 7;
  double oracle_noise_p = 0.0;

  std::size_t static_dim() const { return 3 * block_dim; }
  std::size_t feature_dim() const { return static_dim() + 8; }
  std::size_t supercategories() const { return (categories + 2) / 3; }

  void validate() const {
    if (min_objects < 2) throw ConfigError("min_objects must be at least 2");
    if (min_objects > max_objects) throw ConfigError("object-count range is empty");
    if (max_objects > slots) throw ConfigError("max_objects exceeds slot count");
    if (categories < 1 || categories > kCategoryWords.size()) throw ConfigError("categories out of range");
    if (colors < 1 || colors > kColorWords.size()) throw ConfigError("colors out of range");
    if (block_dim < 1) throw ConfigError("block_dim must be positive");
    if (!(noise >= 0)) throw ConfigError("noise must be non-negative");
    if (!(oracle_noise_p >= 0 && oracle_noise_p <= 1)) throw ConfigError("oracle_noise_p must lie in [0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = {{"slots", c.slots},         {"min_objects", c.min_objects}, {"max_objects", c.max_objects},
       {"categories", c.categories}, {"colors", c.colors},         {"block_dim", c.block_dim},
       {"noise", c.noise},         {"world_seed", c.world_seed},   {"oracle_noise_p", c.oracle_noise_p}};
}
inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  j.at("slots").get_to(c.slots);
  j.at("min_objects").get_to(c.min_objects);
  j.at("max_objects").get_to(c.max_objects);
  j.at("categories").get_to(c.categories);
  j.at("colors").get_to(c.colors);
  j.at("block_dim").get_to(c.block_dim);
  j.at("noise").get_to(c.noise);
  j.at("world_seed").get_to(c.world_seed);
  c.oracle_noise_p = j.value("oracle_noise_p", 0.0);
}

enum class Quadrant { tl = 0, tr = 1, bl = 2, br = 3 };
enum class SizeClass { small = 0, big = 1 };
enum class Answer { yes = 0, no = 1, na = 2 };

inline int answer_token(Answer a) { return kYes + static_cast<int>(a); }
inline const char* answer_name(Answer a) {
  switch (a) {
    case Answer::yes: return "yes";
    case Answer::no: return "no";
    case Answer::na: return "na";
  }
  return "na";
}
inline Answer parse_answer(std::string_view s) {
  if (s == "yes") return Answer::yes;
  if (s == "no") return Answer::no;
  if (s == "na") return Answer::na;
  throw std::invalid_argument("answer must be yes, no or na");
}

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double x_center() const { return 0.5 * (x_min + x_max); }
  double y_center() const { return 0.5 * (y_min + y_max); }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  // y grows downwards, so "top" means y < 0.
  Quadrant quadrant() const {
    const bool left = x_center() < 0, top = y_center() < 0;
    if (top) return left ? Quadrant::tl : Quadrant::tr;
    return left ? Quadrant::bl : Quadrant::br;
  }
  // [x_min, y_min, x_max, y_max, x_center, y_center, w_box, h_box]
  std::array<double, 8> spatial() const {
    return {x_min, y_min, x_max, y_max, x_center(), y_center(), width(), height()};
  }
};

// Small/big boundary as a fraction of one quadrant's area (a quadrant is 1 x 1).
inline constexpr double kSizeThreshold = 0.25;

struct SceneObject {
  int category = 0;
  int color = 0;
  Quadrant quadrant = Quadrant::tl;
  SizeClass size = SizeClass::small;
  Box box;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  std::size_t target_index = 0;
  std::uint64_t seed = 0;
};

// A scene ready for the model: padded feature matrix (slots x feature_dim) and
// a mask with 1 for real objects, 0 for padding.
struct Scene {
  SceneSpec spec;
  Tensor features;
  std::vector<double> real_mask;
  std::size_t real_count() const { return spec.objects.size(); }
};

// Seed-derived world: attribute embeddings and the category taxonomy.
class World {
 public:
  explicit World(EnvConfig config) : config_(std::move(config)) {
    config_.validate();
    vocab_ = Vocabulary::for_world(config_.categories, config_.supercategories(), config_.colors);
    Rng rng = make_rng(config_.world_seed, 0xC0FFEE);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto blocks = [&](std::size_t n) {
      std::vector<std::vector<double>> b(n, std::vector<double>(config_.block_dim));
      for (auto& row : b)
        for (double& x : row) x = normal(rng);
      return b;
    };
    category_blocks_ = blocks(config_.categories);
    color_blocks_ = blocks(config_.colors);
    size_blocks_ = blocks(2);
    // Taxonomy: shuffled categories, consecutive groups of three share a supercategory.
    std::vector<int> order(config_.categories);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::shuffle(order.begin(), order.end(), rng);
    supercategory_.assign(config_.categories, 0);
    for (std::size_t i = 0; i < order.size(); ++i) supercategory_[static_cast<std::size_t>(order[i])] = static_cast<int>(i / 3);
  }

  const EnvConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  int supercategory_of(int category) const { return supercategory_.at(static_cast<std::size_t>(category)); }

  // Deterministic per seed. Target drawn uniformly among real objects.
  Scene generate(std::uint64_t seed) const {
    Rng rng = make_rng(seed, 0x5CE7E);
    std::uniform_int_distribution<std::size_t> count(config_.min_objects, config_.max_objects);
    const std::size_t n = count(rng);
    SceneSpec spec;
    spec.seed = seed;
    std::uniform_int_distribution<int> cat(0, static_cast<int>(config_.categories) - 1);
    std::uniform_int_distribution<int> col(0, static_cast<int>(config_.colors) - 1);
    std::uniform_int_distribution<int> quad(0, 3);
    std::uniform_int_distribution<int> sz(0, 1);
    for (std::size_t i = 0; i < n; ++i) {
      SceneObject o;
      o.category = cat(rng);
      o.color = col(rng);
      o.quadrant = static_cast<Quadrant>(quad(rng));
      o.size = static_cast<SizeClass>(sz(rng));
      o.box = sample_box(o.quadrant, o.size, rng);
      spec.objects.push_back(o);
    }
    Rng target_rng = make_rng(seed, 0x7A56E7);
    spec.target_index = std::uniform_int_distribution<std::size_t>(0, n - 1)(target_rng);
    return materialize(std::move(spec));
  }

  // Features for an existing spec; noise is regenerated from spec.seed.
  Scene materialize(SceneSpec spec) const {
    const std::size_t m = config_.slots, fd = config_.feature_dim(), bd = config_.block_dim;
    if (spec.objects.size() < 2 || spec.objects.size() > m)
      throw ConfigError("scene has " + std::to_string(spec.objects.size()) + " objects; expected 2.." +
                        std::to_string(m));
    if (spec.target_index >= spec.objects.size()) throw ConfigError("scene target index out of range");
    Scene s;
    s.features = Tensor(Shape{m, fd});
    s.real_mask.assign(m, 0.0);
    Rng noise_rng = make_rng(spec.seed, 0x4015E);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < m; ++i) {
      if (i < spec.objects.size()) {
        const SceneObject& o = spec.objects[i];
        s.real_mask[i] = 1.0;
        const std::vector<double>* blocks[3] = {&category_blocks_.at(static_cast<std::size_t>(o.category)),
                                                &color_blocks_.at(static_cast<std::size_t>(o.color)),
                                                &size_blocks_[static_cast<std::size_t>(o.size)]};
        for (std::size_t b = 0; b < 3; ++b)
          for (std::size_t j = 0; j < bd; ++j) s.features(i, b * bd + j) = (*blocks[b])[j] + config_.noise * normal(noise_rng);
        const auto sp = o.box.spatial();
        for (std::size_t j = 0; j < 8; ++j) s.features(i, 3 * bd + j) = sp[j];
      } else {
        // Null object: zero static block, zero-area box at (-1, -1).
        const double pad[8] = {-1, -1, -1, -1, -1, -1, 0, 0};
        for (std::size_t j = 0; j < 8; ++j) s.features(i, 3 * bd + j) = pad[j];
      }
    }
    s.spec = std::move(spec);
    return s;
  }

  // Same scene with a different target (used for the new-object split).
  Scene retarget(const Scene& scene, std::uint64_t draw) const {
    SceneSpec spec = scene.spec;
    const std::size_t n = spec.objects.size();
    Rng rng = make_rng(spec.seed ^ 0xA11CE, draw);
    const std::size_t shift = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    spec.target_index = (spec.target_index + shift) % n;
    Scene out = scene;
    out.spec = std::move(spec);
    return out;
  }

 private:
  static Box sample_box(Quadrant q, SizeClass size, Rng& rng) {
    std::uniform_real_distribution<double> small_side(0.15, 0.45), big_side(0.55, 1.0);
    const double w = size == SizeClass::small ? small_side(rng) : big_side(rng);
    const double h = size == SizeClass::small ? small_side(rng) : big_side(rng);
    const bool left = q == Quadrant::tl || q == Quadrant::bl;
    const bool top = q == Quadrant::tl || q == Quadrant::tr;
    // Centre strictly inside its quadrant, box inside the image.
    constexpr double eps = 1e-3;
    auto centre = [&](double side, bool negative) {
      const double lo = negative ? -1.0 + side / 2 : eps;
      const double hi = negative ? -eps : 1.0 - side / 2;
      return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    const double cx = centre(w, left), cy = centre(h, top);
    return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }

  EnvConfig config_;
  Vocabulary vocab_;
  std::vector<std::vector<double>> category_blocks_, color_blocks_, size_blocks_;
  std::vector<int> supercategory_;
};

// --- question grammar ------------------------------------------------------------

enum class QuestionKind { category, supercategory, color, location, size };

inline bool is_entity(QuestionKind k) { return k == QuestionKind::category || k == QuestionKind::supercategory; }

struct Question {
  QuestionKind kind = QuestionKind::category;
  int value = 0;
  bool operator==(const Question&) const = default;
  auto operator<=>(const Question&) const = default;
};

// Surface tokens, ending with "?".
inline std::vector<int> render_question(const Question& q, const Vocabulary& v) {
  std::vector<int> t{v.id("is"), v.id("it")};
  switch (q.kind) {
    case QuestionKind::category:
      t.push_back(v.id("a"));
      t.push_back(v.id(kCategoryWords.at(static_cast<std::size_t>(q.value))));
      break;
    case QuestionKind::supercategory:
      t.push_back(v.id("a"));
      t.push_back(v.id(kSupercategoryWords.at(static_cast<std::size_t>(q.value))));
      break;
    case QuestionKind::color:
      t.push_back(v.id(kColorWords.at(static_cast<std::size_t>(q.value))));
      break;
    case QuestionKind::location: {
      const auto quad = static_cast<Quadrant>(q.value);
      const bool top = quad == Quadrant::tl || quad == Quadrant::tr;
      const bool left = quad == Quadrant::tl || quad == Quadrant::bl;
      t.push_back(v.id(top ? "top" : "bottom"));
      t.push_back(v.id(left ? "left" : "right"));
      break;
    }
    case QuestionKind::size:
      t.push_back(v.id(q.value == 0 ? "small" : "big"));
      break;
  }
  t.push_back(kEnd);
  return t;
}

// Exact template match; anything else is unparseable.
inline std::optional<Question> parse_question(std::span<const int> tokens, const Vocabulary& v) {
  auto word = [&](std::size_t i) -> const std::string& { return v.word(tokens[i]); };
  if (tokens.size() < 4 || tokens.back() != kEnd) return std::nullopt;
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= v.size()) return std::nullopt;
  if (word(0) != "is" || word(1) != "it") return std::nullopt;
  auto index_in = [](const auto& list, const std::string& w) -> int {
    for (std::size_t i = 0; i < list.size(); ++i)
      if (list[i] == w) return static_cast<int>(i);
    return -1;
  };
  if (tokens.size() == 5 && word(2) == "a") {
    if (int c = index_in(kCategoryWords, word(3)); c >= 0) return Question{QuestionKind::category, c};
    if (int s = index_in(kSupercategoryWords, word(3)); s >= 0) return Question{QuestionKind::supercategory, s};
    return std::nullopt;
  }
  if (tokens.size() == 4) {
    if (int c = index_in(kColorWords, word(2)); c >= 0) return Question{QuestionKind::color, c};
    if (word(2) == "small") return Question{QuestionKind::size, 0};
    if (word(2) == "big") return Question{QuestionKind::size, 1};
    return std::nullopt;
  }
  if (tokens.size() == 5 && (word(2) == "top" || word(2) == "bottom") && (word(3) == "left" || word(3) == "right")) {
    const bool top = word(2) == "top", left = word(3) == "left";
    const Quadrant q = top ? (left ? Quadrant::tl : Quadrant::tr) : (left ? Quadrant::bl : Quadrant::br);
    return Question{QuestionKind::location, static_cast<int>(q)};
  }
  return std::nullopt;
}

inline bool question_holds(const Question& q, const SceneObject& o, const World& world) {
  switch (q.kind) {
    case QuestionKind::category: return o.category == q.value;
    case QuestionKind::supercategory: return world.supercategory_of(o.category) == q.value;
    case QuestionKind::color: return o.color == q.value;
    case QuestionKind::location: return static_cast<int>(o.quadrant) == q.value;
    case QuestionKind::size: return static_cast<int>(o.size) == q.value;
  }
  return false;
}

// Rule-based oracle. Noise (flipping yes/no with probability oracle_noise_p)
// applies only when an rng is supplied.
inline Answer oracle_answer(const World& world, const SceneSpec& scene, std::span<const int> tokens,
                            Rng* noise_rng = nullptr) {
  const auto q = parse_question(tokens, world.vocab());
  if (!q) return Answer::na;
  Answer a = question_holds(*q, scene.objects.at(scene.target_index), world) ? Answer::yes : Answer::no;
  const double p = world.config().oracle_noise_p;
  if (noise_rng && p > 0 && uniform01(*noise_rng) < p) a = a == Answer::yes ? Answer::no : Answer::yes;
  return a;
}

// --- scripted questioner -------------------------------------------------------------

struct ScriptedRound {
  Question question;
  std::vector<int> tokens;
  Answer answer = Answer::na;
};

struct ScriptedDialogue {
  std::vector<ScriptedRound> rounds;
  std::vector<std::size_t> candidates;  // objects consistent with every answer
};

// Entity questions (largest remaining category group first) until a "yes",
// then the attribute question that splits the remaining candidates most evenly.
// Never sees the target; answers come from the oracle.
inline ScriptedDialogue scripted_dialogue(const World& world, const SceneSpec& scene, std::size_t max_questions,
                                          Rng* noise_rng = nullptr) {
  ScriptedDialogue d;
  const std::size_t n = scene.objects.size();
  for (std::size_t i = 0; i < n; ++i) d.candidates.push_back(i);
  std::set<Question> asked;
  bool entity_confirmed = false;
  auto count_holding = [&](const Question& q) {
    std::size_t c = 0;
    for (std::size_t i : d.candidates) c += question_holds(q, scene.objects[i], world);
    return c;
  };
  while (d.rounds.size() < max_questions) {
    std::optional<Question> next;
    if (!entity_confirmed) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < world.config().categories; ++c) {
        Question q{QuestionKind::category, static_cast<int>(c)};
        if (asked.count(q)) continue;
        const std::size_t k = count_holding(q);
        if (k > best) best = k, next = q;
      }
    }
    if (!next) {
      entity_confirmed = true;
      std::vector<Question> pool;
      for (std::size_t i : d.candidates) {
        const SceneObject& o = scene.objects[i];
        pool.push_back({QuestionKind::color, o.color});
        pool.push_back({QuestionKind::location, static_cast<int>(o.quadrant)});
        pool.push_back({QuestionKind::size, static_cast<int>(o.size)});
      }
      std::sort(pool.begin(), pool.end());
      pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
      double best_gap = 1e18;
      for (const Question& q : pool) {
        if (asked.count(q)) continue;
        const double gap = std::abs(static_cast<double>(count_holding(q)) - 0.5 * static_cast<double>(d.candidates.size()));
        if (gap < best_gap) best_gap = gap, next = q;
      }
    }
    if (!next) break;
    asked.insert(*next);
    ScriptedRound r{*next, render_question(*next, world.vocab()), Answer::na};
    r.answer = oracle_answer(world, scene, r.tokens, noise_rng);
    if (r.answer != Answer::na) {
      std::vector<std::size_t> keep;
      for (std::size_t i : d.candidates)
        if (question_holds(*next, scene.objects[i], world) == (r.answer == Answer::yes)) keep.push_back(i);
      if (!keep.empty()) d.candidates = std::move(keep);
      if (is_entity(next->kind) && r.answer == Answer::yes) entity_confirmed = true;
    }
    d.rounds.push_back(std::move(r));
  }
  return d;
}

// --- scene corpus (JSON lines) ---------------------------------------------------------

inline const char* quadrant_name(Quadrant q) {
  static const char* names[] = {"tl", "tr", "bl", "br"};
  return names[static_cast<int>(q)];
}

inline nlohmann::json scene_to_json(const SceneSpec& s, const World* world = nullptr) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects) {
    nlohmann::json jo = {{"category", o.category},
                         {"color", o.color},
                         {"quadrant", quadrant_name(o.quadrant)},
                         {"size", o.size == SizeClass::small ? "small" : "big"},
                         {"box", {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max}}};
    if (world) {
      jo["category_name"] = kCategoryWords.at(static_cast<std::size_t>(o.category));
      jo["color_name"] = kColorWords.at(static_cast<std::size_t>(o.color));
      jo["supercategory_name"] = kSupercategoryWords.at(static_cast<std::size_t>(world->supercategory_of(o.category)));
    }
    objs.push_back(std::move(jo));
  }
  return {{"seed", s.seed}, {"target_index", s.target_index}, {"objects", std::move(objs)}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  j.at("seed").get_to(s.seed);
  j.at("target_index").get_to(s.target_index);
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    jo.at("category").get_to(o.category);
    jo.at("color").get_to(o.color);
    const std::string q = jo.at("quadrant");
    const std::string names[] = {"tl", "tr", "bl", "br"};
    auto it = std::find(std::begin(names), std::end(names), q);
    if (it == std::end(names)) throw std::invalid_argument("bad quadrant '" + q + "'");
    o.quadrant = static_cast<Quadrant>(it - std::begin(names));
    o.size = jo.at("size") == "small" ? SizeClass::small : SizeClass::big;
    const auto& b = jo.at("box");
    o.box = Box{b.at(0), b.at(1), b.at(2), b.at(3)};
    s.objects.push_back(o);
  }
  return s;
}

}  // namespace vdst
