#pragma once

// Interactive games where a person plays the oracle. GameService holds the
// sessions and maps requests to JSON responses; serve() exposes it over HTTP.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "vdst/game.hpp"
#include "vdst/guesser.hpp"
#include "vdst/model.hpp"
#include "vdst/training.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's product kernels.
#include <httplib.h>

namespace vdst {

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

enum class SessionStatus { awaiting_question, awaiting_answer, guessed, done };

inline const char* status_name(SessionStatus s) {
  switch (s) {
    case SessionStatus::awaiting_question: return "awaiting_question";
    case SessionStatus::awaiting_answer: return "awaiting_answer";
    case SessionStatus::guessed: return "guessed";
    case SessionStatus::done: return "done";
  }
  return "?";
}

struct ServiceOptions {
  std::uint64_t seed = 1;
  std::size_t default_max_questions = 5;
  std::size_t max_words = kDefaultMaxWords;
  DecodeMode mode = DecodeMode::greedy();
  std::chrono::seconds ttl{30 * 60};
};

class GameService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  GameService(const World& world, const VdstParams& params, const GuesserParams* guesser, ServiceOptions opt,
              Clock clock = [] { return std::chrono::steady_clock::now(); })
      : world_(world), params_(params), guesser_(guesser), opt_(std::move(opt)), clock_(std::move(clock)) {}

  HttpResult handle(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex game_re(R"(^/games/([A-Za-z0-9]+)(/(question|answer|guess|reveal))?$)");
    std::lock_guard<std::mutex> lock(mu_);
    expire();
    try {
      if (path == "/games") {
        if (method != "POST") return error(405, "method not allowed");
        return create(body);
      }
      std::smatch m;
      if (!std::regex_match(path, m, game_re)) return error(404, "no such resource");
      auto it = sessions_.find(m[1]);
      if (it == sessions_.end()) return error(404, "unknown session " + m[1].str());
      Session& s = *it->second;
      s.touched = clock_();
      const std::string action = m[3];
      if (action.empty()) return method == "GET" ? HttpResult{200, state(s)} : error(405, "method not allowed");
      if (action == "question") return method == "GET" ? question(s) : error(405, "method not allowed");
      if (action == "answer") return method == "POST" ? answer(s, body) : error(405, "method not allowed");
      if (method != "POST") return error(405, "method not allowed");
      return action == "guess" ? guess_target(s) : reveal(s, body);
    } catch (const nlohmann::json::exception& e) {
      return error(422, std::string("malformed request: ") + e.what());
    }
  }

  std::size_t session_count() {
    std::lock_guard<std::mutex> lock(mu_);
    expire();
    return sessions_.size();
  }

 private:
  struct Session {
    std::string id;
    Scene scene;
    std::size_t max_questions = 5;
    ad::Tape tape{false};
    ModelVars vars;
    std::unique_ptr<Dialogue> dialogue;
    SessionStatus status = SessionStatus::awaiting_question;
    std::optional<std::size_t> guess;
    std::optional<std::size_t> revealed;
    std::vector<double> guess_distribution;
    std::chrono::steady_clock::time_point touched;
  };

  static HttpResult error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

  static std::vector<double> real_pi(const Session& s) {
    const Tensor pi = s.dialogue->belief().pi;
    return std::vector<double>(pi.data().begin(), pi.data().begin() + static_cast<std::ptrdiff_t>(s.scene.real_count()));
  }

  // The person playing the oracle picks the target; the generated one is never exposed.
  nlohmann::json public_scene(const Session& s) const {
    nlohmann::json j = scene_to_json(s.scene.spec, &world_);
    j.erase("target_index");
    return j;
  }

  void expire() {
    const auto now = clock_();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->touched > opt_.ttl)
        it = sessions_.erase(it);
      else
        ++it;
    }
  }

  HttpResult create(const std::string& body) {
    nlohmann::json req = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
    if (!req.is_object()) return error(422, "request body must be a JSON object");
    std::uint64_t seed = mix_seed(opt_.seed, counter_);
    if (req.contains("seed")) {
      if (!req["seed"].is_number_unsigned()) return error(422, "seed must be a non-negative integer");
      seed = req["seed"].get<std::uint64_t>();
    }
    std::size_t max_q = opt_.default_max_questions;
    if (req.contains("max_questions")) {
      if (!req["max_questions"].is_number_unsigned() || req["max_questions"].get<std::size_t>() > 20)
        return error(422, "max_questions must be an integer in 0..20");
      max_q = req["max_questions"].get<std::size_t>();
    }
    auto s = std::make_unique<Session>();
    s->id = session_id(seed);
    s->scene = world_.generate(seed);
    s->max_questions = max_q;
    s->vars = bind(s->tape, params_);
    s->dialogue = std::make_unique<Dialogue>(s->tape, s->vars, params_.config, s->scene);
    s->touched = clock_();
    nlohmann::json out = {{"session_id", s->id},
                          {"scene", public_scene(*s)},
                          {"max_questions", max_q},
                          {"pi", real_pi(*s)}};
    sessions_[s->id] = std::move(s);
    return {201, out};
  }

  std::string session_id(std::uint64_t seed) {
    const std::uint64_t v = mix_seed(mix_seed(opt_.seed, ++counter_), seed);
    static const char* hex = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 16; ++i) id.push_back(hex[(v >> (4 * i)) & 15]);
    return id;
  }

  nlohmann::json history(const Session& s) const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& r : s.dialogue->rounds())
      h.push_back({{"question", world_.vocab().decode(r.tokens)},
                   {"tokens", r.tokens},
                   {"answer", answer_name(r.answer)},
                   {"pi", std::vector<double>(r.belief.begin(), r.belief.begin() + static_cast<std::ptrdiff_t>(s.scene.real_count()))}});
    return h;
  }

  nlohmann::json state(const Session& s) const {
    nlohmann::json j = {{"session_id", s.id},
                        {"status", status_name(s.status)},
                        {"round", s.dialogue->round()},
                        {"max_questions", s.max_questions},
                        {"scene", public_scene(s)},
                        {"pi", real_pi(s)},
                        {"history", history(s)}};
    if (s.status == SessionStatus::awaiting_answer) j["pending_question"] = world_.vocab().decode(s.dialogue->pending_tokens());
    if (s.guess) {
      j["guess_index"] = *s.guess;
      j["guess_distribution"] = s.guess_distribution;
    }
    if (s.revealed) {
      j["target_index"] = *s.revealed;
      j["correct"] = *s.revealed == *s.guess;
    }
    return j;
  }

  HttpResult question(Session& s) {
    if (s.status == SessionStatus::guessed || s.status == SessionStatus::done) return error(409, "game is over");
    if (s.status == SessionStatus::awaiting_question) {
      if (s.dialogue->round() >= s.max_questions) return error(409, "question budget used up; make a guess");
      s.dialogue->ask(opt_.mode, opt_.max_words);
      s.status = SessionStatus::awaiting_answer;
    }
    const auto& tokens = s.dialogue->pending_tokens();
    return {200,
            {{"question", world_.vocab().decode(tokens)},
             {"tokens", tokens},
             {"round", s.dialogue->round() + 1},
             {"pi", real_pi(s)}}};
  }

  HttpResult answer(Session& s, const std::string& body) {
    if (s.status != SessionStatus::awaiting_answer) return error(409, "no question is awaiting an answer");
    const nlohmann::json req = nlohmann::json::parse(body);
    if (!req.is_object() || !req.contains("answer") || !req["answer"].is_string())
      return error(422, "body must be {\"answer\": \"yes\" | \"no\" | \"na\"}");
    Answer a;
    try {
      a = parse_answer(req["answer"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      return error(422, e.what());
    }
    s.dialogue->answer(a);
    s.status = SessionStatus::awaiting_question;
    return {200, {{"round", s.dialogue->round()}, {"pi", real_pi(s)}, {"questions_left", s.max_questions - s.dialogue->round()}}};
  }

  HttpResult guess_target(Session& s) {
    if (s.status == SessionStatus::guessed || s.status == SessionStatus::done) return error(409, "game already guessed");
    if (s.status == SessionStatus::awaiting_answer) return error(409, "answer the pending question first");
    std::vector<QaPair> qa;
    for (const auto& r : s.dialogue->rounds()) qa.push_back({r.tokens, r.answer});
    if (guesser_) {
      const Tensor dist = guesser_distribution(*guesser_, s.scene, qa);
      s.guess_distribution.assign(dist.data().begin(), dist.data().begin() + static_cast<std::ptrdiff_t>(s.scene.real_count()));
    } else {
      s.guess_distribution = real_pi(s);
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.guess_distribution.size(); ++i)
      if (s.guess_distribution[i] > s.guess_distribution[best]) best = i;
    s.guess = best;
    s.status = SessionStatus::guessed;
    return {200, {{"guess_index", best}, {"pi", real_pi(s)}, {"guess_distribution", s.guess_distribution}}};
  }

  HttpResult reveal(Session& s, const std::string& body) {
    if (s.status != SessionStatus::guessed) return error(409, "reveal is only allowed right after the guess");
    const nlohmann::json req = nlohmann::json::parse(body);
    if (!req.is_object() || !req.contains("target_index") || !req["target_index"].is_number_unsigned() ||
        req["target_index"].get<std::size_t>() >= s.scene.real_count())
      return error(422, "body must be {\"target_index\": <object index>}");
    s.revealed = req["target_index"].get<std::size_t>();
    s.status = SessionStatus::done;
    return {200, {{"guess_index", *s.guess}, {"target_index", *s.revealed}, {"correct", *s.revealed == *s.guess}}};
  }

  const World& world_;
  const VdstParams& params_;
  const GuesserParams* guesser_;
  ServiceOptions opt_;
  Clock clock_;
  std::mutex mu_;
  std::uint64_t counter_ = 0;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
};

inline void install_routes(GameService& service, httplib::Server& server) {
  auto route = [&service](const httplib::Request& req, httplib::Response& res) {
    HttpResult r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/games.*)", route);
  server.Post(R"(/games.*)", route);
  server.Options(R"(/games.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

// Blocks until the server is stopped.
inline bool serve(GameService& service, httplib::Server& server, const std::string& host, int port) {
  install_routes(service, server);
  return server.listen(host, port);
}

}  // namespace vdst
