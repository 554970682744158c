#include <gtest/gtest.h>

#include <thread>

#include "vdst/service.hpp"

using namespace vdst;
using nlohmann::json;

namespace {

struct Fixture {
  World world{EnvConfig{}};
  VdstParams params{model_config_for(world, 16, 2)};
  GuesserParams guesser{guesser_config_for(world, 8)};
  std::chrono::steady_clock::time_point now{};

  Fixture() {
    params.initialize(5);
    guesser.initialize(6);
  }

  GameService service(ServiceOptions opt = {}) {
    return GameService(world, params, &guesser, opt, [this] { return now; });
  }
};

json create(GameService& svc, std::uint64_t seed, std::size_t max_q = 5) {
  const HttpResult r = svc.handle("POST", "/games", json{{"seed", seed}, {"max_questions", max_q}}.dump());
  EXPECT_EQ(r.status, 201) << r.body.dump();
  return r.body;
}

std::string path(const json& created, const std::string& action = "") {
  return "/games/" + created["session_id"].get<std::string>() + (action.empty() ? "" : "/" + action);
}

std::string status_of(GameService& svc, const json& created) {
  return svc.handle("GET", path(created), "").body["status"];
}

// Drives a session the way a UI would, answering truthfully for `target`.
GameRecord scripted_client(GameService& svc, const World& world, const Scene& scene, std::size_t max_q) {
  const json created = create(svc, scene.spec.seed, max_q);
  GameRecord rec;
  rec.initial_belief = created["pi"].get<std::vector<double>>();
  for (std::size_t q = 0; q < max_q; ++q) {
    const HttpResult question = svc.handle("GET", path(created, "question"), "");
    EXPECT_EQ(question.status, 200);
    DialogueRound r;
    r.tokens = question.body["tokens"].get<std::vector<int>>();
    r.answer = oracle_answer(world, scene.spec, r.tokens);
    const HttpResult a = svc.handle("POST", path(created, "answer"), json{{"answer", answer_name(r.answer)}}.dump());
    EXPECT_EQ(a.status, 200);
    r.belief = a.body["pi"].get<std::vector<double>>();
    rec.rounds.push_back(std::move(r));
  }
  const HttpResult g = svc.handle("POST", path(created, "guess"), "");
  EXPECT_EQ(g.status, 200);
  rec.guess_index = g.body["guess_index"];
  const HttpResult rev =
      svc.handle("POST", path(created, "reveal"), json{{"target_index", scene.spec.target_index}}.dump());
  EXPECT_EQ(rev.status, 200);
  rec.reward = rev.body["correct"].get<bool>() ? 1.0 : 0.0;
  return rec;
}

}  // namespace

TEST(Service, FullGameFollowsLegalTransitions) {
  Fixture f;
  GameService svc = f.service();
  const json created = create(svc, 11, 2);
  EXPECT_EQ(status_of(svc, created), "awaiting_question");
  for (int round = 1; round <= 2; ++round) {
    const HttpResult q = svc.handle("GET", path(created, "question"), "");
    ASSERT_EQ(q.status, 200);
    EXPECT_EQ(q.body["round"], round);
    EXPECT_EQ(status_of(svc, created), "awaiting_answer");
    // Asking again returns the same pending question.
    EXPECT_EQ(svc.handle("GET", path(created, "question"), "").body["tokens"], q.body["tokens"]);
    EXPECT_EQ(svc.handle("POST", path(created, "guess"), "").status, 409);
    const HttpResult a = svc.handle("POST", path(created, "answer"), R"({"answer": "no"})");
    ASSERT_EQ(a.status, 200);
    EXPECT_EQ(a.body["questions_left"], 2 - round);
    EXPECT_EQ(status_of(svc, created), "awaiting_question");
  }
  EXPECT_EQ(svc.handle("GET", path(created, "question"), "").status, 409);
  EXPECT_EQ(svc.handle("POST", path(created, "reveal"), R"({"target_index": 0})").status, 409);
  const HttpResult g = svc.handle("POST", path(created, "guess"), "");
  ASSERT_EQ(g.status, 200);
  EXPECT_EQ(status_of(svc, created), "guessed");
  EXPECT_EQ(svc.handle("POST", path(created, "guess"), "").status, 409);
  EXPECT_EQ(svc.handle("GET", path(created, "question"), "").status, 409);
  EXPECT_EQ(svc.handle("POST", path(created, "answer"), R"({"answer": "yes"})").status, 409);
  const HttpResult r = svc.handle("POST", path(created, "reveal"), R"({"target_index": 1})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["correct"], g.body["guess_index"] == 1);
  const json st = svc.handle("GET", path(created), "").body;
  EXPECT_EQ(st["status"], "done");
  EXPECT_EQ(st["target_index"], 1);
  EXPECT_EQ(st["history"].size(), 2u);
  EXPECT_EQ(svc.handle("POST", path(created, "reveal"), R"({"target_index": 1})").status, 409);
}

TEST(Service, BeliefInvariantsHoldAtEveryTransition) {
  Fixture f;
  GameService svc = f.service();
  const json created = create(svc, 3);
  const std::size_t n = created["scene"]["objects"].size();
  auto check = [&](const json& pi) {
    ASSERT_EQ(pi.size(), n);
    double sum = 0;
    for (double x : pi.get<std::vector<double>>()) {
      EXPECT_GT(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  };
  check(created["pi"]);
  for (int q = 0; q < 5; ++q) {
    check(svc.handle("GET", path(created, "question"), "").body["pi"]);
    check(svc.handle("POST", path(created, "answer"), R"({"answer": "yes"})").body["pi"]);
  }
  const json g = svc.handle("POST", path(created, "guess"), "").body;
  check(g["pi"]);
  check(g["guess_distribution"]);
}

TEST(Service, TargetIsNeverExposedBeforeReveal) {
  Fixture f;
  GameService svc = f.service();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const json created = create(svc, seed);
    std::vector<json> bodies{created};
    for (int q = 0; q < 5; ++q) {
      bodies.push_back(svc.handle("GET", path(created, "question"), "").body);
      bodies.push_back(svc.handle("GET", path(created), "").body);
      bodies.push_back(svc.handle("POST", path(created, "answer"), R"({"answer": "na"})").body);
    }
    bodies.push_back(svc.handle("POST", path(created, "guess"), "").body);
    bodies.push_back(svc.handle("GET", path(created), "").body);
    for (const json& b : bodies) {
      EXPECT_EQ(b.dump().find("target"), std::string::npos) << b.dump();
      EXPECT_EQ(b.dump().find("correct"), std::string::npos) << b.dump();
    }
  }
}

TEST(Service, ScriptedClientReproducesInProcessRollout) {
  Fixture f;
  GameService svc = f.service();
  const GuessFn g = guesser_fn(f.guesser);
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const Scene scene = f.world.generate(seed);
    const GameRecord local = rollout(f.params, g, f.world, scene, {DecodeMode::greedy(), 5, kDefaultMaxWords});
    const GameRecord remote = scripted_client(svc, f.world, scene, 5);
    const std::size_t n = scene.real_count();
    EXPECT_EQ(remote.initial_belief, std::vector<double>(local.initial_belief.begin(), local.initial_belief.begin() + n));
    ASSERT_EQ(remote.rounds.size(), local.rounds.size());
    for (std::size_t i = 0; i < local.rounds.size(); ++i) {
      EXPECT_EQ(remote.rounds[i].tokens, local.rounds[i].tokens);
      EXPECT_EQ(remote.rounds[i].answer, local.rounds[i].answer);
      EXPECT_EQ(remote.rounds[i].belief,
                std::vector<double>(local.rounds[i].belief.begin(), local.rounds[i].belief.begin() + n));
    }
    EXPECT_EQ(remote.guess_index, local.guess_index);
    EXPECT_EQ(remote.reward, local.reward);
  }
}

TEST(Service, ErrorsUseHttpStatusCodes) {
  Fixture f;
  GameService svc = f.service();
  EXPECT_EQ(svc.handle("GET", "/nowhere", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/games/ffff", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/games", "").status, 405);
  EXPECT_EQ(svc.handle("POST", "/games", "{oops").status, 422);
  EXPECT_EQ(svc.handle("POST", "/games", "[1]").status, 422);
  EXPECT_EQ(svc.handle("POST", "/games", R"({"seed": -1})").status, 422);
  EXPECT_EQ(svc.handle("POST", "/games", R"({"max_questions": 21})").status, 422);
  const json created = create(svc, 1);
  EXPECT_EQ(svc.handle("POST", path(created), "").status, 405);
  EXPECT_EQ(svc.handle("POST", path(created, "question"), "").status, 405);
  EXPECT_EQ(svc.handle("GET", path(created, "answer"), "").status, 405);
  EXPECT_EQ(svc.handle("GET", path(created, "guess"), "").status, 405);
  EXPECT_EQ(svc.handle("POST", path(created, "answer"), R"({"answer": "yes"})").status, 409);
  svc.handle("GET", path(created, "question"), "");
  EXPECT_EQ(svc.handle("POST", path(created, "answer"), R"({"answer": "maybe"})").status, 422);
  EXPECT_EQ(svc.handle("POST", path(created, "answer"), R"({"reply": "yes"})").status, 422);
  EXPECT_EQ(svc.handle("POST", path(created, "answer"), "not json").status, 422);
  EXPECT_EQ(status_of(svc, created), "awaiting_answer");
  svc.handle("POST", path(created, "answer"), R"({"answer": "yes"})");
  svc.handle("POST", path(created, "guess"), "");
  EXPECT_EQ(svc.handle("POST", path(created, "reveal"), R"({"target_index": 99})").status, 422);
  EXPECT_EQ(svc.handle("POST", path(created, "reveal"), R"({"target_index": "0"})").status, 422);
  EXPECT_EQ(status_of(svc, created), "guessed");
}

TEST(Service, ZeroQuestionGameGoesStraightToGuess) {
  Fixture f;
  GameService svc = f.service();
  const json created = create(svc, 8, 0);
  EXPECT_EQ(svc.handle("GET", path(created, "question"), "").status, 409);
  const HttpResult g = svc.handle("POST", path(created, "guess"), "");
  EXPECT_EQ(g.status, 200);
  const Scene scene = f.world.generate(8);
  EXPECT_EQ(g.body["guess_index"], guess(f.guesser, scene, {}));
}

TEST(Service, IdleSessionsExpire) {
  Fixture f;
  GameService svc = f.service();
  const json a = create(svc, 1);
  f.now += std::chrono::minutes(20);
  const json b = create(svc, 2);
  EXPECT_EQ(svc.session_count(), 2u);
  f.now += std::chrono::minutes(11);
  EXPECT_EQ(svc.session_count(), 1u);
  EXPECT_EQ(svc.handle("GET", path(a), "").status, 404);
  EXPECT_EQ(svc.handle("GET", path(b), "").status, 200);
  // Activity refreshes the deadline.
  f.now += std::chrono::minutes(29);
  EXPECT_EQ(svc.handle("GET", path(b), "").status, 200);
  f.now += std::chrono::minutes(29);
  EXPECT_EQ(svc.handle("GET", path(b), "").status, 200);
  f.now += std::chrono::minutes(31);
  EXPECT_EQ(svc.session_count(), 0u);
}

TEST(Service, SessionIdsAreDistinctForTheSameScene) {
  Fixture f;
  GameService svc = f.service();
  const json a = create(svc, 4), b = create(svc, 4);
  EXPECT_NE(a["session_id"], b["session_id"]);
  EXPECT_EQ(a["scene"], b["scene"]);
}

TEST(Service, ServesOverHttpWithCors) {
  Fixture f;
  GameService svc = f.service();
  httplib::Server server;
  install_routes(svc, server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/games", R"({"seed": 5})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  const json body = json::parse(created->body);
  auto q = client.Get(path(body, "question"));
  ASSERT_TRUE(q);
  EXPECT_EQ(q->status, 200);
  EXPECT_EQ(json::parse(q->body)["round"], 1);
  auto missing = client.Get("/games/abc");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  auto pre = client.Options("/games");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  server.stop();
  worker.join();
}
