#include <doctest.h>

#include <thread>

#include "vdn/errors.hpp"
#include "vdn/server.hpp"

#include <httplib.h>

using namespace vdn;
using nlohmann::json;

namespace {

struct Fixture {
  EnvironmentSet envs;
  std::vector<Episode> episodes;
  std::shared_ptr<SessionManager> sessions;
  std::unique_ptr<SessionServer> server;
  std::thread thread;
  int port = 0;

  explicit Fixture(AskPolicy ask) {
    auto g = generate_environment(91, {.rooms = 5, .nodes_per_room = 3});
    envs.emplace(g.env_id(), std::move(g));
    episodes = synthesize_dataset(envs, 4, 5);
    RunConfig cfg;
    cfg.navigator = NavigatorPolicy::trainable();
    cfg.navigator.weights = {0.4, 0.5, -1.0, 0.2, 0.0};
    cfg.navigator.stop_bias = -100.0;
    cfg.max_actions = 6;
    cfg.ask = ask;
    cfg.backend = "human";
    sessions = std::make_shared<SessionManager>(envs, episodes, cfg);
    server = std::make_unique<SessionServer>(sessions, ServerOptions{.port = 0, .threads = 8, .event_poll_ms = 50});
    port = server->bind();
    thread = std::thread([this] { server->serve(); });
  }
  ~Fixture() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

}  // namespace

TEST_CASE("status mapping") {
  CHECK(http_status_for("SessionNotFound") == 404);
  CHECK(http_status_for("NoPendingQuestion") == 409);
  CHECK(http_status_for("InvalidConfig") == 400);
  CHECK(http_status_for("FormatError") == 400);
  CHECK(http_status_for("EpisodeFailed") == 500);
}

TEST_CASE("session lifecycle over HTTP") {
  Fixture f(AskPolicy::periodic(1));
  auto c = f.client();

  auto health = c.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(body_of(health)["status"] == "ok");

  auto schema = c.Get("/schemas/session_view.v1.json");
  REQUIRE(schema);
  CHECK(body_of(schema)["$id"] == kSessionViewSchema);

  auto created = c.Post("/sessions", json{{"episode_index", 0}}.dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto id = body_of(created)["session_id"].get<std::string>();

  auto v1 = c.Get("/sessions/" + id);
  auto v2 = c.Get("/sessions/" + id);
  REQUIRE(v1);
  CHECK(v1->status == 200);
  CHECK(v1->body == v2->body);
  const auto view = body_of(v1);
  REQUIRE_FALSE(view["pending_question"].is_null());

  auto answered = c.Post("/sessions/" + id + "/answer", json{{"answer", "left"}, {"question_id", 1}}.dump(),
                         "application/json");
  REQUIRE(answered);
  CHECK(answered->status == 200);
  CHECK(body_of(answered)["last_answered"]["question_id"] == 1);

  auto duplicate = c.Post("/sessions/" + id + "/answer", json{{"answer", "left"}, {"question_id", 1}}.dump(),
                          "application/json");
  REQUIRE(duplicate);
  CHECK(duplicate->status == 409);
  CHECK(body_of(duplicate)["error"] == "NoPendingQuestion");

  auto malformed = c.Post("/sessions/" + id + "/answer", "{not json", "application/json");
  REQUIRE(malformed);
  CHECK(malformed->status == 400);

  auto bad = c.Post("/sessions", json{{"episode_id", "missing"}}.dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(body_of(bad)["error"] == "InvalidConfig");

  auto del = c.Delete("/sessions/" + id);
  REQUIRE(del);
  CHECK(del->status == 204);
  auto missing = c.Get("/sessions/" + id);
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(body_of(missing)["error"] == "SessionNotFound");
  auto missing_answer = c.Post("/sessions/" + id + "/answer", json{{"answer", "x"}}.dump(), "application/json");
  CHECK(missing_answer->status == 404);
}

TEST_CASE("event stream pushes a view after each answer and ends when done") {
  Fixture f(AskPolicy::periodic(1));
  auto c = f.client();
  const auto id = body_of(c.Post("/sessions", json{{"episode_index", 1}}.dump(), "application/json"))["session_id"]
                      .get<std::string>();

  std::string stream;
  std::thread listener([&] {
    auto lc = f.client();
    lc.Get("/sessions/" + id + "/events", [&](const char* data, std::size_t n) {
      stream.append(data, n);
      return true;
    });
  });
  // Answer until done; each answer produces one more event.
  int answers = 0;
  for (;;) {
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    auto r = c.Post("/sessions/" + id + "/answer", json{{"answer", "straight"}}.dump(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    ++answers;
    if (body_of(r)["status"] == "done") break;
  }
  listener.join();
  CHECK(stream.rfind("event: question\n", 0) == 0);
  CHECK(stream.find("event: done\n") != std::string::npos);
  // The stream ends with the done event carrying the final report.
  const auto last = stream.rfind("data: ");
  const auto final_view = json::parse(stream.substr(last + 6));
  CHECK(final_view["status"] == "done");
  CHECK_FALSE(final_view["final_report"].is_null());
  CHECK(final_view["transcript"].size() == static_cast<std::size_t>(answers));
}

TEST_CASE("event stream closes when the session is deleted") {
  Fixture f(AskPolicy::periodic(1));
  auto c = f.client();
  const auto id = body_of(c.Post("/sessions", json{{"episode_index", 0}}.dump(), "application/json"))["session_id"]
                      .get<std::string>();
  std::string stream;
  std::thread listener([&] {
    auto lc = f.client();
    lc.Get("/sessions/" + id + "/events", [&](const char* data, std::size_t n) {
      stream.append(data, n);
      return true;
    });
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(120));
  CHECK(c.Delete("/sessions/" + id)->status == 204);
  listener.join();
  CHECK(stream.find("event: closed\n") != std::string::npos);
  CHECK(c.Get("/sessions/" + id + "/events")->status == 404);
}
