#include "vdn/server.hpp"

#include "vdn/errors.hpp"

// After the library headers: resolv.h, pulled in here, defines a `_res` macro
// that breaks Eigen.
#include <httplib.h>

namespace vdn {

namespace embedded {
extern const char* const kSessionViewSchemaJson;
}

using nlohmann::json;

int http_status_for(const std::string& kind) {
  if (kind == "SessionNotFound") return 404;
  if (kind == "NoPendingQuestion") return 409;
  if (kind == "InvalidConfig" || kind == "FormatError") return 400;
  return 500;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& kind, const std::string& message) {
  send_json(res, http_status_for(kind), {{"error", kind}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw FormatError(std::string("request body is not JSON: ") + e.what());
  }
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_error(res, e.kind(), e.what());
  } catch (const std::exception& e) {
    send_error(res, "InternalError", e.what());
  }
}

std::string sse(const std::string& event, const json& data) {
  return "event: " + event + "\ndata: " + data.dump() + "\n\n";
}

std::string event_name(const json& view) {
  if (view.at("status") == "done") return "done";
  return view.at("pending_question").is_null() ? "view" : "question";
}

}  // namespace

SessionServer::SessionServer(std::shared_ptr<SessionManager> sessions, ServerOptions options)
    : sessions_(std::move(sessions)), options_(std::move(options)), http_(std::make_unique<httplib::Server>()) {
  if (!sessions_) throw InvalidConfig("server needs a session manager");
  if (options_.threads < 1) throw InvalidConfig("server needs at least one thread");
  if (options_.event_poll_ms < 1) throw InvalidConfig("event poll interval must be positive");
  const auto threads = static_cast<std::size_t>(options_.threads);
  http_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  routes();
}

SessionServer::~SessionServer() { stop(); }

void SessionServer::routes() {
  auto& s = *http_;
  auto sessions = sessions_;

  s.set_pre_routing_handler([sessions](const httplib::Request&, httplib::Response&) {
    sessions->expire_idle();
    return httplib::Server::HandlerResponse::Unhandled;
  });

  s.Get("/health", [sessions](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"sessions", sessions->size()}, {"schema", kSessionViewSchema}});
  });

  s.Get("/schemas/session_view.v1.json", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(embedded::kSessionViewSchemaJson, "application/schema+json");
  });

  s.Post("/sessions", [sessions](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, sessions->create(parse_body(req))); });
  });

  s.Get(R"(/sessions/([^/]+))", [sessions](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, sessions->view(req.matches[1])); });
  });

  s.Post(R"(/sessions/([^/]+)/answer)", [sessions](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, sessions->answer(req.matches[1], parse_body(req))); });
  });

  s.Delete(R"(/sessions/([^/]+))", [sessions](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      sessions->remove(req.matches[1]);
      res.status = 204;
    });
  });

  const auto poll = std::chrono::milliseconds(options_.event_poll_ms);
  auto* stopping = &stopping_;
  s.Get(R"(/sessions/([^/]+)/events)", [sessions, poll, stopping](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    json first;
    std::uint64_t v0 = 0;
    try {
      v0 = sessions->version(id);
      first = sessions->view(id);
    } catch (const Error& e) {
      send_error(res, e.kind(), e.what());
      return;
    }
    res.set_header("Cache-Control", "no-cache");
    // The first chunk is the current view; later chunks follow each change.
    auto seen = std::make_shared<std::optional<std::uint64_t>>();
    auto initial = v0;
    res.set_chunked_content_provider(
        "text/event-stream", [sessions, id, poll, stopping, seen, first, initial](std::size_t, httplib::DataSink& sink) {
          auto finish = [&](const std::string& chunk) {
            sink.write(chunk.data(), chunk.size());
            sink.done();
            return true;
          };
          try {
            if (!*seen) {
              *seen = initial;
              const auto chunk = sse(event_name(first), first);
              if (first.at("status") == "done") return finish(chunk);
              return sink.write(chunk.data(), chunk.size());
            }
            if (stopping->load()) return finish(sse("closed", {{"reason", "server stopping"}}));
            const auto change = sessions->wait_for_change(id, **seen, poll);
            if (!change) {
              const std::string beat = ": keepalive\n\n";
              return sink.write(beat.data(), beat.size());
            }
            *seen = change->first;
            const auto chunk = sse(event_name(change->second), change->second);
            if (change->second.at("status") == "done") return finish(chunk);
            return sink.write(chunk.data(), chunk.size());
          } catch (const SessionNotFound&) {
            return finish(sse("closed", {{"reason", "session removed"}}));
          }
        });
  });
}

int SessionServer::bind() {
  if (options_.port == 0) {
    port_ = http_->bind_to_any_port(options_.host);
    if (port_ < 0) throw Error("ServerError", "cannot bind " + options_.host);
  } else {
    if (!http_->bind_to_port(options_.host, options_.port)) {
      throw Error("ServerError", "cannot bind " + options_.host + ":" + std::to_string(options_.port));
    }
    port_ = options_.port;
  }
  return port_;
}

void SessionServer::serve() {
  if (port_ == 0) bind();
  http_->listen_after_bind();
}

void SessionServer::stop() {
  stopping_ = true;
  if (http_ && http_->is_running()) http_->stop();
}

}  // namespace vdn
