#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "vdn/session.hpp"

namespace httplib {
class Server;
}

namespace vdn {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;       // 0 picks a free port
  int threads = 16;      // event streams hold a worker each
  int event_poll_ms = 1000;  // heartbeat interval on idle event streams
};

// HTTP + JSON front end over a SessionManager:
//   POST   /sessions                 create, 201 {session_id, view}
//   GET    /sessions/{id}            view
//   POST   /sessions/{id}/answer     answer, returns the next view
//   DELETE /sessions/{id}            204
//   GET    /sessions/{id}/events     text/event-stream of views
//   GET    /schemas/session_view.v1.json, GET /health
// Errors are {"error": kind, "message": text} with 404 SessionNotFound,
// 409 NoPendingQuestion, 400 InvalidConfig or malformed JSON, 500 otherwise.
class SessionServer {
 public:
  SessionServer(std::shared_ptr<SessionManager> sessions, ServerOptions options = {});
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  // Binds and returns the port; throws Error("ServerError") on failure.
  int bind();
  // Serves until stop(); call bind() first.
  void serve();
  void stop();
  int port() const { return port_; }

 private:
  void routes();

  std::shared_ptr<SessionManager> sessions_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> http_;
  std::atomic<bool> stopping_{false};
  int port_ = 0;
};

// Maps a library error kind to its HTTP status.
int http_status_for(const std::string& kind);

}  // namespace vdn
