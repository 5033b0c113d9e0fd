#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdn/harness.hpp"

namespace vdn {

inline constexpr const char* kSessionViewSchema = "vdn.session_view/1";
inline constexpr std::chrono::seconds kDefaultIdleTimeout{30 * 60};

// Human-oracle sessions. Every public call is thread-safe; calls on one
// session are serialized by that session's mutex, different sessions proceed
// independently. Views are snapshots and never mutate a session.
class SessionManager {
 public:
  using Clock = std::chrono::steady_clock;

  SessionManager(EnvironmentSet envs, std::vector<Episode> episodes, RunConfig defaults,
                 std::chrono::seconds idle_timeout = kDefaultIdleTimeout);

  // Body: {"episode_id" | "episode_index" | "episode": {...}, "config": {...}}.
  // Config keys override the defaults; the backend is always the human.
  // Returns {"session_id", "view"}. Throws InvalidConfig.
  nlohmann::json create(const nlohmann::json& body);

  nlohmann::json view(const std::string& id);

  // Body: {"answer": text, "question_id": optional}. A question_id that does
  // not match the pending question is rejected as NoPendingQuestion, so a
  // resubmitted answer is never applied twice.
  nlohmann::json answer(const std::string& id, const nlohmann::json& body);

  void remove(const std::string& id);

  // Blocks until the session's version differs from `seen` or `timeout`
  // passes. Returns the version and view, or nullopt on timeout.
  std::optional<std::pair<std::uint64_t, nlohmann::json>> wait_for_change(const std::string& id,
                                                                         std::uint64_t seen,
                                                                         std::chrono::milliseconds timeout);
  std::uint64_t version(const std::string& id);

  // Drops sessions idle for longer than the timeout; returns how many.
  std::size_t expire_idle(Clock::time_point now = Clock::now());
  std::size_t size();

  const EnvironmentSet& environments() const { return envs_; }
  const std::vector<Episode>& episodes() const { return episodes_; }

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id);
  nlohmann::json render(const Session& s) const;

  EnvironmentSet envs_;
  std::vector<Episode> episodes_;
  RunConfig defaults_;
  std::chrono::seconds idle_timeout_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_;
};

// Symbolic rendering of a dialogue context: one descriptor per waypoint with
// room, objects, the turn taken there and a summary of its frontal feature.
nlohmann::json render_waypoints(const DialogueContext& context);

}  // namespace vdn
