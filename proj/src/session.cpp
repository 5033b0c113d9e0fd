#include "vdn/session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "vdn/errors.hpp"
#include "vdn/random.hpp"

namespace vdn {

using nlohmann::json;

namespace {

json vec3_json(const Vec3& p) { return {{"x", p.x}, {"y", p.y}, {"z", p.z}}; }

json feature_summary(const Feature& f) {
  double sum = 0.0;
  double sq = 0.0;
  for (float v : f) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  std::vector<int> order(f.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t top = std::min<std::size_t>(3, f.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](int a, int b) { return f[a] != f[b] ? f[a] > f[b] : a < b; });
  order.resize(top);
  return {{"dim", f.size()},
          {"mean", f.empty() ? 0.0 : sum / static_cast<double>(f.size())},
          {"l2_norm", std::sqrt(sq)},
          {"top_dims", order}};
}

Vocabulary load_vocabulary(const std::string& path) {
  if (path.empty()) return Vocabulary::from_templates();
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read vocabulary " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return Vocabulary::from_text(ss.str());
}

}  // namespace

json render_waypoints(const DialogueContext& ctx) {
  json out = json::array();
  const auto& path = ctx.path;
  for (std::size_t i = 0; i < path.size(); ++i) {
    json turn = nullptr;
    if (i + 1 < path.size()) {
      const double in = i == 0 ? ctx.heading_deg : bearing_deg(path[i - 1].position, path[i].position);
      const double next = bearing_deg(path[i].position, path[i + 1].position);
      turn = turn_word(classify_turn(heading_change(in, next)));
    }
    out.push_back({{"index", i},
                   {"node", path[i].node},
                   {"room", path[i].room},
                   {"objects", path[i].objects},
                   {"position", vec3_json(path[i].position)},
                   {"turn", turn},
                   {"is_target", i + 1 == path.size() && !ctx.path_truncated},
                   {"image_url", nullptr},
                   {"feature", feature_summary(ctx.future_obs.at(i))}});
  }
  return out;
}

struct SessionManager::Session {
  std::string id;
  std::mutex mutex;
  std::condition_variable changed;
  RunConfig config;
  Vocabulary vocab;
  std::unique_ptr<EpisodeRunner> runner;
  std::uint64_t version = 0;
  bool closed = false;
  Clock::time_point last_access;
};

SessionManager::SessionManager(EnvironmentSet envs, std::vector<Episode> episodes, RunConfig defaults,
                               std::chrono::seconds idle_timeout)
    : envs_(std::move(envs)),
      episodes_(std::move(episodes)),
      defaults_(std::move(defaults)),
      idle_timeout_(idle_timeout),
      salt_(std::random_device{}()) {
  defaults_.backend = "human";
  defaults_.validate();
  if (idle_timeout_.count() <= 0) throw InvalidConfig("idle timeout must be positive");
}

json SessionManager::create(const json& body) {
  if (!body.is_object()) throw InvalidConfig("session request must be a JSON object");
  Episode episode;
  if (body.contains("episode")) {
    try {
      episode = episode_from_json(body.at("episode"));
    } catch (const json::exception& e) {
      throw InvalidConfig(std::string("inline episode: ") + e.what());
    } catch (const FormatError& e) {
      throw InvalidConfig(e.what());
    }
    if (!envs_.count(episode.env)) throw InvalidConfig("unknown environment " + episode.env);
    try {
      validate_episode(episode, envs_.at(episode.env));
    } catch (const Error& e) {
      throw InvalidConfig(e.what());
    }
  } else if (body.contains("episode_id") && body.at("episode_id").is_string()) {
    const auto id = body.at("episode_id").get<std::string>();
    const auto it = std::find_if(episodes_.begin(), episodes_.end(), [&](const Episode& e) { return e.id == id; });
    if (it == episodes_.end()) throw InvalidConfig("unknown episode " + id);
    episode = *it;
  } else if (body.contains("episode_index") && body.at("episode_index").is_number_integer()) {
    const auto i = body.at("episode_index").get<long long>();
    if (i < 0 || i >= static_cast<long long>(episodes_.size())) throw InvalidConfig("episode index out of range");
    episode = episodes_[static_cast<std::size_t>(i)];
  } else {
    throw InvalidConfig("session request needs episode_id, episode_index or episode");
  }

  json merged = defaults_.to_json();
  if (body.contains("config")) {
    const auto& overrides = body.at("config");
    if (!overrides.is_object()) throw InvalidConfig("config overrides must be an object");
    if (overrides.contains("backend") && overrides.at("backend") != "human") {
      throw InvalidConfig("sessions use the human dialogue backend");
    }
    merged.merge_patch(overrides);
  }
  merged["backend"] = "human";
  auto s = std::make_shared<Session>();
  s->config = RunConfig::from_json(merged);
  s->vocab = load_vocabulary(s->config.vocabulary);
  const auto& graph = environment(envs_, episode.env);
  s->runner = std::make_unique<EpisodeRunner>(s->config, episode, graph, nullptr);
  s->runner->advance();
  s->last_access = Clock::now();
  {
    std::lock_guard lock(mutex_);
    const auto n = ++counter_;
    std::ostringstream id;
    id << "s" << std::hex << (mix_seed(salt_, n) & 0xffffffffffffULL) << "-" << std::dec << n;
    s->id = id.str();
    sessions_.emplace(s->id, s);
  }
  std::lock_guard lock(s->mutex);
  return {{"session_id", s->id}, {"view", render(*s)}};
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionNotFound("no session " + id);
  return it->second;
}

json SessionManager::view(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->closed) throw SessionNotFound("no session " + id);
  s->last_access = Clock::now();
  return render(*s);
}

json SessionManager::answer(const std::string& id, const json& body) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->closed) throw SessionNotFound("no session " + id);
  s->last_access = Clock::now();
  if (!body.is_object() || !body.contains("answer") || !body.at("answer").is_string()) {
    throw InvalidConfig("answer request needs an \"answer\" string");
  }
  auto& runner = *s->runner;
  if (!runner.pending()) throw NoPendingQuestion("session " + id + " has no pending question");
  const int pending_id = runner.questions() + 1;
  if (body.contains("question_id") && !body.at("question_id").is_null()) {
    const auto& q = body.at("question_id");
    if (!q.is_number_integer()) throw InvalidConfig("question_id must be an integer");
    if (q.get<long long>() != pending_id) {
      throw NoPendingQuestion("question " + q.dump() + " is not pending (pending is " + std::to_string(pending_id) + ")");
    }
  }
  // Verbatim tokenization; words outside the dialogue vocabulary become <unk>.
  Tokens tokens = tokenize(body.at("answer").get<std::string>());
  for (auto& tok : tokens) {
    if (s->vocab.id(tok) == Vocabulary::kUnk) tok = s->vocab.token(Vocabulary::kUnk);
  }
  try {
    runner.answer(tokens);
  } catch (const NoPendingQuestion&) {
    throw;
  } catch (const Error& e) {
    ++s->version;
    s->changed.notify_all();
    throw EpisodeFailed(runner.episode().id + " step " + std::to_string(runner.t()) + ": " + e.what());
  }
  ++s->version;
  s->changed.notify_all();
  return render(*s);
}

void SessionManager::remove(const std::string& id) {
  std::shared_ptr<Session> s;
  {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound("no session " + id);
    s = it->second;
    sessions_.erase(it);
  }
  std::lock_guard lock(s->mutex);
  s->closed = true;
  s->changed.notify_all();
}

std::uint64_t SessionManager::version(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return s->version;
}

std::optional<std::pair<std::uint64_t, json>> SessionManager::wait_for_change(const std::string& id,
                                                                              std::uint64_t seen,
                                                                              std::chrono::milliseconds timeout) {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  s->changed.wait_for(lock, timeout, [&] { return s->closed || s->version != seen; });
  if (s->closed) throw SessionNotFound("no session " + id);
  if (s->version == seen) return std::nullopt;
  return std::make_pair(s->version, render(*s));
}

std::size_t SessionManager::expire_idle(Clock::time_point now) {
  std::vector<std::shared_ptr<Session>> expired;
  {
    std::lock_guard lock(mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      bool idle = false;
      {
        std::unique_lock slock(it->second->mutex, std::try_to_lock);
        // A session busy with a request is not idle.
        idle = slock.owns_lock() && now - it->second->last_access > idle_timeout_;
      }
      if (idle) {
        expired.push_back(it->second);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& s : expired) {
    std::lock_guard lock(s->mutex);
    s->closed = true;
    s->changed.notify_all();
  }
  return expired.size();
}

std::size_t SessionManager::size() {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

json SessionManager::render(const Session& s) const {
  const auto& runner = *s.runner;
  const auto& graph = runner.graph();
  const auto& ep = runner.episode();
  const auto& state = runner.state();

  json nodes = json::array();
  for (const auto& n : graph.nodes()) {
    nodes.push_back({{"id", n.id}, {"x", n.position.x}, {"y", n.position.y}, {"room", n.room}, {"objects", n.objects}});
  }
  json edges = json::array();
  for (const auto& [a, b] : graph.edge_list()) edges.push_back({a, b});

  // Exchanges in the order they happened: closed steps, then the open one.
  std::vector<const StepRecord*> records;
  for (const auto& st : runner.steps()) records.push_back(&st);
  if (runner.open_step()) records.push_back(&*runner.open_step());
  json transcript = json::array();
  json last = nullptr;
  int qid = 0;
  for (const auto* st : records) {
    for (const auto& qa : st->exchanges) {
      ++qid;
      transcript.push_back(
          {{"question_id", qid}, {"t", st->t}, {"question", detokenize(qa.question)}, {"answer", detokenize(qa.answer)}});
    }
    if (!st->exchanges.empty()) {
      last = {{"question_id", qid},
              {"t", st->t},
              {"question", detokenize(st->exchanges.back().question)},
              {"answer", detokenize(st->exchanges.back().answer)},
              {"entropy_pre", st->entropy_pre},
              {"entropy_post", st->entropy_post.value_or(st->entropy_pre)}};
    }
  }

  json pending = nullptr;
  if (runner.pending()) {
    const auto& p = *runner.pending();
    pending = {{"question_id", runner.questions() + 1},
               {"t", runner.t()},
               {"question", detokenize(p.question)},
               {"k", p.context.k()},
               {"path_truncated", p.context.path_truncated},
               {"target_room", p.context.target_room},
               {"waypoints", render_waypoints(p.context)}};
  }

  const auto m = episode_metrics(ep, graph, state.visited, static_cast<int>(runner.steps().size()), runner.questions());
  json metrics = {{"goal_progress", m.goal_progress}, {"success", m.success},
                  {"spl", m.spl},                     {"ndtw", m.ndtw},
                  {"path_length", m.path_length},     {"shortest_length", m.shortest_length},
                  {"actions", m.actions},             {"questions", m.questions}};

  json final_report = nullptr;
  if (runner.done()) {
    const auto log = runner.log();
    NavMetricsReport report;
    report.add(log.metrics);
    final_report = {{"report", report.to_json()}, {"log", log.to_json()}};
  }

  std::vector<std::string> observed(state.observed.begin(), state.observed.end());
  return {{"schema", kSessionViewSchema},
          {"session_id", s.id},
          {"episode_id", ep.id},
          {"env", ep.env},
          {"target_object", ep.target_object},
          {"status", runner.done() ? "done" : "awaiting_answer"},
          {"t", runner.t()},
          {"agent", {{"node", state.current}, {"heading", state.heading}, {"position", vec3_json(graph.node(state.current).position)}}},
          {"visited", state.visited},
          {"observed", observed},
          {"graph", {{"nodes", nodes}, {"edges", edges}}},
          {"pending_question", pending},
          {"last_answered", last},
          {"transcript", transcript},
          {"metrics", metrics},
          {"final_report", final_report}};
}

}  // namespace vdn
