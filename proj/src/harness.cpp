#include "vdn/harness.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "vdn/errors.hpp"
#include "vdn/jsonl.hpp"
#include "vdn/vocabulary.hpp"

namespace vdn {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

void RunConfig::validate(bool check_files) const {
  if (max_actions < 1) throw InvalidConfig("max_actions must be at least 1");
  if (max_rounds < 0) throw InvalidConfig("max_rounds must be non-negative");
  if (max_future < 0) throw InvalidConfig("max_future must be non-negative");
  if (threads < 1) throw InvalidConfig("threads must be at least 1");
  if (backend != "template" && backend != "toy" && backend != "human") {
    throw InvalidConfig("unknown dialogue backend: " + backend);
  }
  if (backend == "toy" && checkpoint.empty()) throw InvalidConfig("toy backend needs a checkpoint");
  if (ask.variant == AskVariant::Periodic && ask.period < 1) throw InvalidConfig("period must be at least 1");
  navigator.validate();
  if (check_files) {
    for (const auto* p : {&environments, &dataset, &checkpoint, &vocabulary}) {
      if (!p->empty() && !fs::exists(*p)) throw InvalidConfig("missing file: " + *p);
    }
  }
}

json RunConfig::to_json() const {
  return {{"environments", environments},
          {"dataset", dataset},
          {"navigator", navigator.to_json()},
          {"ask", ask.to_json()},
          {"backend", backend},
          {"checkpoint", checkpoint},
          {"vocabulary", vocabulary},
          {"max_actions", max_actions},
          {"selection", selection == ActionSelection::Argmax ? "argmax" : "sample"},
          {"max_rounds", max_rounds},
          {"max_future", max_future},
          {"seed", seed},
          {"threads", threads}};
}

RunConfig RunConfig::from_json(const json& j) {
  try {
    RunConfig c;
    c.environments = j.value("environments", "");
    c.dataset = j.value("dataset", "");
    if (j.contains("navigator")) {
      const auto& n = j.at("navigator");
      c.navigator = NavigatorPolicy::from_json(n.is_string() ? read_json(n.get<std::string>()) : n);
    }
    if (j.contains("ask")) c.ask = AskPolicy::from_json(j.at("ask"));
    c.backend = j.value("backend", "template");
    c.checkpoint = j.value("checkpoint", "");
    c.vocabulary = j.value("vocabulary", "");
    c.max_actions = j.value("max_actions", kDefaultMaxActions);
    const auto sel = j.value("selection", "argmax");
    if (sel != "argmax" && sel != "sample") throw InvalidConfig("selection must be argmax or sample");
    c.selection = sel == "argmax" ? ActionSelection::Argmax : ActionSelection::Sample;
    c.max_rounds = j.value("max_rounds", 1);
    c.max_future = j.value("max_future", kDefaultFutureObservations);
    c.seed = j.value("seed", std::uint64_t{0});
    c.threads = j.value("threads", 1);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("run config: ") + e.what());
  } catch (const FormatError& e) {
    throw InvalidConfig(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const FormatError& e) {
    throw InvalidConfig(e.what());
  }
  // Relative paths are relative to the config file.
  const auto base = fs::path(path).parent_path();
  for (const char* key : {"environments", "dataset", "checkpoint", "vocabulary", "navigator"}) {
    if (j.contains(key) && j[key].is_string()) {
      const fs::path p = j[key].get<std::string>();
      if (!p.empty() && p.is_relative()) j[key] = (base / p).string();
    }
  }
  auto c = RunConfig::from_json(j);
  c.validate(true);
  return c;
}

void save_environments(const std::string& path, const EnvironmentSet& envs) {
  std::vector<json> lines;
  for (const auto& [id, g] : envs) lines.push_back(graph_to_json(g));
  write_jsonl(path, lines);
}

EnvironmentSet load_environments(const std::string& path) {
  EnvironmentSet envs;
  for (const auto& j : read_jsonl(path)) {
    auto g = graph_from_json(j);
    const auto id = g.env_id();
    if (!envs.emplace(id, std::move(g)).second) throw FormatError("duplicate environment " + id);
  }
  return envs;
}

std::shared_ptr<const DialogueBackend> make_backend(const RunConfig& config) {
  if (config.backend == "template") return std::make_shared<TemplateBackend>();
  if (config.backend == "human") return nullptr;
  if (config.backend == "toy") {
    auto model = std::make_shared<const ToyDecoder>(ToyDecoder::load(config.checkpoint));
    Vocabulary vocab = Vocabulary::from_templates();
    if (!config.vocabulary.empty()) {
      std::ifstream in(config.vocabulary);
      if (!in) throw InvalidConfig("cannot read vocabulary " + config.vocabulary);
      std::stringstream ss;
      ss << in.rdbuf();
      vocab = Vocabulary::from_text(ss.str());
    }
    if (vocab.size() != model->config().vocab_size) {
      throw DimensionMismatch("vocabulary size does not match the checkpoint");
    }
    return std::make_shared<ToyBackend>(std::move(model), std::move(vocab));
  }
  throw InvalidConfig("unknown dialogue backend: " + config.backend);
}

// ---------------------------------------------------------------- logs

namespace {

bool same_qa(const QAPair& a, const QAPair& b) {
  return a.question == b.question && a.answer == b.answer && a.question_terminated == b.question_terminated &&
         a.answer_terminated == b.answer_terminated;
}

json metrics_to_json(const EpisodeMetrics& m) {
  return {{"episode_id", m.episode_id}, {"goal_progress", m.goal_progress}, {"success", m.success},
          {"spl", m.spl},               {"ndtw", m.ndtw},                   {"shortest_length", m.shortest_length},
          {"path_length", m.path_length}, {"actions", m.actions},           {"questions", m.questions}};
}

EpisodeMetrics metrics_from_json(const json& j) {
  EpisodeMetrics m;
  m.episode_id = j.at("episode_id").get<std::string>();
  m.goal_progress = j.at("goal_progress").get<double>();
  m.success = j.at("success").get<bool>();
  m.spl = j.at("spl").get<double>();
  m.ndtw = j.at("ndtw").get<double>();
  m.shortest_length = j.at("shortest_length").get<double>();
  m.path_length = j.at("path_length").get<double>();
  m.actions = j.at("actions").get<int>();
  m.questions = j.at("questions").get<int>();
  return m;
}

}  // namespace

bool StepRecord::operator==(const StepRecord& o) const {
  if (exchanges.size() != o.exchanges.size()) return false;
  for (std::size_t i = 0; i < exchanges.size(); ++i) {
    if (!same_qa(exchanges[i], o.exchanges[i])) return false;
  }
  return t == o.t && node == o.node && heading == o.heading && candidates == o.candidates &&
         entropy_pre == o.entropy_pre && entropy_post == o.entropy_post && asked == o.asked && action == o.action &&
         action_prob == o.action_prob && traversed == o.traversed;
}

json EpisodeLog::to_json(bool with_timing) const {
  json steps_j = json::array();
  for (const auto& s : steps) {
    json ex = json::array();
    for (const auto& qa : s.exchanges) {
      ex.push_back({{"question", detokenize(qa.question)},
                    {"answer", detokenize(qa.answer)},
                    {"question_terminated", qa.question_terminated},
                    {"answer_terminated", qa.answer_terminated}});
    }
    json r = {{"t", s.t},
              {"node", s.node},
              {"heading", s.heading},
              {"candidates", s.candidates},
              {"H_pre", s.entropy_pre},
              {"asked", s.asked},
              {"exchanges", ex},
              {"action", s.action},
              {"p_action", s.action_prob},
              {"traversed", s.traversed}};
    if (s.entropy_post) r["H_post"] = *s.entropy_post;
    steps_j.push_back(std::move(r));
  }
  json j = {{"episode_id", episode_id}, {"env", env},           {"backend", backend},
            {"steps", steps_j},         {"trajectory", trajectory}, {"stopped", stopped},
            {"metrics", metrics_to_json(metrics)}};
  if (with_timing) j["wall_ms"] = wall_ms;
  return j;
}

EpisodeLog EpisodeLog::from_json(const json& j) {
  try {
    EpisodeLog log;
    log.episode_id = j.at("episode_id").get<std::string>();
    log.env = j.at("env").get<std::string>();
    log.backend = j.at("backend").get<std::string>();
    for (const auto& r : j.at("steps")) {
      StepRecord s;
      s.t = r.at("t").get<int>();
      s.node = r.at("node").get<std::string>();
      s.heading = r.at("heading").get<int>();
      s.candidates = r.at("candidates").get<std::size_t>();
      s.entropy_pre = r.at("H_pre").get<double>();
      if (r.contains("H_post")) s.entropy_post = r.at("H_post").get<double>();
      s.asked = r.at("asked").get<bool>();
      for (const auto& e : r.at("exchanges")) {
        s.exchanges.push_back({tokenize(e.at("question").get<std::string>()),
                               tokenize(e.at("answer").get<std::string>()),
                               e.value("question_terminated", true), e.value("answer_terminated", true)});
      }
      s.action = r.at("action").get<std::string>();
      s.action_prob = r.at("p_action").get<double>();
      s.traversed = r.at("traversed").get<std::vector<NodeId>>();
      log.steps.push_back(std::move(s));
    }
    log.trajectory = j.at("trajectory").get<std::vector<NodeId>>();
    log.stopped = j.at("stopped").get<bool>();
    log.metrics = metrics_from_json(j.at("metrics"));
    log.wall_ms = j.value("wall_ms", 0.0);
    return log;
  } catch (const json::exception& e) {
    throw FormatError(std::string("episode log: ") + e.what());
  }
}

void write_run_log(const std::string& path, const std::vector<EpisodeLog>& logs) {
  std::vector<json> lines;
  lines.reserve(logs.size());
  for (const auto& l : logs) lines.push_back(l.to_json());
  write_jsonl(path, lines);
}

std::vector<EpisodeLog> read_run_log(const std::string& path) {
  std::vector<EpisodeLog> out;
  for (const auto& j : read_jsonl(path)) out.push_back(EpisodeLog::from_json(j));
  return out;
}

EpisodeMetrics episode_metrics(const Episode& episode, const NavGraph& graph, const std::vector<NodeId>& walk,
                               int actions, int questions) {
  if (walk.empty()) throw EmptyPath("episode " + episode.id + " has an empty walk");
  EpisodeMetrics m;
  m.episode_id = episode.id;
  const auto& final_node = walk.back();
  m.goal_progress = goal_progress(graph, episode.start, final_node, episode.target_node);
  m.success = success(graph, final_node, episode.target_node);
  m.shortest_length = episode.planner_path.length;
  m.path_length = walk_length(graph, walk);
  m.spl = spl(m.success, m.shortest_length, m.path_length);
  const auto ref = positions(graph, episode.planner_path.nodes);
  const auto query = positions(graph, walk);
  m.ndtw = ndtw(ref, query);
  m.actions = actions;
  m.questions = questions;
  return m;
}

// ---------------------------------------------------------------- runner

EpisodeRunner::EpisodeRunner(const RunConfig& config, const Episode& episode, const NavGraph& graph,
                             std::shared_ptr<const DialogueBackend> backend)
    : config_(config),
      episode_(episode),
      graph_(&graph),
      backend_(std::move(backend)),
      rng_(mix_seed(config.seed, fnv1a(episode.id))) {
  config_.validate();
  if (episode.env != graph.env_id()) {
    throw InvalidConfig("episode " + episode.id + " belongs to " + episode.env + ", not " + graph.env_id());
  }
  state_ = AgentState::start(graph, episode.start, episode.start_heading);
  tokens_ = Instruction::from_tokens(instruction_tokens(episode.target_object, instruction_), graph.feature_dim());
}

std::uint64_t EpisodeRunner::step_seed(int round) const {
  return mix_seed(mix_seed(config_.seed, fnv1a(episode_.id)), static_cast<std::uint64_t>(t_) * 64 + round);
}

void EpisodeRunner::rescore() {
  dist_ = score(config_.navigator, state_, *graph_, tokens_, episode_.target_node);
}

void EpisodeRunner::apply_exchange(const QAPair& qa) {
  instruction_.push_back({"navigator", detokenize(qa.question)});
  instruction_.push_back({"oracle", detokenize(qa.answer)});
  tokens_ = Instruction::from_tokens(instruction_tokens(episode_.target_object, instruction_), graph_->feature_dim());
  rescore();
  open_->asked = true;
  open_->entropy_post = dist_.entropy;
  open_->exchanges.push_back(qa);
  ++questions_;
  ++rounds_;
}

void EpisodeRunner::act() {
  std::size_t pick = dist_.argmax();
  if (config_.selection == ActionSelection::Sample) {
    double u = rng_.uniform();
    pick = dist_.probs.size() - 1;
    for (std::size_t i = 0; i < dist_.probs.size(); ++i) {
      if (u < dist_.probs[i]) {
        pick = i;
        break;
      }
      u -= dist_.probs[i];
    }
  }
  const auto& action = dist_.actions[pick];
  auto r = execute(state_, *graph_, action);
  open_->action = action;
  open_->action_prob = dist_.probs[pick];
  open_->traversed = r.traversed;
  steps_.push_back(std::move(*open_));
  open_.reset();
  ++t_;
  if (r.done) {
    stopped_ = true;
    done_ = true;
    return;
  }
  state_ = std::move(r.state);
  if (t_ > config_.max_actions) done_ = true;
}

EpisodeRunner::Status EpisodeRunner::advance() {
  while (!done_) {
    if (pending_) return Status::AwaitingAnswer;
    if (!open_) {
      open_ = StepRecord{};
      open_->t = t_;
      open_->node = state_.current;
      open_->heading = state_.heading;
      rescore();
      open_->candidates = dist_.actions.size();
      open_->entropy_pre = dist_.entropy;
      rounds_ = 0;
    }
    if (rounds_ < config_.max_rounds) {
      const double h = open_->entropy_post.value_or(open_->entropy_pre);
      const double u = config_.ask.stochastic ? rng_.uniform() : 0.5;
      if (should_ask(config_.ask, h, t_, u)) {
        const auto ctx = build_context(*graph_, state_.current, state_.heading, episode_.target_node,
                                       episode_.target_object, config_.max_future);
        if (backend_) {
          apply_exchange(backend_->generate(ctx, step_seed(rounds_)));
          continue;
        }
        pending_ = PendingQuestion{template_question(ctx, step_seed(rounds_)), ctx};
        return Status::AwaitingAnswer;
      }
    }
    act();
  }
  return Status::Done;
}

EpisodeRunner::Status EpisodeRunner::answer(const Tokens& answer_tokens) {
  if (!pending_) throw NoPendingQuestion("episode " + episode_.id + " has no pending question");
  QAPair qa{pending_->question, answer_tokens};
  pending_.reset();
  apply_exchange(qa);
  return advance();
}

EpisodeLog EpisodeRunner::log() const {
  EpisodeLog log;
  log.episode_id = episode_.id;
  log.env = episode_.env;
  log.backend = backend_ ? backend_->name() : "human";
  log.steps = steps_;
  log.trajectory = state_.visited;
  log.stopped = stopped_;
  log.metrics = episode_metrics(episode_, *graph_, state_.visited, static_cast<int>(steps_.size()), questions_);
  return log;
}

EpisodeLog run_episode(const RunConfig& config, const Episode& episode, const NavGraph& graph,
                       std::shared_ptr<const DialogueBackend> backend) {
  if (!backend) throw InvalidConfig("run_episode needs a machine dialogue backend");
  const auto t0 = std::chrono::steady_clock::now();
  EpisodeRunner runner(config, episode, graph, backend);
  try {
    runner.advance();
  } catch (const Error& e) {
    throw EpisodeFailed(episode.id + " step " + std::to_string(runner.t()) + ": " + e.what());
  }
  auto log = runner.log();
  log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

ExperimentResult run_experiment(const RunConfig& config, const std::vector<Episode>& dataset,
                                const EnvironmentSet& envs, std::shared_ptr<const DialogueBackend> backend) {
  if (dataset.empty()) throw InvalidConfig("empty dataset");
  config.validate();
  std::vector<std::optional<EpisodeLog>> logs(dataset.size());
  std::vector<std::string> errors(dataset.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      try {
        const auto it = envs.find(dataset[i].env);
        if (it == envs.end()) throw InvalidConfig("unknown environment " + dataset[i].env);
        logs[i] = run_episode(config, dataset[i], it->second, backend);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      }
    }
  };
  const int n = std::min<int>(config.threads, static_cast<int>(dataset.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  ExperimentResult out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (logs[i]) {
      out.report.add(logs[i]->metrics);
      out.logs.push_back(std::move(*logs[i]));
    } else {
      out.report.add_failure({dataset[i].id, errors[i]});
    }
  }
  if (out.logs.empty()) {
    throw AllEpisodesFailed("all " + std::to_string(dataset.size()) + " episodes failed; first: " + errors.front());
  }
  return out;
}

EpisodeLog replay(const EpisodeLog& log, const Episode& episode, const NavGraph& graph) {
  if (log.episode_id != episode.id) throw InvalidConfig("log belongs to " + log.episode_id);
  auto state = AgentState::start(graph, episode.start, episode.start_heading);
  EpisodeLog out = log;
  bool stopped = false;
  int questions = 0;
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    const auto& s = log.steps[i];
    if (s.node != state.current) {
      throw EpisodeFailed(log.episode_id + " step " + std::to_string(s.t) + ": recorded node " + s.node +
                          " but replay is at " + state.current);
    }
    questions += static_cast<int>(s.exchanges.size());
    auto r = execute(state, graph, s.action);
    out.steps[i].traversed = r.traversed;
    if (r.done) {
      stopped = true;
      break;
    }
    state = std::move(r.state);
  }
  out.trajectory = state.visited;
  out.stopped = stopped;
  out.metrics = episode_metrics(episode, graph, state.visited, static_cast<int>(log.steps.size()), questions);
  return out;
}

}  // namespace vdn
