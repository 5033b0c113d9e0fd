#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdn/askpolicy.hpp"
#include "vdn/dialogue.hpp"
#include "vdn/episodes.hpp"
#include "vdn/evalmetrics.hpp"
#include "vdn/navigator.hpp"
#include "vdn/random.hpp"
#include "vdn/toy_decoder.hpp"

namespace vdn {

inline constexpr int kDefaultMaxActions = 15;

enum class ActionSelection { Argmax, Sample };

struct RunConfig {
  std::string environments;  // JSONL, one graph per line
  std::string dataset;       // JSONL episodes
  NavigatorPolicy navigator = NavigatorPolicy::greedy_geodesic();
  AskPolicy ask = AskPolicy::never();
  std::string backend = "template";  // template | toy | human
  std::string checkpoint;            // toy decoder weights
  std::string vocabulary;            // token-per-line file; empty = template vocabulary
  int max_actions = kDefaultMaxActions;
  ActionSelection selection = ActionSelection::Argmax;
  int max_rounds = 1;  // dialogue exchanges per step
  int max_future = kDefaultFutureObservations;
  std::uint64_t seed = 0;
  int threads = 1;

  // Throws InvalidConfig. With `check_files`, referenced paths must exist.
  void validate(bool check_files = false) const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::string& path);

void save_environments(const std::string& path, const EnvironmentSet& envs);
EnvironmentSet load_environments(const std::string& path);

// The dialogue backend a config names; "human" has none (nullptr).
std::shared_ptr<const DialogueBackend> make_backend(const RunConfig& config);

struct StepRecord {
  int t = 1;
  NodeId node;
  int heading = 0;
  std::size_t candidates = 0;
  double entropy_pre = 0.0;
  std::optional<double> entropy_post;  // present iff a question was asked
  bool asked = false;
  std::vector<QAPair> exchanges;
  NodeId action;
  double action_prob = 0.0;
  std::vector<NodeId> traversed;

  bool operator==(const StepRecord&) const;
};

struct EpisodeLog {
  std::string episode_id;
  std::string env;
  std::string backend;
  std::vector<StepRecord> steps;
  std::vector<NodeId> trajectory;  // realized walk
  bool stopped = false;            // STOP chosen (vs budget exhausted)
  EpisodeMetrics metrics;
  double wall_ms = 0.0;  // not serialized unless requested

  nlohmann::json to_json(bool with_timing = false) const;
  static EpisodeLog from_json(const nlohmann::json& j);
};

// Metrics of a realized walk against the episode's reference path.
EpisodeMetrics episode_metrics(const Episode& episode, const NavGraph& graph, const std::vector<NodeId>& walk,
                               int actions, int questions);

struct PendingQuestion {
  Tokens question;
  DialogueContext context;
};

// One episode of the ask/act loop as a resumable state machine. With a
// backend the runner never pauses; without one (human oracle) it stops at
// every question and waits for answer().
class EpisodeRunner {
 public:
  EpisodeRunner(const RunConfig& config, const Episode& episode, const NavGraph& graph,
                std::shared_ptr<const DialogueBackend> backend);

  enum class Status { AwaitingAnswer, Done };

  // Runs until a question needs a human answer or the episode ends.
  Status advance();
  // Feeds an answer to the pending question and keeps going.
  Status answer(const Tokens& answer_tokens);

  bool done() const { return done_; }
  const std::optional<PendingQuestion>& pending() const { return pending_; }
  const AgentState& state() const { return state_; }
  const std::vector<Utterance>& instruction() const { return instruction_; }
  const Episode& episode() const { return episode_; }
  const NavGraph& graph() const { return *graph_; }
  const std::vector<StepRecord>& steps() const { return steps_; }
  const std::optional<StepRecord>& open_step() const { return open_; }
  int questions() const { return questions_; }
  int t() const { return t_; }
  // Complete only once done().
  EpisodeLog log() const;

 private:
  std::uint64_t step_seed(int round) const;
  void apply_exchange(const QAPair& qa);
  void rescore();
  void act();

  RunConfig config_;
  Episode episode_;
  const NavGraph* graph_;
  std::shared_ptr<const DialogueBackend> backend_;
  AgentState state_;
  std::vector<Utterance> instruction_;
  Instruction tokens_;
  Rng rng_;
  std::vector<StepRecord> steps_;
  std::optional<StepRecord> open_;
  ActionDistribution dist_;
  int rounds_ = 0;
  int t_ = 1;
  int questions_ = 0;
  bool done_ = false;
  bool stopped_ = false;
  std::optional<PendingQuestion> pending_;
};

// Runs one episode to completion with a machine backend. Errors are rethrown
// as EpisodeFailed naming the episode and step.
EpisodeLog run_episode(const RunConfig& config, const Episode& episode, const NavGraph& graph,
                       std::shared_ptr<const DialogueBackend> backend);

struct ExperimentResult {
  NavMetricsReport report;
  std::vector<EpisodeLog> logs;  // dataset order, failed episodes omitted
};

// Episodes are independent and spread over config.threads workers; the
// result does not depend on the thread count. Throws AllEpisodesFailed.
ExperimentResult run_experiment(const RunConfig& config, const std::vector<Episode>& dataset,
                                const EnvironmentSet& envs, std::shared_ptr<const DialogueBackend> backend);

// Re-executes the recorded actions; the result must equal the original log's
// trajectory and metrics.
EpisodeLog replay(const EpisodeLog& log, const Episode& episode, const NavGraph& graph);

void write_run_log(const std::string& path, const std::vector<EpisodeLog>& logs);
std::vector<EpisodeLog> read_run_log(const std::string& path);

// Up to `count` (context, question, answer) sequences drawn from the
// recorded dialogue turns in a seeded shuffle.
std::vector<DialogueSequence> dialogue_corpus(const std::vector<Episode>& episodes, const EnvironmentSet& envs,
                                              const Vocabulary& vocab, std::size_t max_length, int count,
                                              std::uint64_t seed);

struct PipelineConfig {
  std::string environments;
  std::string train_episodes;
  std::string out_dir;
  Supervision supervision = Supervision::Planner;
  bool augment = true;           // add toy-generated dialogue for stage 2
  int dialogue_corpus = 200;     // sequences used to train the toy decoder
  ToyDecoderConfig decoder;      // vocab_size filled in from the vocabulary
  DialogueTrainConfig dialogue;
  TeacherForcingConfig navigator;
  int threshold_epochs = 500;
  double threshold_lr = 0.5;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

struct PipelineArtifacts {
  std::string checkpoint;
  std::string vocabulary;
  std::string policy;
  std::string entropy_log;
  std::string threshold;
  std::string run_config;  // ready for run_experiment
  double alpha = 0.0;
};

// Stage 1 toy decoder, stage 2 teacher-forced navigator with its entropy log,
// stage 3 ask threshold. Each stage's outputs are written before the next
// one starts. `log` receives progress lines.
PipelineArtifacts train_pipeline(const PipelineConfig& config,
                                 const std::function<void(const std::string&)>& log = {});

}  // namespace vdn
