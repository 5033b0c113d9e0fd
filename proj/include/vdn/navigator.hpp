#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdn/askpolicy.hpp"
#include "vdn/episodes.hpp"
#include "vdn/navgraph.hpp"
#include "vdn/text.hpp"

namespace vdn {

inline constexpr int kActionFeatures = 5;
inline const NodeId kStop = "<stop>";

using ActionFeatures = std::array<double, kActionFeatures>;

struct AgentState {
  NodeId current;
  int heading = 0;                 // sector of the last traversed edge
  std::vector<NodeId> visited;     // realized walk, current last
  std::set<NodeId> observed;       // visited nodes and all their neighbours
  int steps_taken = 0;             // |visited| - 1
  double path_length = 0.0;

  static AgentState start(const NavGraph& graph, const NodeId& node, int heading);
  bool operator==(const AgentState&) const = default;
};

// Adds the current node and its neighbours to `observed`. Idempotent.
AgentState update_map(AgentState state, const NavGraph& graph);

// Tokens plus the derived lookups every candidate needs.
struct Instruction {
  Tokens tokens;
  std::set<std::string> words;
  Feature embedding;
  bool has_stop_phrase = false;

  static Instruction from_tokens(Tokens tokens, int feature_dim);
};

// [-geodesic(current, c), keyword overlap, visited flag, cosine(frontal view
// of c, instruction embedding), stop phrase]. For STOP the first and third
// are 0, overlap and cosine use the current node, and the last is 1 when the
// instruction contains a terminal phrase.
ActionFeatures action_features(const AgentState& state, const NavGraph& graph,
                               const Instruction& instruction, const NodeId& candidate);

enum class PolicyVariant { GreedyGeodesic, KeywordMatch, TrainableLinear, Random };

const char* variant_name(PolicyVariant v);
PolicyVariant variant_from_name(const std::string& name);

struct NavigatorPolicy {
  PolicyVariant variant = PolicyVariant::TrainableLinear;
  double tau = 1.0;
  ActionFeatures weights{};
  double stop_bias = 0.0;  // constant added to the STOP score

  // Fixed weights of the keyword-match heuristic.
  static NavigatorPolicy keyword_match(double tau = 1.0);
  static NavigatorPolicy greedy_geodesic(double tau = 1.0);
  static NavigatorPolicy random();
  static NavigatorPolicy trainable(double tau = 1.0);

  void validate() const;
  nlohmann::json to_json() const;
  static NavigatorPolicy from_json(const nlohmann::json& j);
  bool operator==(const NavigatorPolicy&) const = default;
};

struct ActionDistribution {
  std::vector<NodeId> actions;  // observed nodes except current (id order), then STOP
  std::vector<double> scores;
  std::vector<double> probs;
  double entropy = 0.0;  // nats

  std::size_t argmax() const;  // first maximum
  std::size_t index_of(const NodeId& action) const;  // throws IllegalAction
};

std::vector<NodeId> candidate_actions(const AgentState& state);

// Softmax of scores / tau. Greedy-geodesic needs `target` (privileged oracle
// access) and scores -geodesic(candidate, target).
ActionDistribution score(const NavigatorPolicy& policy, const AgentState& state, const NavGraph& graph,
                         const Instruction& instruction, const std::optional<NodeId>& target = {});

ActionDistribution softmax_distribution(std::vector<NodeId> actions, std::vector<double> scores, double tau);

struct ExecuteResult {
  AgentState state;
  std::vector<NodeId> traversed;  // nodes entered, in order (empty for STOP)
  bool done = false;
};

// Walks the shortest path to `action`, observing every node on the way.
ExecuteResult execute(const AgentState& state, const NavGraph& graph, const NodeId& action);

struct TeacherForcingConfig {
  int epochs = 30;
  double lr = 0.05;
  double ml_weight = 0.2;      // teacher-forcing term
  double sample_weight = 1.0;  // sampled-rollout term
  bool sample_rollouts = true;
  int rollout_extra_steps = 3;  // rollout budget beyond the supervision length
  std::uint64_t seed = 0;
};

struct TeacherForcingResult {
  NavigatorPolicy policy;
  std::vector<double> loss_curve;          // mean teacher-forcing CE per epoch, then final
  std::vector<EntropyRecord> entropy_log;  // one record per supervised step
};

// Cross-entropy on the supervised next node (and STOP at the end of segments
// that reach the target). Consecutive player segments of one walk share the
// agent's map. The entropy log is taken with the trained policy; the step
// where an instance's dialogue turn happens records the entropy before that
// turn's question/answer was added, with asked = 1.
TeacherForcingResult train_teacher_forcing(const NavigatorPolicy& init, const std::vector<NDHInstance>& dataset,
                                           const EnvironmentSet& envs, const TeacherForcingConfig& config);

struct SupervisedStep {
  AgentState state;
  NodeId gold;
};

// Teacher-forced states along an instance's supervision path. `from` carries
// the map of a preceding segment of the same walk; otherwise the agent starts
// fresh at the path's first node.
std::vector<SupervisedStep> supervised_steps(const NDHInstance& instance, const NavGraph& graph,
                                             const AgentState* from = nullptr);

// True when `next` picks up the recorded walk where `prev` left off: player
// supervision, same parent and origin, consecutive turns.
bool continues_walk(const NDHInstance& prev, const NDHInstance& next);

// CE and d(CE)/d(weights, stop_bias) for one supervised decision.
struct LinearGradient {
  double loss = 0.0;
  ActionFeatures d_weights{};
  double d_stop_bias = 0.0;
};
LinearGradient linear_loss_and_gradient(const NavigatorPolicy& policy, const AgentState& state,
                                        const NavGraph& graph, const Instruction& instruction,
                                        const NodeId& gold);

}  // namespace vdn
