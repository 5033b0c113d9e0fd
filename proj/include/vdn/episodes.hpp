#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdn/dialogue.hpp"
#include "vdn/navgraph.hpp"
#include "vdn/text.hpp"

namespace vdn {

// Inter-turn gaps are offset + Binomial(trials, p): mean 5.64 steps, mode 6
// on unbounded walks and 5 once gaps that overrun short walks are cut.
inline constexpr int kTurnGapOffset = 3;
inline constexpr int kTurnGapTrials = 6;
inline constexpr double kTurnGapProb = 0.44;
inline constexpr int kMaxDetours = 2;

using EnvironmentSet = std::map<std::string, NavGraph>;

struct DialogueTurn {
  NodeId node;
  Tokens question;
  Tokens answer;
  int time_step = 1;  // the agent is at player_path[time_step - 1]
  int heading = 0;    // sector the agent faces when asking

  bool operator==(const DialogueTurn&) const = default;
};

struct Episode {
  std::string id;
  std::string env;
  NodeId start;
  int start_heading = 0;
  std::string target_object;
  NodeId target_node;
  Path planner_path;
  Path player_path;
  std::vector<DialogueTurn> dialogue;

  bool operator==(const Episode&) const = default;
};

// Throws InvalidEpisode naming the first violated invariant.
void validate_episode(const Episode& ep, const NavGraph& graph);

struct SynthesisOptions {
  int detours = -1;  // -1: uniform in [0, kMaxDetours]
  int gap_offset = kTurnGapOffset;
  int gap_trials = kTurnGapTrials;
  double gap_prob = kTurnGapProb;
};

Episode synthesize_episode(const NavGraph& graph, std::uint64_t seed, const SynthesisOptions& options = {});

// `count` episodes spread round-robin over `envs` (ordered by id).
std::vector<Episode> synthesize_dataset(const EnvironmentSet& envs, int count, std::uint64_t seed);

// Step distances between consecutive dialogue turns, over all episodes.
std::vector<int> inter_turn_distances(const std::vector<Episode>& dataset);
// Most frequent value; ties go to the smaller value.
int mode_of(const std::vector<int>& values);

enum class Supervision { Planner, Player };
const char* supervision_name(Supervision s);
Supervision supervision_from_name(const std::string& name);

struct Utterance {
  std::string speaker;  // "navigator" | "oracle"
  std::string text;
  bool operator==(const Utterance&) const = default;
};

struct NDHInstance {
  std::string parent_id;
  int turn_index = 0;  // 0-based index of the last turn in the instruction
  std::string env;
  std::string target_object;
  NodeId target_node;
  NodeId start;
  int start_heading = 0;
  std::vector<Utterance> instruction;
  Supervision supervision = Supervision::Planner;
  std::vector<NodeId> path;
  bool synthetic = false;

  std::string id() const;
  bool operator==(const NDHInstance&) const = default;
};

// One instance per dialogue turn. The instruction holds turns 0..i; planner
// supervision is the shortest path from the turn's node to the target, player
// supervision the recorded walk up to the next turn's node (or the end).
std::vector<NDHInstance> split_ndh(const std::vector<Episode>& dataset, const EnvironmentSet& envs,
                                   Supervision supervision);

const NavGraph& environment(const EnvironmentSet& envs, const std::string& env);

// Returns the originals followed by one synthetic copy of each, whose last
// question/answer pair comes from `backend`. Generated answers end with the
// end-of-answer marker.
std::vector<NDHInstance> augment_with_generated_dialogue(const std::vector<NDHInstance>& dataset,
                                                         const EnvironmentSet& envs,
                                                         const DialogueBackend& backend,
                                                         std::uint64_t seed,
                                                         int max_future = kDefaultFutureObservations);

// Instruction tokens: "find the {object}" followed by every utterance.
Tokens instruction_tokens(const std::string& target_object, const std::vector<Utterance>& instruction);

nlohmann::json episode_to_json(const Episode& ep);
Episode episode_from_json(const nlohmann::json& j);
nlohmann::json ndh_to_json(const NDHInstance& inst);
NDHInstance ndh_from_json(const nlohmann::json& j);

void save_episodes(const std::string& path, const std::vector<Episode>& dataset);
std::vector<Episode> load_episodes(const std::string& path);
void save_ndh(const std::string& path, const std::vector<NDHInstance>& dataset);
std::vector<NDHInstance> load_ndh(const std::string& path);

}  // namespace vdn
