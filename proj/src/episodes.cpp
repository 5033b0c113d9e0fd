#include "vdn/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "vdn/errors.hpp"
#include "vdn/evalmetrics.hpp"
#include "vdn/jsonl.hpp"
#include "vdn/random.hpp"

namespace vdn {

using nlohmann::json;

namespace {

// Heading (sector) on arrival at walk[j]; the episode's start heading at j = 0.
int heading_at(const NavGraph& g, const std::vector<NodeId>& walk, std::size_t j, int start_heading) {
  for (std::size_t i = j; i > 0; --i) {
    if (walk[i - 1] != walk[i])
      return sector_of_bearing(bearing_deg(g.node(walk[i - 1]).position, g.node(walk[i]).position));
  }
  return start_heading;
}

std::vector<NodeId> detour_from(const NavGraph& g, const NodeId& at, const std::set<NodeId>& avoid,
                                Rng& rng) {
  auto off_path = [&](const NodeId& from, const NodeId& exclude) {
    std::vector<NodeId> out;
    for (const auto& e : g.neighbors(g.index_of(from))) {
      const auto& id = g.node(e.to).id;
      if (!avoid.count(id) && id != exclude) out.push_back(id);
    }
    return out;
  };
  const auto first = off_path(at, at);
  if (first.empty()) return {};
  std::vector<NodeId> out{first[rng.index(first.size())]};
  if (rng.uniform_int(1, 2) == 2) {
    const auto second = off_path(out[0], at);
    if (!second.empty()) out.push_back(second[rng.index(second.size())]);
  }
  // Walk out, then retrace the same nodes back to `at`.
  for (std::size_t i = out.size() - 1; i-- > 0;) out.push_back(out[i]);
  out.push_back(at);
  return out;
}

json path_to_json(const Path& p) { return {{"nodes", p.nodes}, {"length", p.length}}; }

Path path_from_json(const json& j) {
  return {j.at("nodes").get<std::vector<NodeId>>(), j.at("length").get<double>()};
}

std::string oracle_text(const Tokens& answer) {
  return detokenize(answer) + " " + std::string(Vocabulary::kEosToken);
}

}  // namespace

void validate_episode(const Episode& ep, const NavGraph& graph) {
  auto fail = [&](const std::string& why) { throw InvalidEpisode(ep.id + ": " + why); };
  if (!graph.contains(ep.start) || !graph.contains(ep.target_node)) fail("unknown start or target node");
  if (!graph.node(ep.target_node).has_object(ep.target_object))
    fail("target object '" + ep.target_object + "' is not at the target node");
  if (ep.start_heading < 0 || ep.start_heading >= kSectors) fail("start heading out of range");
  if (ep.planner_path != dijkstra(graph, ep.start, ep.target_node)) fail("planner path is not the shortest path");
  const auto& walk = ep.player_path.nodes;
  if (walk.empty() || walk.front() != ep.start) fail("player path must start at the start node");
  if (!success(graph, walk.back(), ep.target_node)) fail("player path ends more than 3 m from the target");
  double length = 0.0;
  try {
    length = walk_length(graph, walk);
  } catch (const InvalidGraph& e) {
    fail(std::string("player path is not a walk: ") + e.what());
  }
  if (std::abs(length - ep.player_path.length) > 1e-9) fail("player path length does not match its edges");
  int last = 0;
  for (const auto& turn : ep.dialogue) {
    if (turn.time_step < 1 || turn.time_step <= last) fail("dialogue time steps must be >= 1 and increasing");
    if (static_cast<std::size_t>(turn.time_step) > walk.size() || walk[turn.time_step - 1] != turn.node)
      fail("dialogue turn node does not match the player path");
    if (turn.question.empty() || turn.answer.empty()) fail("empty question or answer");
    last = turn.time_step;
  }
}

Episode synthesize_episode(const NavGraph& graph, std::uint64_t seed, const SynthesisOptions& options) {
  if (graph.rooms().size() < 2) throw InvalidConfig("episode synthesis needs at least two rooms");
  if (options.detours > kMaxDetours) throw InvalidConfig("at most 2 detours per episode");
  if (options.gap_offset < 1 || options.gap_trials < 0 || !(options.gap_prob >= 0.0 && options.gap_prob <= 1.0))
    throw InvalidConfig("turn gaps need offset >= 1, trials >= 0 and p in [0, 1]");
  const auto targets = graph.nodes_with_objects();
  if (targets.empty()) throw NoValidTarget("environment " + graph.env_id() + " has no object labels");

  Rng rng(mix_seed(seed, fnv1a(graph.env_id())));
  const auto& target = graph.node(targets[rng.index(targets.size())]);
  Episode ep;
  ep.id = "ep-" + graph.env_id() + "-" + std::to_string(seed);
  ep.env = graph.env_id();
  ep.target_node = target.id;
  ep.target_object = target.objects[rng.index(target.objects.size())];

  std::vector<NodeId> starts;
  for (const auto& n : graph.nodes())
    if (n.room != target.room) starts.push_back(n.id);
  ep.start = starts[rng.index(starts.size())];
  ep.start_heading = static_cast<int>(rng.index(kSectors));
  ep.planner_path = dijkstra(graph, ep.start, ep.target_node);

  const auto& plan = ep.planner_path.nodes;
  const int detours = options.detours < 0 ? static_cast<int>(rng.uniform_int(0, kMaxDetours)) : options.detours;
  std::vector<std::size_t> slots(plan.size() - 1);
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  rng.shuffle(slots);
  slots.resize(std::min<std::size_t>(slots.size(), detours));
  const std::set<NodeId> on_plan(plan.begin(), plan.end());

  std::vector<NodeId> walk;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    walk.push_back(plan[i]);
    if (std::find(slots.begin(), slots.end(), i) != slots.end()) {
      for (auto& n : detour_from(graph, plan[i], on_plan, rng)) walk.push_back(std::move(n));
    }
  }
  ep.player_path = {walk, walk_length(graph, walk)};

  for (std::size_t t = 1; t <= walk.size() - 1;
       t += options.gap_offset + rng.binomial(options.gap_trials, options.gap_prob)) {
    DialogueTurn turn;
    turn.time_step = static_cast<int>(t);
    turn.node = walk[t - 1];
    turn.heading = heading_at(graph, walk, t - 1, ep.start_heading);
    const auto ctx = build_context(graph, turn.node, turn.heading, ep.target_node, ep.target_object);
    auto qa = template_generate(ctx, mix_seed(seed, t));
    turn.question = std::move(qa.question);
    turn.answer = std::move(qa.answer);
    ep.dialogue.push_back(std::move(turn));
  }
  return ep;
}

std::vector<Episode> synthesize_dataset(const EnvironmentSet& envs, int count, std::uint64_t seed) {
  if (envs.empty()) throw InvalidConfig("no environments given");
  if (count < 1) throw InvalidConfig("episode count must be >= 1");
  std::vector<const NavGraph*> graphs;
  for (const auto& [_, g] : envs) graphs.push_back(&g);
  std::vector<Episode> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto ep = synthesize_episode(*graphs[i % graphs.size()], mix_seed(seed, i));
    char id[32];
    std::snprintf(id, sizeof id, "ep%05d", i);
    ep.id = id;
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<int> inter_turn_distances(const std::vector<Episode>& dataset) {
  std::vector<int> out;
  for (const auto& ep : dataset)
    for (std::size_t i = 1; i < ep.dialogue.size(); ++i)
      out.push_back(ep.dialogue[i].time_step - ep.dialogue[i - 1].time_step);
  return out;
}

int mode_of(const std::vector<int>& values) {
  if (values.empty()) throw InvalidConfig("mode of an empty sample");
  std::map<int, int> counts;
  for (int v : values) ++counts[v];
  return std::max_element(counts.begin(), counts.end(),
                          [](const auto& a, const auto& b) { return a.second < b.second; })
      ->first;
}

const char* supervision_name(Supervision s) { return s == Supervision::Planner ? "planner" : "player"; }

Supervision supervision_from_name(const std::string& name) {
  if (name == "planner") return Supervision::Planner;
  if (name == "player") return Supervision::Player;
  throw InvalidConfig("supervision must be 'planner' or 'player', got '" + name + "'");
}

std::string NDHInstance::id() const {
  return parent_id + "#" + std::to_string(turn_index) + (synthetic ? "s" : "");
}

const NavGraph& environment(const EnvironmentSet& envs, const std::string& env) {
  const auto it = envs.find(env);
  if (it == envs.end()) throw InvalidConfig("environment '" + env + "' not loaded");
  return it->second;
}

std::vector<NDHInstance> split_ndh(const std::vector<Episode>& dataset, const EnvironmentSet& envs,
                                   Supervision supervision) {
  std::vector<NDHInstance> out;
  for (const auto& ep : dataset) {
    if (ep.dialogue.empty()) throw EmptyDialogue("episode " + ep.id + " has no dialogue turns");
    const auto& graph = environment(envs, ep.env);
    std::vector<Utterance> history;
    const auto& walk = ep.player_path.nodes;
    for (std::size_t i = 0; i < ep.dialogue.size(); ++i) {
      const auto& turn = ep.dialogue[i];
      history.push_back({"navigator", detokenize(turn.question)});
      history.push_back({"oracle", detokenize(turn.answer)});
      NDHInstance inst;
      inst.parent_id = ep.id;
      inst.turn_index = static_cast<int>(i);
      inst.env = ep.env;
      inst.target_object = ep.target_object;
      inst.target_node = ep.target_node;
      inst.start = turn.node;
      inst.start_heading = turn.heading;
      inst.instruction = history;
      inst.supervision = supervision;
      if (supervision == Supervision::Planner) {
        inst.path = dijkstra(graph, turn.node, ep.target_node).nodes;
      } else {
        const std::size_t begin = turn.time_step - 1;
        const std::size_t end = i + 1 < ep.dialogue.size() ? ep.dialogue[i + 1].time_step - 1 : walk.size() - 1;
        inst.path.assign(walk.begin() + begin, walk.begin() + end + 1);
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::vector<NDHInstance> augment_with_generated_dialogue(const std::vector<NDHInstance>& dataset,
                                                         const EnvironmentSet& envs,
                                                         const DialogueBackend& backend,
                                                         std::uint64_t seed, int max_future) {
  std::vector<NDHInstance> out = dataset;
  out.reserve(2 * dataset.size());
  for (const auto& inst : dataset) {
    NDHInstance copy = inst;
    copy.synthetic = true;
    QAPair qa;
    try {
      const auto& graph = environment(envs, inst.env);
      const auto ctx = build_context(graph, inst.start, inst.start_heading, inst.target_node,
                                     inst.target_object, max_future);
      qa = backend.generate(ctx, mix_seed(seed, fnv1a(inst.id())));
    } catch (const std::exception& e) {
      throw GenerationFailed(inst.id() + ": " + e.what());
    }
    if (qa.question.empty() || qa.answer.empty())
      throw GenerationFailed(inst.id() + ": backend produced an empty question or answer");
    if (copy.instruction.size() < 2) throw GenerationFailed(inst.id() + ": instruction has no turn to replace");
    copy.instruction[copy.instruction.size() - 2] = {"navigator", detokenize(qa.question)};
    copy.instruction.back() = {"oracle", oracle_text(qa.answer)};
    out.push_back(std::move(copy));
  }
  return out;
}

Tokens instruction_tokens(const std::string& target_object, const std::vector<Utterance>& instruction) {
  Tokens out = tokenize("find the " + target_object);
  for (const auto& u : instruction)
    for (auto& t : tokenize(u.text)) out.push_back(std::move(t));
  return out;
}

json episode_to_json(const Episode& ep) {
  json turns = json::array();
  for (const auto& t : ep.dialogue) {
    turns.push_back({{"node", t.node},
                     {"question", t.question},
                     {"answer", t.answer},
                     {"time_step", t.time_step},
                     {"heading", t.heading}});
  }
  return {{"id", ep.id},
          {"env", ep.env},
          {"start", ep.start},
          {"start_heading", ep.start_heading},
          {"target_object", ep.target_object},
          {"target_node", ep.target_node},
          {"planner_path", path_to_json(ep.planner_path)},
          {"player_path", path_to_json(ep.player_path)},
          {"dialogue", std::move(turns)}};
}

Episode episode_from_json(const json& j) {
  try {
    Episode ep;
    ep.id = j.at("id").get<std::string>();
    ep.env = j.at("env").get<std::string>();
    ep.start = j.at("start").get<std::string>();
    ep.start_heading = j.value("start_heading", 0);
    ep.target_object = j.at("target_object").get<std::string>();
    ep.target_node = j.at("target_node").get<std::string>();
    ep.planner_path = path_from_json(j.at("planner_path"));
    ep.player_path = path_from_json(j.at("player_path"));
    for (const auto& t : j.at("dialogue")) {
      ep.dialogue.push_back({t.at("node").get<std::string>(), t.at("question").get<Tokens>(),
                             t.at("answer").get<Tokens>(), t.at("time_step").get<int>(),
                             t.value("heading", 0)});
    }
    return ep;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed episode: ") + e.what());
  }
}

json ndh_to_json(const NDHInstance& inst) {
  json instr = json::array();
  for (const auto& u : inst.instruction) instr.push_back({{"speaker", u.speaker}, {"text", u.text}});
  return {{"parent_id", inst.parent_id},
          {"turn_index", inst.turn_index},
          {"env", inst.env},
          {"target_object", inst.target_object},
          {"target_node", inst.target_node},
          {"start", inst.start},
          {"start_heading", inst.start_heading},
          {"instruction", std::move(instr)},
          {"supervision", supervision_name(inst.supervision)},
          {"path", inst.path},
          {"synthetic", inst.synthetic}};
}

NDHInstance ndh_from_json(const json& j) {
  try {
    NDHInstance inst;
    inst.parent_id = j.at("parent_id").get<std::string>();
    inst.turn_index = j.at("turn_index").get<int>();
    inst.env = j.at("env").get<std::string>();
    inst.target_object = j.at("target_object").get<std::string>();
    inst.target_node = j.at("target_node").get<std::string>();
    inst.start = j.at("start").get<std::string>();
    inst.start_heading = j.value("start_heading", 0);
    for (const auto& u : j.at("instruction")) {
      Utterance utt{u.at("speaker").get<std::string>(), u.at("text").get<std::string>()};
      if (utt.speaker != "navigator" && utt.speaker != "oracle")
        throw FormatError("speaker must be 'navigator' or 'oracle'");
      inst.instruction.push_back(std::move(utt));
    }
    inst.supervision = supervision_from_name(j.at("supervision").get<std::string>());
    inst.path = j.at("path").get<std::vector<NodeId>>();
    inst.synthetic = j.value("synthetic", false);
    if (inst.path.empty()) throw FormatError("NDH instance " + inst.id() + " has an empty path");
    return inst;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed NDH instance: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw FormatError(e.what());
  }
}

void save_episodes(const std::string& path, const std::vector<Episode>& dataset) {
  std::vector<json> rows;
  for (const auto& ep : dataset) rows.push_back(episode_to_json(ep));
  write_jsonl(path, rows);
}

std::vector<Episode> load_episodes(const std::string& path) {
  std::vector<Episode> out;
  for (const auto& j : read_jsonl(path)) out.push_back(episode_from_json(j));
  return out;
}

void save_ndh(const std::string& path, const std::vector<NDHInstance>& dataset) {
  std::vector<json> rows;
  for (const auto& inst : dataset) rows.push_back(ndh_to_json(inst));
  write_jsonl(path, rows);
}

std::vector<NDHInstance> load_ndh(const std::string& path) {
  std::vector<NDHInstance> out;
  for (const auto& j : read_jsonl(path)) out.push_back(ndh_from_json(j));
  return out;
}

}  // namespace vdn
