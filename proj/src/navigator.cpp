#include "vdn/navigator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vdn/errors.hpp"
#include "vdn/random.hpp"

namespace vdn {

namespace {

// Words that end an instruction ("... , stop .").
bool is_terminal_word(const std::string& w) { return w == "stop"; }

// "living room" and "dining room" share "room"; it carries no location.
bool is_keyword(const std::string& w) { return w != "room"; }

double keyword_overlap(const Node& node, const Instruction& instruction) {
  std::set<std::string> labels;
  for (auto& t : node.label_tokens()) {
    if (is_keyword(t)) labels.insert(std::move(t));
  }
  double n = 0.0;
  for (const auto& t : labels) n += instruction.words.count(t) ? 1.0 : 0.0;
  return n;
}

}  // namespace

AgentState AgentState::start(const NavGraph& graph, const NodeId& node, int heading) {
  graph.index_of(node);
  AgentState s;
  s.current = node;
  s.heading = ((heading % kSectors) + kSectors) % kSectors;
  s.visited = {node};
  return update_map(std::move(s), graph);
}

AgentState update_map(AgentState state, const NavGraph& graph) {
  const auto idx = graph.index_of(state.current);
  state.observed.insert(state.current);
  for (const auto& e : graph.neighbors(idx)) state.observed.insert(graph.node(e.to).id);
  return state;
}

Instruction Instruction::from_tokens(Tokens tokens, int feature_dim) {
  Instruction in;
  in.tokens = std::move(tokens);
  for (const auto& t : in.tokens) {
    in.words.insert(t);
    in.has_stop_phrase = in.has_stop_phrase || is_terminal_word(t);
  }
  in.embedding = embed_words(in.tokens, feature_dim);
  return in;
}

ActionFeatures action_features(const AgentState& state, const NavGraph& graph,
                               const Instruction& instruction, const NodeId& candidate) {
  const auto cur = graph.index_of(state.current);
  const Node& here = graph.node(cur);
  if (candidate == kStop) {
    return {0.0, keyword_overlap(here, instruction), 0.0,
            cosine(here.panorama[static_cast<std::size_t>(state.heading)], instruction.embedding),
            instruction.has_stop_phrase ? 1.0 : 0.0};
  }
  if (!graph.contains(candidate) || !state.observed.count(candidate)) {
    throw UnknownCandidate("candidate " + candidate + " is not an observed node");
  }
  const auto c = graph.index_of(candidate);
  const Node& node = graph.node(c);
  const bool visited = std::find(state.visited.begin(), state.visited.end(), candidate) != state.visited.end();
  const int sector = c == cur ? state.heading : sector_of_bearing(bearing_deg(here.position, node.position));
  return {-graph.distance(cur, c), keyword_overlap(node, instruction), visited ? 1.0 : 0.0,
          cosine(node.panorama[static_cast<std::size_t>(sector)], instruction.embedding), 0.0};
}

const char* variant_name(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::GreedyGeodesic: return "greedy-geodesic";
    case PolicyVariant::KeywordMatch: return "keyword-match";
    case PolicyVariant::TrainableLinear: return "trainable-linear";
    case PolicyVariant::Random: return "random";
  }
  return "?";
}

PolicyVariant variant_from_name(const std::string& name) {
  for (auto v : {PolicyVariant::GreedyGeodesic, PolicyVariant::KeywordMatch, PolicyVariant::TrainableLinear,
                 PolicyVariant::Random}) {
    if (name == variant_name(v)) return v;
  }
  throw InvalidConfig("unknown navigator variant: " + name);
}

NavigatorPolicy NavigatorPolicy::keyword_match(double tau) {
  // Keywords dominate; distance breaks ties towards nearby nodes and revisits
  // are discouraged. Stops where the instruction says so.
  return {PolicyVariant::KeywordMatch, tau, {0.05, 1.0, -0.5, 0.0, 2.0}, -0.5};
}

NavigatorPolicy NavigatorPolicy::greedy_geodesic(double tau) { return {PolicyVariant::GreedyGeodesic, tau, {}, 0.0}; }

NavigatorPolicy NavigatorPolicy::random() { return {PolicyVariant::Random, 1.0, {}, 0.0}; }

NavigatorPolicy NavigatorPolicy::trainable(double tau) { return {PolicyVariant::TrainableLinear, tau, {}, 0.0}; }

void NavigatorPolicy::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidConfig("temperature must be positive");
  for (double w : weights) {
    if (!std::isfinite(w)) throw InvalidConfig("non-finite navigator weight");
  }
  if (!std::isfinite(stop_bias)) throw InvalidConfig("non-finite stop bias");
}

nlohmann::json NavigatorPolicy::to_json() const {
  return {{"variant", variant_name(variant)},
          {"tau", tau},
          {"weights", std::vector<double>(weights.begin(), weights.end())},
          {"stop_bias", stop_bias}};
}

NavigatorPolicy NavigatorPolicy::from_json(const nlohmann::json& j) {
  try {
    NavigatorPolicy p;
    p.variant = variant_from_name(j.at("variant").get<std::string>());
    p.tau = j.value("tau", 1.0);
    if (j.contains("weights")) {
      const auto w = j.at("weights").get<std::vector<double>>();
      if (w.size() != kActionFeatures) {
        throw DimensionMismatch("navigator expects " + std::to_string(kActionFeatures) + " weights");
      }
      std::copy(w.begin(), w.end(), p.weights.begin());
    }
    p.stop_bias = j.value("stop_bias", 0.0);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("navigator policy: ") + e.what());
  }
}

std::size_t ActionDistribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::size_t ActionDistribution::index_of(const NodeId& action) const {
  const auto it = std::find(actions.begin(), actions.end(), action);
  if (it == actions.end()) throw IllegalAction("action " + action + " is not a candidate");
  return static_cast<std::size_t>(it - actions.begin());
}

std::vector<NodeId> candidate_actions(const AgentState& state) {
  std::vector<NodeId> out;
  out.reserve(state.observed.size());
  for (const auto& n : state.observed) {
    if (n != state.current) out.push_back(n);
  }
  out.push_back(kStop);
  return out;
}

ActionDistribution softmax_distribution(std::vector<NodeId> actions, std::vector<double> scores, double tau) {
  if (!(tau > 0.0)) throw InvalidConfig("temperature must be positive");
  ActionDistribution d;
  d.actions = std::move(actions);
  d.scores = std::move(scores);
  const double top = *std::max_element(d.scores.begin(), d.scores.end());
  d.probs.resize(d.scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < d.scores.size(); ++i) {
    d.probs[i] = std::exp((d.scores[i] - top) / tau);
    z += d.probs[i];
  }
  double h = 0.0;
  for (auto& p : d.probs) {
    p /= z;
    if (p > 0.0) h -= p * std::log(p);
  }
  d.entropy = h;
  return d;
}

ActionDistribution score(const NavigatorPolicy& policy, const AgentState& state, const NavGraph& graph,
                         const Instruction& instruction, const std::optional<NodeId>& target) {
  if (graph.size() < 2) throw NoCandidates("graph " + graph.env_id() + " has a single node");
  auto actions = candidate_actions(state);
  std::vector<double> scores(actions.size(), 0.0);
  switch (policy.variant) {
    case PolicyVariant::Random:
      break;
    case PolicyVariant::GreedyGeodesic: {
      if (!target) throw InvalidConfig("greedy-geodesic navigator needs the target node");
      const auto t = graph.index_of(*target);
      for (std::size_t i = 0; i < actions.size(); ++i) {
        const auto& a = actions[i] == kStop ? state.current : actions[i];
        scores[i] = -graph.distance(graph.index_of(a), t);
      }
      break;
    }
    case PolicyVariant::KeywordMatch:
    case PolicyVariant::TrainableLinear:
      for (std::size_t i = 0; i < actions.size(); ++i) {
        const auto f = action_features(state, graph, instruction, actions[i]);
        double s = actions[i] == kStop ? policy.stop_bias : 0.0;
        for (int k = 0; k < kActionFeatures; ++k) s += policy.weights[k] * f[k];
        scores[i] = s;
      }
      break;
  }
  return softmax_distribution(std::move(actions), std::move(scores), policy.tau);
}

ExecuteResult execute(const AgentState& state, const NavGraph& graph, const NodeId& action) {
  ExecuteResult r{state, {}, false};
  if (action == kStop) {
    r.done = true;
    return r;
  }
  if (action == state.current) throw IllegalAction("the current node " + action + " is masked");
  if (!state.observed.count(action)) throw IllegalAction("node " + action + " has not been observed");
  const auto path = dijkstra(graph, state.current, action);
  auto& s = r.state;
  for (std::size_t i = 1; i < path.nodes.size(); ++i) {
    const auto a = graph.index_of(path.nodes[i - 1]);
    const auto b = graph.index_of(path.nodes[i]);
    s.path_length += *graph.edge_weight(a, b);
    s.heading = sector_of_bearing(bearing_deg(graph.node(a).position, graph.node(b).position));
    s.current = path.nodes[i];
    s.visited.push_back(path.nodes[i]);
    r.traversed.push_back(path.nodes[i]);
    s = update_map(std::move(s), graph);
  }
  s.steps_taken = static_cast<int>(s.visited.size()) - 1;
  return r;
}

bool continues_walk(const NDHInstance& prev, const NDHInstance& next) {
  return prev.supervision == Supervision::Player && next.supervision == Supervision::Player &&
         prev.parent_id == next.parent_id && prev.env == next.env && prev.synthetic == next.synthetic &&
         next.turn_index == prev.turn_index + 1 && !prev.path.empty() && !next.path.empty() &&
         prev.path.back() == next.path.front();
}

std::vector<SupervisedStep> supervised_steps(const NDHInstance& instance, const NavGraph& graph,
                                             const AgentState* from) {
  std::vector<SupervisedStep> out;
  if (instance.path.empty()) return out;
  if (from && from->current != instance.path.front()) {
    throw InvalidEpisode("segment " + instance.id() + " does not start where the walk stands");
  }
  auto state = from ? *from : AgentState::start(graph, instance.path.front(), instance.start_heading);
  for (std::size_t i = 1; i < instance.path.size(); ++i) {
    out.push_back({state, instance.path[i]});
    state = execute(state, graph, instance.path[i]).state;
  }
  // Only segments that end at the goal teach STOP.
  if (instance.path.back() == instance.target_node) out.push_back({state, kStop});
  return out;
}

LinearGradient linear_loss_and_gradient(const NavigatorPolicy& policy, const AgentState& state,
                                        const NavGraph& graph, const Instruction& instruction,
                                        const NodeId& gold) {
  const auto d = score(policy, state, graph, instruction);
  const auto g = d.index_of(gold);
  LinearGradient out;
  out.loss = -std::log(std::max(d.probs[g], std::numeric_limits<double>::min()));
  // dCE/ds_i = (p_i - [i == gold]) / tau, and s_i = w . f_i (+ bias for STOP).
  for (std::size_t i = 0; i < d.actions.size(); ++i) {
    const double coef = (d.probs[i] - (i == g ? 1.0 : 0.0)) / policy.tau;
    const auto f = action_features(state, graph, instruction, d.actions[i]);
    for (int k = 0; k < kActionFeatures; ++k) out.d_weights[k] += coef * f[k];
    if (d.actions[i] == kStop) out.d_stop_bias += coef;
  }
  return out;
}

namespace {

struct PreparedInstance {
  const NDHInstance* instance;
  const NavGraph* graph;
  Instruction instruction;
  Instruction before_turn;  // without the last question/answer pair
  std::vector<SupervisedStep> steps;
};

void apply(NavigatorPolicy& p, const LinearGradient& g, double scale) {
  for (int k = 0; k < kActionFeatures; ++k) p.weights[k] -= scale * g.d_weights[k];
  p.stop_bias -= scale * g.d_stop_bias;
}

void check_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw DivergedLoss("navigator loss became non-finite at " + where);
}

// Samples a rollout from the current policy; the label at each visited state
// is the first hop of the shortest path to the goal (STOP once there).
double sampled_rollout(NavigatorPolicy& policy, const PreparedInstance& pi, int budget, double scale, Rng& rng) {
  const auto& g = *pi.graph;
  auto state = AgentState::start(g, pi.instance->start, pi.instance->start_heading);
  double total = 0.0;
  int n = 0;
  for (int step = 0; step < budget; ++step) {
    const NodeId gold = state.current == pi.instance->target_node
                            ? kStop
                            : dijkstra(g, state.current, pi.instance->target_node).nodes[1];
    const auto grad = linear_loss_and_gradient(policy, state, g, pi.instruction, gold);
    check_finite(grad.loss, pi.instance->id());
    apply(policy, grad, scale);
    total += grad.loss;
    ++n;
    const auto d = score(policy, state, g, pi.instruction);
    double u = rng.uniform();
    std::size_t pick = d.probs.size() - 1;
    for (std::size_t i = 0; i < d.probs.size(); ++i) {
      if (u < d.probs[i]) {
        pick = i;
        break;
      }
      u -= d.probs[i];
    }
    const auto next = execute(state, g, d.actions[pick]);
    if (next.done) break;
    state = next.state;
  }
  return n ? total / n : 0.0;
}

}  // namespace

TeacherForcingResult train_teacher_forcing(const NavigatorPolicy& init, const std::vector<NDHInstance>& dataset,
                                           const EnvironmentSet& envs, const TeacherForcingConfig& config) {
  if (dataset.empty()) throw InvalidConfig("teacher forcing needs a non-empty dataset");
  if (init.variant != PolicyVariant::TrainableLinear) {
    throw InvalidConfig("teacher forcing trains the trainable-linear navigator only");
  }
  if (config.epochs < 0 || !(config.lr > 0.0)) throw InvalidConfig("invalid teacher-forcing schedule");
  init.validate();

  std::vector<PreparedInstance> prepared;
  prepared.reserve(dataset.size());
  std::optional<AgentState> carried;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& inst = dataset[i];
    const auto& g = environment(envs, inst.env);
    auto before = inst.instruction;
    before.resize(before.size() >= 2 ? before.size() - 2 : 0);
    const bool chained = i > 0 && carried && continues_walk(dataset[i - 1], inst);
    auto steps = supervised_steps(inst, g, chained ? &*carried : nullptr);
    // Map state after the segment's last move, for the next segment.
    carried.reset();
    if (inst.path.size() >= 2) {
      const auto& last = steps[inst.path.size() - 2];
      carried = execute(last.state, g, last.gold).state;
    } else if (!steps.empty()) {
      carried = steps.front().state;
    }
    prepared.push_back({&inst, &g, Instruction::from_tokens(instruction_tokens(inst.target_object, inst.instruction), g.feature_dim()),
                        Instruction::from_tokens(instruction_tokens(inst.target_object, before), g.feature_dim()),
                        std::move(steps)});
  }

  TeacherForcingResult out;
  out.policy = init;
  auto& policy = out.policy;
  Rng rng(config.seed);

  auto corpus_ce = [&] {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& pi : prepared) {
      for (const auto& s : pi.steps) {
        total += linear_loss_and_gradient(policy, s.state, *pi.graph, pi.instruction, s.gold).loss;
        ++n;
      }
    }
    return n ? total / static_cast<double>(n) : 0.0;
  };

  std::vector<std::size_t> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t n = 0;
    for (auto idx : order) {
      const auto& pi = prepared[idx];
      if (pi.steps.empty()) continue;
      // One update per instance on the mean teacher-forcing CE.
      LinearGradient acc;
      for (const auto& s : pi.steps) {
        const auto g = linear_loss_and_gradient(policy, s.state, *pi.graph, pi.instruction, s.gold);
        check_finite(g.loss, pi.instance->id());
        acc.loss += g.loss;
        for (int k = 0; k < kActionFeatures; ++k) acc.d_weights[k] += g.d_weights[k];
        acc.d_stop_bias += g.d_stop_bias;
      }
      total += acc.loss;
      n += pi.steps.size();
      apply(policy, acc, config.lr * config.ml_weight / static_cast<double>(pi.steps.size()));
      if (config.sample_rollouts && config.sample_weight > 0.0) {
        const int budget = static_cast<int>(pi.steps.size()) + config.rollout_extra_steps;
        sampled_rollout(policy, pi, budget, config.lr * config.sample_weight / budget, rng);
      }
    }
    out.loss_curve.push_back(n ? total / static_cast<double>(n) : 0.0);
    check_finite(out.loss_curve.back(), "epoch " + std::to_string(epoch));
  }
  out.loss_curve.push_back(corpus_ce());

  for (const auto& pi : prepared) {
    for (std::size_t i = 0; i < pi.steps.size(); ++i) {
      const bool turn_here = i == 0;
      const auto& in = turn_here ? pi.before_turn : pi.instruction;
      const auto d = score(policy, pi.steps[i].state, *pi.graph, in);
      out.entropy_log.push_back({d.entropy, turn_here ? 1 : 0, pi.instance->id(), static_cast<int>(i) + 1});
    }
  }
  return out;
}

}  // namespace vdn
