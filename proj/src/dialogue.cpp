#include "vdn/dialogue.hpp"

#include <algorithm>
#include <cmath>

#include "vdn/errors.hpp"
#include "vdn/random.hpp"

namespace vdn {

namespace {

Exit make_exit(const Node& n) { return {n.id, n.position, n.room, n.objects}; }

Waypoint make_waypoint(const NavGraph& graph, std::size_t index) {
  const auto& n = graph.node(index);
  Waypoint w{n.id, n.position, n.room, n.objects, {}};
  for (const auto& e : graph.neighbors(index)) w.exits.push_back(make_exit(graph.node(e.to)));
  return w;
}

double canonical_angle(Turn t) {
  switch (t) {
    case Turn::Straight: return 0.0;
    case Turn::Left: return 90.0;
    case Turn::Right: return -90.0;
    case Turn::Around: return 180.0;
  }
  return 0.0;
}

struct Directive {
  Turn turn = Turn::Straight;
  std::string room;    // "into the {room}", empty when the edge stays in the room
  std::string object;  // "towards the {object}"
  int ordinal = 0;     // 1-based "take the {ordinal} ..."
};

// The exits of `from` a listener would consider for `d`, best first: same
// turn class, matching landmarks, closest to the class's canonical angle.
std::vector<const Exit*> matching_exits(const Waypoint& from, double heading, const Directive& d) {
  std::vector<std::pair<double, const Exit*>> ranked;
  for (const auto& e : from.exits) {
    const double change = heading_change(heading, bearing_deg(from.position, e.position));
    if (classify_turn(change) != d.turn) continue;
    if (!d.room.empty() && e.room != d.room) continue;
    if (!d.object.empty() && !std::binary_search(e.objects.begin(), e.objects.end(), d.object))
      continue;
    ranked.emplace_back(std::abs(heading_change(canonical_angle(d.turn), change)), &e);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second->node < b.second->node;
  });
  std::vector<const Exit*> out;
  for (const auto& r : ranked) out.push_back(r.second);
  return out;
}

const Exit* resolve(const Waypoint& from, double heading, const Directive& d) {
  const auto m = matching_exits(from, heading, d);
  const std::size_t pick = d.ordinal > 0 ? static_cast<std::size_t>(d.ordinal - 1) : 0;
  return pick < m.size() ? m[pick] : nullptr;
}

Directive describe_edge(const Waypoint& from, const Waypoint& to, double heading) {
  Directive d;
  d.turn = classify_turn(heading_change(heading, bearing_deg(from.position, to.position)));
  if (to.room != from.room) d.room = to.room;
  auto hits = [&](const Directive& c) {
    const auto* e = resolve(from, heading, c);
    return e != nullptr && e->node == to.node;
  };
  if (hits(d)) return d;
  for (const auto& obj : to.objects) {
    d.object = obj;
    if (hits(d)) return d;
  }
  d.object.clear();
  const auto m = matching_exits(from, heading, d);
  const auto it = std::find_if(m.begin(), m.end(), [&](const Exit* e) { return e->node == to.node; });
  const auto& ordinals = templates().ordinals;
  d.ordinal = static_cast<int>(std::min<std::ptrdiff_t>(it - m.begin(), ordinals.size() - 1)) + 1;
  return d;
}

std::string render(const Directive& d) {
  const auto& tpl = templates();
  std::string out;
  if (d.ordinal > 0) {
    out = fill_template(tpl.ordinal, {{"ordinal", tpl.ordinals[d.ordinal - 1]},
                                      {"turn", turn_word(d.turn)}});
  } else {
    out = tpl.turns.at(turn_word(d.turn));
  }
  if (!d.room.empty()) out += " " + fill_template(tpl.into_room, {{"room", d.room}});
  if (!d.object.empty()) out += " " + fill_template(tpl.towards_object, {{"object", d.object}});
  return out;
}

}  // namespace

DialogueContext build_context(const NavGraph& graph, const NodeId& current, int heading_sector,
                              const NodeId& target_node, const std::string& target_object,
                              int max_future) {
  if (max_future < 0) throw InvalidConfig("number of future observations must be >= 0");
  if (heading_sector < 0 || heading_sector >= kSectors)
    throw InvalidConfig("heading sector out of range");
  const auto path = dijkstra(graph, current, target_node);
  const std::size_t k = std::min<std::size_t>(path.nodes.size() - 1, max_future);

  DialogueContext ctx;
  ctx.target_object = target_object;
  ctx.target_room = graph.node(target_node).room;
  ctx.heading_deg = heading_sector * 60.0;
  ctx.path_truncated = path.nodes.size() - 1 > k;
  for (std::size_t i = 0; i <= k; ++i) {
    const auto idx = graph.index_of(path.nodes[i]);
    int sector = heading_sector;
    if (i > 0) {
      sector = sector_of_bearing(
          bearing_deg(graph.node(path.nodes[i - 1]).position, graph.node(idx).position));
    }
    ctx.future_obs.push_back(graph.node(idx).panorama[sector]);
    ctx.path.push_back(make_waypoint(graph, idx));
  }
  ctx.current_obs = ctx.future_obs.front();
  return ctx;
}

double heading_change(double from_deg, double to_deg) {
  double d = std::fmod(to_deg - from_deg, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

Turn classify_turn(double delta) {
  if (std::abs(delta) < 30.0) return Turn::Straight;
  if (delta >= 30.0 && delta < 150.0) return Turn::Left;
  if (delta <= -30.0 && delta > -150.0) return Turn::Right;
  return Turn::Around;
}

const char* turn_word(Turn t) {
  switch (t) {
    case Turn::Straight: return "straight";
    case Turn::Left: return "left";
    case Turn::Right: return "right";
    case Turn::Around: return "around";
  }
  return "straight";
}

Tokens template_question(const DialogueContext& context, std::uint64_t seed) {
  if (context.path.empty()) throw EmptyPath("dialogue context has no path");
  const auto& qs = templates().questions;
  const auto& here = context.path.front();
  const auto pick = mix_seed(seed, fnv1a(here.node)) % qs.size();
  return tokenize(fill_template(qs[pick], {{"room", here.room}, {"object", context.target_object}}));
}

Tokens template_answer(const DialogueContext& context) {
  if (context.path.empty()) throw EmptyPath("dialogue context has no path");
  const auto& tpl = templates();
  if (context.path.size() == 1) return tokenize(fill_template(tpl.arrived, {{"object", context.target_object}}));

  std::string text;
  double heading = context.heading_deg;
  const std::size_t edges = std::min<std::size_t>(context.path.size() - 1, kMaxDirectives);
  for (std::size_t i = 0; i < edges; ++i) {
    const auto& from = context.path[i];
    const auto& to = context.path[i + 1];
    text += render(describe_edge(from, to, heading)) + " " + tpl.separator + " ";
    heading = bearing_deg(from.position, to.position);
  }
  text += fill_template(tpl.final_clause,
                        {{"object", context.target_object}, {"room", context.target_room}});
  return tokenize(text);
}

QAPair template_generate(const DialogueContext& context, std::uint64_t seed) {
  return {template_question(context, seed), template_answer(context), true, true};
}

void DialogueSequence::push_token(int id, Segment segment) {
  tokens.push_back(id);
  image_index.push_back(-1);
  segments.push_back(segment);
  positions.push_back(static_cast<int>(positions.size()));
  loss_mask.push_back(0);
}

void DialogueSequence::push_image(const Feature& feature) {
  tokens.push_back(-1);
  image_index.push_back(static_cast<int>(images.size()));
  images.push_back(feature);
  segments.push_back(Segment::Image);
  positions.push_back(static_cast<int>(positions.size()));
  loss_mask.push_back(0);
}

void compute_loss_mask(DialogueSequence& seq) {
  const std::size_t n = seq.size();
  seq.loss_mask.assign(n, 0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t j = i + 1;
    if (seq.is_image(j) || seq.tokens[j] == Vocabulary::kBos) continue;
    if (seq.segments[j] == Segment::QuestionText || seq.segments[j] == Segment::AnswerText)
      seq.loss_mask[i] = 1;
  }
}

DialogueSequence question_prompt(const DialogueContext& context, const std::vector<int>& target) {
  if (target.empty()) throw InvalidConfig("target tokens must be non-empty");
  if (context.future_obs.empty()) throw InvalidConfig("dialogue context has no observations");
  DialogueSequence seq;
  seq.push_token(Vocabulary::kBos, Segment::Target);
  for (int id : target) seq.push_token(id, Segment::Target);
  seq.push_token(Vocabulary::kEos, Segment::Target);
  seq.push_image(context.current_obs);
  seq.push_token(Vocabulary::kBos, Segment::QuestionText);
  return seq;
}

DialogueSequence build_sequence(const DialogueContext& context, const std::vector<int>& target,
                                const std::vector<int>& question, const std::vector<int>& answer,
                                std::size_t max_length) {
  if (question.empty() || answer.empty()) throw InvalidConfig("question and answer must be non-empty");
  const std::size_t length = 3 + target.size() + question.size() + answer.size() +
                             (context.future_obs.size() + 1) + 3;
  if (length > max_length) {
    throw SequenceTooLong("sequence of " + std::to_string(length) + " elements exceeds " +
                          std::to_string(max_length));
  }
  auto seq = question_prompt(context, target);
  for (int id : question) seq.push_token(id, Segment::QuestionText);
  seq.push_token(Vocabulary::kEos, Segment::QuestionText);
  for (const auto& f : context.future_obs) seq.push_image(f);
  seq.push_token(Vocabulary::kBos, Segment::AnswerText);
  for (int id : answer) seq.push_token(id, Segment::AnswerText);
  seq.push_token(Vocabulary::kEos, Segment::AnswerText);
  compute_loss_mask(seq);
  return seq;
}

}  // namespace vdn
