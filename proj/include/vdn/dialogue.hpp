#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdn/navgraph.hpp"
#include "vdn/text.hpp"
#include "vdn/vocabulary.hpp"

namespace vdn {

// Future images available to the answer, and the per-span decoding cap.
inline constexpr int kDefaultFutureObservations = 20;
inline constexpr int kSpanTokenCap = 40;
// Number of path edges a template answer spells out before its final clause.
inline constexpr int kMaxDirectives = 4;

struct Exit {
  NodeId node;
  Vec3 position;
  std::string room;
  std::vector<std::string> objects;
};

// One node on the shortest path to the target, with everything a human or
// the template oracle needs to describe it.
struct Waypoint {
  NodeId node;
  Vec3 position;
  std::string room;
  std::vector<std::string> objects;
  std::vector<Exit> exits;  // all graph neighbours of `node`
};

struct DialogueContext {
  std::string target_object;
  std::string target_room;
  Feature current_obs;                // frontal sector at the current node
  std::vector<Feature> future_obs;    // current node first, then along the path
  std::vector<Waypoint> path;         // same nodes as future_obs
  double heading_deg = 0.0;           // agent heading at the current node
  bool path_truncated = false;        // true when the target lies beyond k

  int k() const { return static_cast<int>(future_obs.size()) - 1; }
};

// Frontal feature seen at each path node: the current heading for the first
// node, the arrival bearing for later ones. `max_future` bounds k.
DialogueContext build_context(const NavGraph& graph, const NodeId& current, int heading_sector,
                              const NodeId& target_node, const std::string& target_object,
                              int max_future = kDefaultFutureObservations);

struct QAPair {
  Tokens question;
  Tokens answer;
  bool question_terminated = true;  // false when decoding hit the span cap
  bool answer_terminated = true;
};

class DialogueBackend {
 public:
  virtual ~DialogueBackend() = default;
  virtual QAPair generate(const DialogueContext& context, std::uint64_t seed) const = 0;
  virtual std::string name() const = 0;
};

enum class Turn { Straight, Left, Right, Around };

// Relative turn for a heading change of `delta` degrees (left positive):
// |d| < 30 straight, [30, 150) left, (-150, -30] right, otherwise around.
Turn classify_turn(double delta_deg);
const char* turn_word(Turn t);
// Signed difference b - a mapped to (-180, 180].
double heading_change(double from_deg, double to_deg);

// Deterministic oracle grounded in the shortest path.
Tokens template_question(const DialogueContext& context, std::uint64_t seed);
Tokens template_answer(const DialogueContext& context);
QAPair template_generate(const DialogueContext& context, std::uint64_t seed);

class TemplateBackend final : public DialogueBackend {
 public:
  QAPair generate(const DialogueContext& context, std::uint64_t seed) const override {
    return template_generate(context, seed);
  }
  std::string name() const override { return "template"; }
};

enum class Segment : int { Target = 0, QuestionText = 1, AnswerText = 2, Image = 3 };
inline constexpr int kSegments = 4;

// Interleaved token / image-slot sequence:
// [BOS tgt EOS img BOS q EOS img*(k+1) BOS a EOS]
struct DialogueSequence {
  std::vector<int> tokens;        // token id, or -1 for an image slot
  std::vector<int> image_index;   // index into `images`, or -1 for a token
  std::vector<Feature> images;
  std::vector<Segment> segments;
  std::vector<int> positions;
  std::vector<std::uint8_t> loss_mask;  // 1 where the next element is a q/a token or its EOS

  std::size_t size() const { return tokens.size(); }
  bool is_image(std::size_t i) const { return image_index[i] >= 0; }

  void push_token(int id, Segment segment);
  void push_image(const Feature& feature);
};

DialogueSequence build_sequence(const DialogueContext& context, const std::vector<int>& target,
                                const std::vector<int>& question, const std::vector<int>& answer,
                                std::size_t max_length);

// Marks loss positions: i is trained iff element i+1 is a token inside the
// question or answer span (BOS excluded, EOS included).
void compute_loss_mask(DialogueSequence& seq);

// Prefix up to and including the BOS that opens the question.
DialogueSequence question_prompt(const DialogueContext& context, const std::vector<int>& target);

}  // namespace vdn
