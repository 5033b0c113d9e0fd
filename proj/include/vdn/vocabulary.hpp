#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vdn/text.hpp"

namespace vdn {

namespace embedded {
extern const char* const kLabelsJson;
extern const char* const kTemplatesJson;
}  // namespace embedded

// Fixed room/object vocabulary shipped in data/labels.v1.json.
struct LabelSet {
  std::string version;
  std::vector<std::string> rooms;
  std::vector<std::string> objects;
};

// Slot-filled phrase set shipped in data/templates.v1.json.
struct TemplateSet {
  std::string version;
  std::vector<std::string> questions;
  std::map<std::string, std::string> turns;  // straight|left|right|around
  std::string ordinal;
  std::vector<std::string> ordinals;
  std::string into_room;
  std::string towards_object;
  std::string separator;
  std::string final_clause;
  std::string arrived;
};

const LabelSet& labels();
const TemplateSet& templates();

// Replaces every `{key}` in `pattern` with the mapped value.
std::string fill_template(std::string_view pattern,
                          const std::map<std::string, std::string>& slots);

// Token <-> id table for the dialogue model. Ids 0..3 are the specials.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::string_view kEosToken = "<eos>";

  Vocabulary();

  // Every token a template answer/question or label can produce, plus specials.
  static Vocabulary from_templates();

  int add(const std::string& token);
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  std::vector<int> encode(const Tokens& tokens) const;
  Tokens decode(const std::vector<int>& ids) const;

  // One token per line, in id order.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

}  // namespace vdn
