#include "vdn/vocabulary.hpp"

#include <sstream>

#include <json.hpp>

#include "vdn/errors.hpp"

namespace vdn {

using nlohmann::json;

const LabelSet& labels() {
  static const LabelSet set = [] {
    const auto j = json::parse(embedded::kLabelsJson);
    LabelSet s;
    s.version = j.at("version").get<std::string>();
    s.rooms = j.at("rooms").get<std::vector<std::string>>();
    s.objects = j.at("objects").get<std::vector<std::string>>();
    return s;
  }();
  return set;
}

const TemplateSet& templates() {
  static const TemplateSet set = [] {
    const auto j = json::parse(embedded::kTemplatesJson);
    TemplateSet t;
    t.version = j.at("version").get<std::string>();
    t.questions = j.at("questions").get<std::vector<std::string>>();
    t.turns = j.at("turns").get<std::map<std::string, std::string>>();
    t.ordinal = j.at("ordinal").get<std::string>();
    t.ordinals = j.at("ordinals").get<std::vector<std::string>>();
    t.into_room = j.at("into_room").get<std::string>();
    t.towards_object = j.at("towards_object").get<std::string>();
    t.separator = j.at("separator").get<std::string>();
    t.final_clause = j.at("final").get<std::string>();
    t.arrived = j.at("arrived").get<std::string>();
    return t;
  }();
  return set;
}

std::string fill_template(std::string_view pattern,
                          const std::map<std::string, std::string>& slots) {
  std::string out;
  std::size_t i = 0;
  while (i < pattern.size()) {
    if (pattern[i] == '{') {
      const auto close = pattern.find('}', i);
      if (close == std::string_view::npos) throw FormatError("unterminated slot in template");
      const std::string key(pattern.substr(i + 1, close - i - 1));
      const auto it = slots.find(key);
      if (it == slots.end()) throw FormatError("no value for template slot {" + key + "}");
      out += it->second;
      i = close + 1;
    } else {
      out.push_back(pattern[i++]);
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
}

Vocabulary Vocabulary::from_templates() {
  Vocabulary v;
  auto add_all = [&v](std::string_view text) {
    for (const auto& t : tokenize(text)) {
      if (t.front() != '{') v.add(t);
    }
  };
  const auto& tpl = templates();
  // Slot markers tokenize as "{", "room", "}", so strip braces first.
  auto strip = [](std::string s) {
    for (auto& c : s)
      if (c == '{' || c == '}') c = ' ';
    return s;
  };
  for (const auto& q : tpl.questions) add_all(strip(q));
  for (const auto& [_, phrase] : tpl.turns) add_all(phrase);
  add_all(strip(tpl.ordinal));
  for (const auto& o : tpl.ordinals) add_all(o);
  add_all(strip(tpl.into_room));
  add_all(strip(tpl.towards_object));
  add_all(tpl.separator);
  add_all(strip(tpl.final_clause));
  add_all(strip(tpl.arrived));
  for (const auto& r : labels().rooms) add_all(r);
  for (const auto& o : labels().objects) add_all(o);
  add_all("find the");
  return v;
}

int Vocabulary::add(const std::string& token) {
  const auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw FormatError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Vocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.add(line);
  }
  if (v.size() < 4 || v.token(kPad) != "<pad>" || v.token(kBos) != "<bos>" ||
      v.token(kEos) != "<eos>" || v.token(kUnk) != "<unk>") {
    throw FormatError("vocabulary file must start with <pad>, <bos>, <eos>, <unk>");
  }
  return v;
}

}  // namespace vdn
