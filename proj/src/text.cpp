#include "vdn/text.hpp"

#include <cctype>

namespace vdn {

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (c == '<') {
      const auto close = text.find('>', i);
      const auto space = text.find_first_of(" \t\r\n", i);
      if (close != std::string_view::npos && close > i + 1 && close < space) {
        flush();
        std::string special(text.substr(i, close - i + 1));
        for (auto& ch : special) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        out.push_back(std::move(special));
        i = close;
      } else {
        flush();
        out.emplace_back(1, '<');
      }
    } else if (std::ispunct(c) && c != '\'' && c != '-') {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

bool is_special_token(std::string_view token) {
  return token.size() > 2 && token.front() == '<' && token.back() == '>';
}

}  // namespace vdn
