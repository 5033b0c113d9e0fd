#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vdn {

using Tokens = std::vector<std::string>;

// Lower-cases, splits on whitespace and emits every punctuation character as
// its own token. Tokens in angle brackets (`<eos>`) are kept whole.
Tokens tokenize(std::string_view text);

// Inverse of tokenize for text produced by this library: tokens joined by a
// single space.
std::string detokenize(const Tokens& tokens);

bool is_special_token(std::string_view token);

}  // namespace vdn
