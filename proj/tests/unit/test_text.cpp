#include <doctest.h>

#include "vdn/errors.hpp"
#include "vdn/text.hpp"
#include "vdn/vocabulary.hpp"

using namespace vdn;

TEST_CASE("tokenize lower-cases and splits punctuation") {
  CHECK(tokenize("Go LEFT, then stop.") == Tokens{"go", "left", ",", "then", "stop", "."});
  CHECK(tokenize("  ") == Tokens{});
  CHECK(tokenize("answer <EOS>") == Tokens{"answer", "<eos>"});
  CHECK(tokenize("a < b") == Tokens{"a", "<", "b"});
  CHECK(tokenize("don't re-enter") == Tokens{"don't", "re-enter"});
  const Tokens t{"turn", "left", "into", "the", "kitchen", ","};
  CHECK(tokenize(detokenize(t)) == t);
}

TEST_CASE("template and label data load") {
  CHECK(labels().rooms.size() == 8);
  CHECK(labels().version == "labels-v1");
  CHECK(templates().turns.size() == 4);
  CHECK(fill_template("do i go down the {room} ?", {{"room", "hallway"}}) ==
        "do i go down the hallway ?");
  CHECK_THROWS_AS(fill_template("{x}", {}), FormatError);
}

TEST_CASE("vocabulary") {
  const auto v = Vocabulary::from_templates();
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.id("kitchen") != Vocabulary::kUnk);
  CHECK(v.id("fireplace") != Vocabulary::kUnk);
  CHECK(v.id("zebra") == Vocabulary::kUnk);
  CHECK(Vocabulary::from_text(v.to_text()) == v);
  CHECK(v.decode(v.encode({"turn", "left"})) == Tokens{"turn", "left"});
  CHECK_THROWS_AS(Vocabulary::from_text("foo\nbar\n"), FormatError);
}
