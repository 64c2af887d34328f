#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctxc/chunker.hpp"
#include "ctxc/tokenizer.hpp"
#include "test_support.hpp"

using namespace ctxc;
using namespace ctxc::testing;

TEST_CASE("tokenize: byte + 3 scheme") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("A") == TokenSequence{68});  // 0x41 + 3
  CHECK(tokenize("hi") == TokenSequence{107, 108});
  CHECK(tokenize("hi").size() == 2);
}

TEST_CASE("detokenize: inverse with reserved ids skipped") {
  CHECK(detokenize({}) == "");
  CHECK(detokenize({68}) == "A");
  CHECK(detokenize({kBosId, 107, 108, kEosId}) == "hi");
  CHECK(detokenize({kPadId, kPadId}) == "");
  CHECK_THROWS_AS(detokenize({259}), std::invalid_argument);
  CHECK_THROWS_AS(detokenize({-1}), std::invalid_argument);
  // 0xFF alone is not valid UTF-8
  CHECK_THROWS_AS(detokenize({0xFF + kByteOffset}), std::invalid_argument);
}

TEST_CASE("roundtrip: detokenize(tokenize(t)) == t for random UTF-8") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::string t = random_utf8(rng, 64);
    CHECK(detokenize(tokenize(t)) == t);
  }
  CHECK(detokenize(tokenize("\xE4\xBD\xA0\xE5\xA5\xBD")) == "\xE4\xBD\xA0\xE5\xA5\xBD");
}

TEST_CASE("split_chunks: delimiter attaches to preceding chunk") {
  auto chunks = split_chunks("a. b. c.", ChunkingStrategy());
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].text == "a.");
  CHECK(chunks[1].text == " b.");
  CHECK(chunks[2].text == " c.");
  CHECK(chunks[0].original_index == 0);
  CHECK(chunks[2].original_index == 2);
  CHECK(chunks[0].span_begin == 0);
  CHECK(chunks[0].span_end == 2);
  CHECK(chunks[2].span_end == 8);

  CHECK(split_chunks("", ChunkingStrategy()).empty());

  // trailing segment without delimiter forms a final chunk
  auto tail = split_chunks("x. tail", ChunkingStrategy());
  REQUIRE(tail.size() == 2);
  CHECK(tail[1].text == " tail");

  // multi-byte delimiter (ideographic full stop)
  auto cjk = split_chunks("\xE4\xBD\xA0\xE3\x80\x82\xE5\xA5\xBD\xE3\x80\x82",
                          ChunkingStrategy());
  REQUIRE(cjk.size() == 2);
  CHECK(cjk[0].text == "\xE4\xBD\xA0\xE3\x80\x82");
}

TEST_CASE("split_chunks: window lengths 4,4,2 on a 10-token text") {
  auto chunks = split_chunks("0123456789", ChunkingStrategy::window(4));
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].text.size() == 4);
  CHECK(chunks[1].text.size() == 4);
  CHECK(chunks[2].text.size() == 2);
  CHECK(chunks[1].span_begin == 4);
}

TEST_CASE("split_chunks: partition property over random inputs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::string t = random_utf8(rng, 48);
    ChunkingStrategy strat = (rng() % 2) ? ChunkingStrategy()
                                         : ChunkingStrategy::window(1 + rng() % 7);
    auto chunks = split_chunks(t, strat);
    std::string joined;
    size_t expect_begin = 0;
    for (const Chunk& c : chunks) {
      CHECK(c.span_begin == expect_begin);  // non-overlapping, ordered
      CHECK(c.span_end - c.span_begin == c.text.size());
      CHECK(!c.text.empty());
      expect_begin = c.span_end;
      joined += c.text;
    }
    CHECK(joined == t);
    if (strat.kind == ChunkingStrategy::Kind::kWindow && !t.empty()) {
      const size_t w = static_cast<size_t>(strat.window_tokens);
      CHECK(chunks.size() == (t.size() + w - 1) / w);
    }
  }
}

TEST_CASE("join_chunks: identity, empty, separator rule") {
  auto chunks = split_chunks("a. b. c.", ChunkingStrategy());
  CHECK(join_chunks(chunks, {0, 1, 2}) == "a. b. c.");
  CHECK(join_chunks(chunks, {}) == "");
  // boundary already ends with a delimiter: no space added across the gap
  CHECK(join_chunks(chunks, {0, 2}) == "a. c.");

  // gap between plain words needs exactly one space
  auto words = split_chunks("alpha beta gamma", ChunkingStrategy::window(6));
  REQUIRE(words.size() == 3);
  CHECK(words[0].text == "alpha ");
  // left boundary already carries a space: no extra separator
  CHECK(join_chunks(words, {0, 2}) == "alpha amma");
  auto tight = split_chunks("abcdefgh", ChunkingStrategy::window(2));
  REQUIRE(tight.size() == 4);
  CHECK(join_chunks(tight, {0, 3}) == "ab gh");
  CHECK(join_chunks(tight, {0, 1}) == "abcd");  // adjacent chunks glue directly

  CHECK_THROWS_AS(join_chunks(chunks, {2, 1}), std::invalid_argument);
  CHECK_THROWS_AS(join_chunks(chunks, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(join_chunks(chunks, {5}), std::out_of_range);
}

TEST_CASE("join_chunks: retain-all identity over random inputs") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const std::string t = random_utf8(rng, 40);
    ChunkingStrategy strat = (rng() % 2) ? ChunkingStrategy()
                                         : ChunkingStrategy::window(1 + rng() % 5);
    auto chunks = split_chunks(t, strat);
    std::vector<int> all(chunks.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    CHECK(join_chunks(chunks, all) == t);
  }
}

TEST_CASE("chunking strategies validate their knobs") {
  CHECK_THROWS_AS(ChunkingStrategy::window(0), std::invalid_argument);
  CHECK_THROWS_AS(ChunkingStrategy::delimiter({}), std::invalid_argument);
}
