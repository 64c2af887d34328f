#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ctxc/tokenizer.hpp"

namespace ctxc {

// A contiguous piece of the source document. Chunks of one document are
// non-overlapping, ordered, and concatenate back to the exact original text.
// token_span indexes into tokenize(document); with the byte-level scheme the
// span equals the chunk's byte range.
struct Chunk {
  int original_index = 0;
  std::string text;
  size_t span_begin = 0;  // [span_begin, span_end) into the document tokens
  size_t span_end = 0;
};

struct ChunkingStrategy {
  enum class Kind { kDelimiter, kWindow };
  Kind kind = Kind::kDelimiter;
  // Delimiter code points; a chunk ends right after one of these.
  std::set<uint32_t> delimiters = {'.', 0x3002 /* ideographic full stop */, '\n'};
  int window_tokens = 32;

  static ChunkingStrategy delimiter(std::set<uint32_t> delims = {'.', 0x3002, '\n'});
  static ChunkingStrategy window(int window_tokens);
};

// Lossless partition of `text`. Delimiter mode attaches the delimiter to the
// preceding chunk; a trailing undelimited segment forms a final chunk.
// Window mode cuts every window_tokens tokens; the last chunk may be shorter.
std::vector<Chunk> split_chunks(const std::string& text, const ChunkingStrategy& strategy);

// Reassembles the retained chunks in original order. Chunks adjacent in the
// source are glued directly (their texts are already contiguous); across a
// gap a single space is inserted unless either boundary already carries
// whitespace or a delimiter character.
std::string join_chunks(const std::vector<Chunk>& chunks, const std::vector<int>& retained,
                        const std::set<uint32_t>& delimiters = {'.', 0x3002, '\n'});

}  // namespace ctxc
