#include "ctxc/chunker.hpp"

#include <cctype>
#include <stdexcept>

namespace ctxc {
namespace {

// Decodes the code point at `pos`; invalid sequences decode as the single
// byte so window-mode chunks (which may split code points) stay handleable.
std::pair<uint32_t, size_t> decode_cp(const std::string& s, size_t pos) {
  const unsigned char b = static_cast<unsigned char>(s[pos]);
  size_t len;
  uint32_t cp;
  if (b < 0x80) return {b, 1};
  if ((b & 0xE0) == 0xC0) {
    len = 2;
    cp = b & 0x1F;
  } else if ((b & 0xF0) == 0xE0) {
    len = 3;
    cp = b & 0x0F;
  } else if ((b & 0xF8) == 0xF0) {
    len = 4;
    cp = b & 0x07;
  } else {
    return {b, 1};
  }
  if (pos + len > s.size()) return {b, 1};
  for (size_t k = 1; k < len; ++k) {
    const unsigned char c = static_cast<unsigned char>(s[pos + k]);
    if ((c & 0xC0) != 0x80) return {b, 1};
    cp = (cp << 6) | (c & 0x3F);
  }
  return {cp, len};
}

uint32_t first_cp(const std::string& s) { return decode_cp(s, 0).first; }

uint32_t last_cp(const std::string& s) {
  size_t start = s.size() - 1;
  while (start > 0 && (static_cast<unsigned char>(s[start]) & 0xC0) == 0x80) --start;
  auto [cp, len] = decode_cp(s, start);
  if (start + len != s.size()) return static_cast<unsigned char>(s.back());
  return cp;
}

bool is_space_cp(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v';
}

Chunk make_chunk(const std::string& text, size_t begin, size_t end, int index) {
  Chunk c;
  c.original_index = index;
  c.text = text.substr(begin, end - begin);
  c.span_begin = begin;
  c.span_end = end;
  return c;
}

}  // namespace

ChunkingStrategy ChunkingStrategy::delimiter(std::set<uint32_t> delims) {
  if (delims.empty())
    throw std::invalid_argument("delimiter strategy requires a non-empty delimiter set");
  ChunkingStrategy s;
  s.kind = Kind::kDelimiter;
  s.delimiters = std::move(delims);
  return s;
}

ChunkingStrategy ChunkingStrategy::window(int window_tokens) {
  if (window_tokens < 1) throw std::invalid_argument("window_tokens must be >= 1");
  ChunkingStrategy s;
  s.kind = Kind::kWindow;
  s.window_tokens = window_tokens;
  return s;
}

std::vector<Chunk> split_chunks(const std::string& text, const ChunkingStrategy& strategy) {
  std::vector<Chunk> chunks;
  if (text.empty()) return chunks;
  if (strategy.kind == ChunkingStrategy::Kind::kWindow) {
    if (strategy.window_tokens < 1) throw std::invalid_argument("window_tokens must be >= 1");
    const size_t w = static_cast<size_t>(strategy.window_tokens);
    for (size_t begin = 0; begin < text.size(); begin += w) {
      const size_t end = std::min(begin + w, text.size());
      chunks.push_back(make_chunk(text, begin, end, static_cast<int>(chunks.size())));
    }
    return chunks;
  }
  if (strategy.delimiters.empty())
    throw std::invalid_argument("delimiter strategy requires a non-empty delimiter set");
  size_t begin = 0, pos = 0;
  while (pos < text.size()) {
    auto [cp, len] = decode_cp(text, pos);
    pos += len;
    if (strategy.delimiters.count(cp)) {
      chunks.push_back(make_chunk(text, begin, pos, static_cast<int>(chunks.size())));
      begin = pos;
    }
  }
  if (begin < text.size())
    chunks.push_back(make_chunk(text, begin, text.size(), static_cast<int>(chunks.size())));
  return chunks;
}

std::string join_chunks(const std::vector<Chunk>& chunks, const std::vector<int>& retained,
                        const std::set<uint32_t>& delimiters) {
  std::string out;
  int prev = -1;
  for (size_t i = 0; i < retained.size(); ++i) {
    const int idx = retained[i];
    if (idx < 0 || idx >= static_cast<int>(chunks.size()))
      throw std::out_of_range("join_chunks: retained index out of range");
    if (i > 0 && idx <= prev)
      throw std::invalid_argument("join_chunks: retained indices must be strictly ascending");
    const Chunk& c = chunks[static_cast<size_t>(idx)];
    if (prev >= 0 && idx != prev + 1 && !out.empty() && !c.text.empty()) {
      const uint32_t left = last_cp(out);
      const uint32_t right = first_cp(c.text);
      if (!is_space_cp(left) && !delimiters.count(left) && !is_space_cp(right) &&
          !delimiters.count(right))
        out += ' ';
    }
    out += c.text;
    prev = idx;
  }
  return out;
}

}  // namespace ctxc
