#include "ctxc/tokenizer.hpp"

#include <stdexcept>

namespace ctxc {

TokenSequence tokenize(const std::string& text) {
  TokenSequence ids;
  ids.reserve(text.size());
  for (unsigned char b : text) ids.push_back(static_cast<int>(b) + kByteOffset);
  return ids;
}

std::string detokenize(const TokenSequence& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (id < kByteOffset || id >= kVocabSize)
      throw std::invalid_argument("detokenize: id out of range: " + std::to_string(id));
    out.push_back(static_cast<char>(id - kByteOffset));
  }
  if (!is_valid_utf8(out))
    throw std::invalid_argument("detokenize: byte sequence is not valid UTF-8");
  return out;
}

bool is_valid_utf8(const std::string& bytes) {
  size_t i = 0;
  const size_t n = bytes.size();
  while (i < n) {
    const unsigned char b = static_cast<unsigned char>(bytes[i]);
    size_t len;
    uint32_t cp;
    if (b < 0x80) {
      len = 1;
      cp = b;
    } else if ((b & 0xE0) == 0xC0) {
      len = 2;
      cp = b & 0x1F;
    } else if ((b & 0xF0) == 0xE0) {
      len = 3;
      cp = b & 0x0F;
    } else if ((b & 0xF8) == 0xF0) {
      len = 4;
      cp = b & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (size_t k = 1; k < len; ++k) {
      const unsigned char c = static_cast<unsigned char>(bytes[i + k]);
      if ((c & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (c & 0x3F);
    }
    // reject overlong encodings, surrogates, and out-of-range code points
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000))
      return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

}  // namespace ctxc
