#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctxc {

// Byte-level scheme: ids 0..2 are reserved (PAD/BOS/EOS), ids >= 3 map
// bijectively to byte values id-3, giving a 259-entry vocabulary.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kByteOffset = 3;
constexpr int kVocabSize = 259;

using TokenSequence = std::vector<int>;

TokenSequence tokenize(const std::string& text);

// Inverse of tokenize over content ids; reserved ids are skipped. Throws if
// the resulting byte string is not valid UTF-8 or an id is out of range.
std::string detokenize(const TokenSequence& ids);

bool is_valid_utf8(const std::string& bytes);

}  // namespace ctxc
