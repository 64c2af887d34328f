#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ctxc {

// (context, instruction, response) triple; needle_chunk_index is recorded by
// the synthetic generator so retention can be measured exactly.
struct QAPair {
  int64_t id = 0;
  std::string instruction;
  std::string document;
  std::string reference;
  std::optional<int> needle_chunk_index;
};

// One instruction with the positive document at index 0 followed by hard
// negatives.
struct CandidateSet {
  int64_t id = 0;
  std::string instruction;
  std::vector<std::string> candidates;
};

struct Dataset {
  std::vector<QAPair> qa;
  std::vector<CandidateSet> candidates;
};

// Needle-in-a-haystack corpus: every document is `fillers_per_doc` random
// filler sentences plus one needle sentence "The code for <KEY> is <VALUE>."
// at a random chunk position. Negatives are other documents whose needles
// answer different keys (extra distractor documents are synthesized when the
// corpus is too small to supply them).
Dataset gen_synthetic(int n, int fillers_per_doc, uint64_t seed,
                      int candidates_per_set = 20);

// ---- JSON-lines I/O ----

void write_qa_jsonl(const std::string& path, const std::vector<QAPair>& qa);
std::vector<QAPair> read_qa_jsonl(const std::string& path);
void write_candidates_jsonl(const std::string& path, const std::vector<CandidateSet>& sets);
std::vector<CandidateSet> read_candidates_jsonl(const std::string& path);

// ---- schema validation ----

enum class DatasetSchema { kQa, kCandidates };

struct ValidationIssue {
  int line = 0;  // 1-based
  std::string message;
};

struct ValidationReport {
  int total_lines = 0;
  int valid_count = 0;
  std::vector<ValidationIssue> violations;  // capped at max_reported
  std::vector<ValidationIssue> warnings;
};

ValidationReport validate_dataset(const std::string& path, DatasetSchema schema,
                                  int max_reported = 10);

}  // namespace ctxc
