#pragma once

#include <set>
#include <string>
#include <vector>

#include "ctxc/compression.hpp"
#include "ctxc/dataset.hpp"
#include "ctxc/model.hpp"

namespace ctxc {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Whitespace tokenization with ASCII lowercasing and edge punctuation
// stripped; text without any whitespace falls back to per-code-point tokens
// (unspaced scripts).
std::vector<std::string> rouge_tokenize(const std::string& text);

RougeScore rouge_n(const std::string& candidate, const std::string& reference, int n);
RougeScore rouge_l(const std::string& candidate, const std::string& reference);

// Fraction of queries whose top-k ranked ids contain a positive id.
double recall_at_k(const std::vector<std::vector<int64_t>>& ranked_lists,
                   const std::vector<std::set<int64_t>>& positives, int k);

// The deterministic extractive answerer: the sentence of `context` that best
// ROUGE-1 matches the instruction (ties to the earliest sentence).
std::string extractive_answer(const std::string& context, const std::string& instruction);

struct SweepRow {
  std::string method;  // "origin" for the uncompressed row
  double ratio = 1.0;
  RougeScore rouge1, rouge2, rougeL;  // means over the dataset
  double rouge1_diff = 0.0, rouge2_diff = 0.0, rougeL_diff = 0.0;  // f1 vs origin
  double needle_retention = 0.0;
  double token_reduction = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;  // origin first, then |methods| x |ratios|
};

// Compresses every QA document per (method, ratio), scores the extractive
// answer against the reference with ROUGE variants, measures needle
// retention via the recorded needle chunk index, and reports diffs against
// the uncompressed origin row. Chunk scores are computed once per method
// and reused across ratios.
SweepReport run_sweep(const std::vector<QAPair>& dataset, const CompressorModel& model,
                      const std::vector<CompressionMethod>& methods,
                      const std::vector<double>& ratios, int gen_steps,
                      const ChunkingStrategy& chunking = ChunkingStrategy());

std::string sweep_to_csv(const SweepReport& report);
std::string sweep_to_json(const SweepReport& report);

// Token-count cost model. Estimated relative prompt cost is retained/original
// tokens; compressor runtime is deliberately not included.
struct CostReport {
  double mean_token_reduction = 0.0;
  double est_relative_prompt_cost = 1.0;
};

CostReport cost_report(const std::vector<CompressionResult>& results);

}  // namespace ctxc
