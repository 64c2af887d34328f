#pragma once

#include <string>
#include <vector>

#include "ctxc/chunker.hpp"
#include "ctxc/model.hpp"

namespace ctxc {

enum class CompressionMethod { kRanking, kGeneration, kEnsemble, kSelective };

const char* method_name(CompressionMethod m);
CompressionMethod parse_method(const std::string& name);

struct CompressionRequest {
  std::string instruction;
  std::string document;
  double ratio = 0.5;
  CompressionMethod method = CompressionMethod::kEnsemble;
  ChunkingStrategy chunking;
  int gen_steps = 32;
  int gradcam_layer = -1;  // -1 = last decoder layer

  void validate() const;
};

struct CompressionResult {
  std::vector<int> retained_indices;  // strictly ascending
  std::vector<double> chunk_scores;   // one per original chunk
  std::string compressed_text;
  int64_t original_tokens = 0;
  int64_t retained_tokens = 0;
};

// ceil(ratio * n) clamped to [1, n]. Products within 1e-9 of an integer are
// snapped to it first, so binary rounding noise (0.2 * 10 is slightly above
// 2 in binary64) cannot bump the count.
int retained_count(int n, double ratio);

// Keeps the top retained_count chunks by score (ties favor the smaller
// original index), restores ascending order, and reassembles.
CompressionResult select_and_reassemble(const std::vector<Chunk>& chunks,
                                        const std::vector<double>& scores, double ratio,
                                        const std::set<uint32_t>& delimiters = {'.', 0x3002,
                                                                                '\n'});

// Per-document-token relevance from generation: the whole document is
// encoded once, k response tokens are decoded greedily, and for every step
// each encoder token j accumulates max(0, sum over heads and decoder
// positions of attention * gradient) at the chosen cross-attention layer;
// step scores are averaged. Length equals the document token count.
std::vector<double> gradcam_token_scores(const CompressorModel& model,
                                         const std::string& instruction,
                                         const std::string& document, int gen_steps,
                                         int layer = -1);

// Per-document-token self-information -log p(token | preceding tokens)
// under the decoder in causal mode with no encoder context.
std::vector<double> self_information_token_scores(const CompressorModel& model,
                                                  const std::string& document);

// ---- per-chunk scoring (ratio-independent; reusable across ratios) ----

std::vector<double> ranking_chunk_scores(const CompressorModel& model,
                                         const std::string& instruction,
                                         const std::vector<Chunk>& chunks);
std::vector<double> generation_chunk_scores(const CompressorModel& model,
                                            const std::string& instruction,
                                            const std::string& document,
                                            const std::vector<Chunk>& chunks, int gen_steps,
                                            int layer = -1);
std::vector<double> selective_chunk_scores(const CompressorModel& model,
                                           const std::string& document,
                                           const std::vector<Chunk>& chunks);

// Non-parametric fusion: each list is ranked descending (rank 1 = best,
// ties resolved toward the smaller index), and chunk i scores
// -(rank_a(i)+rank_b(i))/2 so that higher stays better.
std::vector<double> fuse_average_rank(const std::vector<double>& scores_a,
                                      const std::vector<double>& scores_b);

std::vector<double> chunk_scores_for(const CompressionRequest& req,
                                     const CompressorModel& model,
                                     const std::vector<Chunk>& chunks);

CompressionResult compress(const CompressionRequest& req, const CompressorModel& model);

// One JSON object per result, fields as in CompressionResult plus id and
// method.
std::string result_to_json_line(int64_t id, CompressionMethod method,
                                const CompressionResult& r);

}  // namespace ctxc
