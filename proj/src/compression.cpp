#include "ctxc/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ctxc/errors.hpp"

namespace ctxc {

const char* method_name(CompressionMethod m) {
  switch (m) {
    case CompressionMethod::kRanking: return "ranking";
    case CompressionMethod::kGeneration: return "generation";
    case CompressionMethod::kEnsemble: return "ensemble";
    case CompressionMethod::kSelective: return "selective";
  }
  return "?";
}

CompressionMethod parse_method(const std::string& name) {
  if (name == "ranking") return CompressionMethod::kRanking;
  if (name == "generation") return CompressionMethod::kGeneration;
  if (name == "ensemble") return CompressionMethod::kEnsemble;
  if (name == "selective") return CompressionMethod::kSelective;
  throw UsageError("unknown compression method: " + name);
}

void CompressionRequest::validate() const {
  if (!(ratio > 0.0) || ratio > 1.0) throw UsageError("ratio must be in (0,1]");
  if (gen_steps < 1) throw UsageError("gen-steps must be >= 1");
  if (instruction.empty() && method != CompressionMethod::kSelective)
    throw UsageError("instruction required for instruction-aware methods");
}

int retained_count(int n, double ratio) {
  if (n < 1) throw std::invalid_argument("retained_count: no chunks");
  if (!(ratio > 0.0) || ratio > 1.0)
    throw std::invalid_argument("retained_count: ratio must be in (0,1]");
  const int k = static_cast<int>(std::ceil(ratio * n - 1e-9));
  return std::clamp(k, 1, n);
}

CompressionResult select_and_reassemble(const std::vector<Chunk>& chunks,
                                        const std::vector<double>& scores, double ratio,
                                        const std::set<uint32_t>& delimiters) {
  if (chunks.empty()) throw std::invalid_argument("select_and_reassemble: no chunks");
  if (scores.size() != chunks.size())
    throw std::invalid_argument("select_and_reassemble: score/chunk length mismatch");
  for (double s : scores)
    if (!std::isfinite(s))
      throw std::invalid_argument("select_and_reassemble: non-finite score");

  const int n = static_cast<int>(chunks.size());
  const int keep = retained_count(n, ratio);
  std::vector<int> order(chunks.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  order.resize(static_cast<size_t>(keep));
  std::sort(order.begin(), order.end());

  CompressionResult res;
  res.retained_indices = std::move(order);
  res.chunk_scores = scores;
  res.compressed_text = join_chunks(chunks, res.retained_indices, delimiters);
  res.original_tokens = static_cast<int64_t>(chunks.back().span_end);
  res.retained_tokens = static_cast<int64_t>(res.compressed_text.size());
  return res;
}

std::vector<double> gradcam_token_scores(const CompressorModel& model,
                                         const std::string& instruction,
                                         const std::string& document, int gen_steps,
                                         int layer) {
  if (instruction.empty())
    throw std::invalid_argument("gradcam_token_scores: empty instruction");
  if (gen_steps < 1) throw std::invalid_argument("gradcam_token_scores: k must be >= 1");
  const int layers = model.config().dec_layers;
  if (layer == -1) layer = layers - 1;
  if (layer < 0 || layer >= layers)
    throw std::invalid_argument("gradcam_token_scores: invalid layer index");

  const TokenSequence doc = tokenize(document);
  const Tensor enc = model.encode(doc);
  const TraceResult trace = model.forward_with_trace(tokenize(instruction), enc, gen_steps);

  std::vector<double> scores(doc.size(), 0.0);
  if (trace.steps.empty()) return scores;
  for (const AttentionTrace& step : trace.steps) {
    const Tensor& map = step.maps[static_cast<size_t>(layer)];
    const Tensor& grad = step.grads[static_cast<size_t>(layer)];
    for (Index j = 0; j < map.dim(2); ++j) {
      double acc = 0.0;
      for (Index h = 0; h < map.dim(0); ++h)
        acc += map.slice(h).col(j).dot(grad.slice(h).col(j));
      scores[static_cast<size_t>(j)] += std::max(0.0, acc);
    }
  }
  const double steps = static_cast<double>(trace.steps.size());
  for (double& s : scores) s /= steps;
  return scores;
}

std::vector<double> self_information_token_scores(const CompressorModel& model,
                                                  const std::string& document) {
  const TokenSequence doc = tokenize(document);
  if (doc.empty()) throw std::invalid_argument("self_information: empty document");
  TokenSequence input;
  input.push_back(kBosId);
  input.insert(input.end(), doc.begin(), doc.end());
  const Tensor logits = model.next_token_logits(input, nullptr);
  std::vector<double> scores(doc.size());
  for (size_t t = 0; t < doc.size(); ++t) {
    const Vector p = softmax(logits.mat().row(static_cast<Index>(t)).transpose());
    scores[t] = -std::log(p[doc[t]]);
  }
  return scores;
}

namespace {

std::vector<double> mean_over_spans(const std::vector<double>& token_scores,
                                    const std::vector<Chunk>& chunks) {
  std::vector<double> out(chunks.size(), 0.0);
  for (size_t c = 0; c < chunks.size(); ++c) {
    const Chunk& ch = chunks[c];
    double acc = 0.0;
    for (size_t t = ch.span_begin; t < ch.span_end; ++t) acc += token_scores[t];
    const size_t len = ch.span_end - ch.span_begin;
    out[c] = len ? acc / static_cast<double>(len) : 0.0;
  }
  return out;
}

std::vector<int> ordinal_ranks(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  std::vector<int> ranks(scores.size());
  for (size_t pos = 0; pos < order.size(); ++pos)
    ranks[static_cast<size_t>(order[pos])] = static_cast<int>(pos) + 1;
  return ranks;
}

}  // namespace

std::vector<double> ranking_chunk_scores(const CompressorModel& model,
                                         const std::string& instruction,
                                         const std::vector<Chunk>& chunks) {
  if (instruction.empty())
    throw std::invalid_argument("ranking_chunk_scores: empty instruction");
  const TokenSequence instr = tokenize(instruction);
  std::vector<double> scores;
  scores.reserve(chunks.size());
  for (const Chunk& c : chunks)
    scores.push_back(model.rank_score(instr, model.encode(tokenize(c.text))));
  return scores;
}

std::vector<double> generation_chunk_scores(const CompressorModel& model,
                                            const std::string& instruction,
                                            const std::string& document,
                                            const std::vector<Chunk>& chunks, int gen_steps,
                                            int layer) {
  return mean_over_spans(gradcam_token_scores(model, instruction, document, gen_steps, layer),
                         chunks);
}

std::vector<double> selective_chunk_scores(const CompressorModel& model,
                                           const std::string& document,
                                           const std::vector<Chunk>& chunks) {
  return mean_over_spans(self_information_token_scores(model, document), chunks);
}

std::vector<double> fuse_average_rank(const std::vector<double>& scores_a,
                                      const std::vector<double>& scores_b) {
  if (scores_a.size() != scores_b.size())
    throw std::invalid_argument("fuse_average_rank: length mismatch");
  for (size_t i = 0; i < scores_a.size(); ++i)
    if (!std::isfinite(scores_a[i]) || !std::isfinite(scores_b[i]))
      throw std::invalid_argument("fuse_average_rank: non-finite score");
  const std::vector<int> ra = ordinal_ranks(scores_a);
  const std::vector<int> rb = ordinal_ranks(scores_b);
  std::vector<double> fused(scores_a.size());
  for (size_t i = 0; i < fused.size(); ++i)
    fused[i] = -(static_cast<double>(ra[i]) + static_cast<double>(rb[i])) / 2.0;
  return fused;
}

std::vector<double> chunk_scores_for(const CompressionRequest& req,
                                     const CompressorModel& model,
                                     const std::vector<Chunk>& chunks) {
  switch (req.method) {
    case CompressionMethod::kRanking:
      return ranking_chunk_scores(model, req.instruction, chunks);
    case CompressionMethod::kGeneration:
      return generation_chunk_scores(model, req.instruction, req.document, chunks,
                                     req.gen_steps, req.gradcam_layer);
    case CompressionMethod::kEnsemble:
      return fuse_average_rank(
          ranking_chunk_scores(model, req.instruction, chunks),
          generation_chunk_scores(model, req.instruction, req.document, chunks,
                                  req.gen_steps, req.gradcam_layer));
    case CompressionMethod::kSelective:
      return selective_chunk_scores(model, req.document, chunks);
  }
  throw std::logic_error("unreachable");
}

CompressionResult compress(const CompressionRequest& req, const CompressorModel& model) {
  req.validate();
  const std::vector<Chunk> chunks = split_chunks(req.document, req.chunking);
  if (chunks.empty()) throw DataError("compress: empty document after chunking");
  const std::vector<double> scores = chunk_scores_for(req, model, chunks);
  return select_and_reassemble(chunks, scores, req.ratio, req.chunking.delimiters);
}

std::string result_to_json_line(int64_t id, CompressionMethod method,
                                const CompressionResult& r) {
  nlohmann::json j{{"id", id},
                   {"method", method_name(method)},
                   {"retained_indices", r.retained_indices},
                   {"chunk_scores", r.chunk_scores},
                   {"compressed_text", r.compressed_text},
                   {"original_tokens", r.original_tokens},
                   {"retained_tokens", r.retained_tokens}};
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace ctxc
