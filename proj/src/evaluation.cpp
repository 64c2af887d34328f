#include "ctxc/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <unordered_map>

#include <json.hpp>

namespace ctxc {

std::vector<std::string> rouge_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  bool saw_space = false;
  size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c < 0x80 && std::isspace(c)) {
      saw_space = true;
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size()) {
      const unsigned char d = static_cast<unsigned char>(text[j]);
      if (d < 0x80 && std::isspace(d)) break;
      ++j;
    }
    std::string word = text.substr(i, j - i);
    size_t b = 0, e = word.size();
    auto is_edge_punct = [](unsigned char ch) {
      return ch < 0x80 && std::ispunct(ch);
    };
    while (b < e && is_edge_punct(static_cast<unsigned char>(word[b]))) ++b;
    while (e > b && is_edge_punct(static_cast<unsigned char>(word[e - 1]))) --e;
    word = word.substr(b, e - b);
    for (char& ch : word)
      ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (!word.empty()) tokens.push_back(std::move(word));
    i = j;
  }
  bool non_ascii = false;
  for (char c : text) non_ascii = non_ascii || static_cast<unsigned char>(c) >= 0x80;
  if (!saw_space && non_ascii && !text.empty()) {
    // unspaced script: per-code-point tokens
    tokens.clear();
    size_t p = 0;
    while (p < text.size()) {
      const unsigned char b0 = static_cast<unsigned char>(text[p]);
      size_t len = 1;
      if ((b0 & 0xE0) == 0xC0) len = 2;
      else if ((b0 & 0xF0) == 0xE0) len = 3;
      else if ((b0 & 0xF8) == 0xF0) len = 4;
      len = std::min(len, text.size() - p);
      tokens.push_back(text.substr(p, len));
      p += len;
    }
  }
  return tokens;
}

namespace {

RougeScore from_counts(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  if (cand_total > 0) s.precision = overlap / cand_total;
  if (ref_total > 0) s.recall = overlap / ref_total;
  if (s.precision + s.recall > 0)
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& toks,
                                                     int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i)
    ++counts[std::vector<std::string>(toks.begin() + static_cast<long>(i),
                                      toks.begin() + static_cast<long>(i) + n)];
  return counts;
}

}  // namespace

RougeScore rouge_n(const std::string& candidate, const std::string& reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const auto cand = ngram_counts(rouge_tokenize(candidate), n);
  const auto ref = ngram_counts(rouge_tokenize(reference), n);
  double overlap = 0.0, cand_total = 0.0, ref_total = 0.0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);  // clipped
  }
  return from_counts(overlap, cand_total, ref_total);
}

RougeScore rouge_l(const std::string& candidate, const std::string& reference) {
  const auto cand = rouge_tokenize(candidate);
  const auto ref = rouge_tokenize(reference);
  const size_t m = cand.size(), n = ref.size();
  if (m == 0 || n == 0) return {};
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (size_t i = 1; i <= m; ++i)
    for (size_t j = 1; j <= n; ++j)
      dp[i][j] = cand[i - 1] == ref[j - 1] ? dp[i - 1][j - 1] + 1
                                           : std::max(dp[i - 1][j], dp[i][j - 1]);
  return from_counts(static_cast<double>(dp[m][n]), static_cast<double>(m),
                     static_cast<double>(n));
}

double recall_at_k(const std::vector<std::vector<int64_t>>& ranked_lists,
                   const std::vector<std::set<int64_t>>& positives, int k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (ranked_lists.empty()) throw std::invalid_argument("recall_at_k: empty query set");
  if (ranked_lists.size() != positives.size())
    throw std::invalid_argument("recall_at_k: query/positive count mismatch");
  size_t hits = 0;
  for (size_t q = 0; q < ranked_lists.size(); ++q) {
    const size_t top = std::min(static_cast<size_t>(k), ranked_lists[q].size());
    for (size_t i = 0; i < top; ++i)
      if (positives[q].count(ranked_lists[q][i])) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(ranked_lists.size());
}

std::string extractive_answer(const std::string& context, const std::string& instruction) {
  const std::vector<Chunk> sentences = split_chunks(context, ChunkingStrategy());
  if (sentences.empty()) return "";
  double best = -1.0;
  size_t best_idx = 0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    const double f1 = rouge_n(sentences[i].text, instruction, 1).f1;
    if (f1 > best) {
      best = f1;
      best_idx = i;
    }
  }
  return sentences[best_idx].text;
}

namespace {

struct MetricAccum {
  RougeScore r1, r2, rl;
  double retention = 0.0;
  double reduction = 0.0;
  int count = 0;
  int retention_count = 0;

  void add_rouge(const RougeScore& a, const RougeScore& b, const RougeScore& c) {
    r1.precision += a.precision; r1.recall += a.recall; r1.f1 += a.f1;
    r2.precision += b.precision; r2.recall += b.recall; r2.f1 += b.f1;
    rl.precision += c.precision; rl.recall += c.recall; rl.f1 += c.f1;
    ++count;
  }

  SweepRow finish(const std::string& method, double ratio) const {
    SweepRow row;
    row.method = method;
    row.ratio = ratio;
    const double n = count ? static_cast<double>(count) : 1.0;
    row.rouge1 = {r1.precision / n, r1.recall / n, r1.f1 / n};
    row.rouge2 = {r2.precision / n, r2.recall / n, r2.f1 / n};
    row.rougeL = {rl.precision / n, rl.recall / n, rl.f1 / n};
    row.needle_retention =
        retention_count ? retention / static_cast<double>(retention_count) : 0.0;
    row.token_reduction = count ? reduction / n : 0.0;
    return row;
  }
};

void score_answer(MetricAccum& acc, const std::string& context, const QAPair& qa) {
  const std::string ans = extractive_answer(context, qa.instruction);
  acc.add_rouge(rouge_n(ans, qa.reference, 1), rouge_n(ans, qa.reference, 2),
                rouge_l(ans, qa.reference));
}

}  // namespace

SweepReport run_sweep(const std::vector<QAPair>& dataset, const CompressorModel& model,
                      const std::vector<CompressionMethod>& methods,
                      const std::vector<double>& ratios, int gen_steps,
                      const ChunkingStrategy& chunking) {
  if (dataset.empty()) throw std::invalid_argument("run_sweep: empty dataset");
  SweepReport report;

  MetricAccum origin;
  for (const QAPair& qa : dataset) {
    score_answer(origin, qa.document, qa);
    if (qa.needle_chunk_index) {
      origin.retention += 1.0;
      ++origin.retention_count;
    }
  }
  report.rows.push_back(origin.finish("origin", 1.0));
  const SweepRow base = report.rows.front();  // by value: rows reallocates below

  for (const CompressionMethod method : methods) {
    // scores are ratio-independent; compute once per document
    std::vector<std::vector<Chunk>> all_chunks;
    std::vector<std::vector<double>> all_scores;
    all_chunks.reserve(dataset.size());
    for (const QAPair& qa : dataset) {
      CompressionRequest req;
      req.instruction = qa.instruction;
      req.document = qa.document;
      req.method = method;
      req.chunking = chunking;
      req.gen_steps = gen_steps;
      std::vector<Chunk> chunks = split_chunks(qa.document, chunking);
      all_scores.push_back(chunk_scores_for(req, model, chunks));
      all_chunks.push_back(std::move(chunks));
    }
    for (const double ratio : ratios) {
      MetricAccum acc;
      for (size_t i = 0; i < dataset.size(); ++i) {
        const QAPair& qa = dataset[i];
        const CompressionResult res =
            select_and_reassemble(all_chunks[i], all_scores[i], ratio, chunking.delimiters);
        score_answer(acc, res.compressed_text, qa);
        acc.reduction +=
            1.0 - static_cast<double>(res.retained_tokens) /
                      static_cast<double>(res.original_tokens);
        if (qa.needle_chunk_index) {
          const bool kept =
              std::binary_search(res.retained_indices.begin(), res.retained_indices.end(),
                                 *qa.needle_chunk_index);
          acc.retention += kept ? 1.0 : 0.0;
          ++acc.retention_count;
        }
      }
      SweepRow row = acc.finish(method_name(method), ratio);
      row.rouge1_diff = row.rouge1.f1 - base.rouge1.f1;
      row.rouge2_diff = row.rouge2.f1 - base.rouge2.f1;
      row.rougeL_diff = row.rougeL.f1 - base.rougeL.f1;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string sweep_to_csv(const SweepReport& report) {
  std::string out =
      "method,ratio,rouge1,rouge2,rougeL,rouge1_diff,rouge2_diff,rougeL_diff,"
      "needle_retention,token_reduction\n";
  for (const SweepRow& r : report.rows) {
    out += r.method + "," + fmt(r.ratio) + "," + fmt(r.rouge1.f1) + "," + fmt(r.rouge2.f1) +
           "," + fmt(r.rougeL.f1) + "," + fmt(r.rouge1_diff) + "," + fmt(r.rouge2_diff) +
           "," + fmt(r.rougeL_diff) + "," + fmt(r.needle_retention) + "," +
           fmt(r.token_reduction) + "\n";
  }
  return out;
}

std::string sweep_to_json(const SweepReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const SweepRow& r : report.rows) {
    auto rouge = [](const RougeScore& s) {
      return nlohmann::json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    };
    rows.push_back({{"method", r.method},
                    {"ratio", r.ratio},
                    {"rouge1", rouge(r.rouge1)},
                    {"rouge2", rouge(r.rouge2)},
                    {"rougeL", rouge(r.rougeL)},
                    {"rouge1_diff", r.rouge1_diff},
                    {"rouge2_diff", r.rouge2_diff},
                    {"rougeL_diff", r.rougeL_diff},
                    {"needle_retention", r.needle_retention},
                    {"token_reduction", r.token_reduction}});
  }
  return nlohmann::json{{"rows", rows}}.dump(2);
}

CostReport cost_report(const std::vector<CompressionResult>& results) {
  if (results.empty()) throw std::invalid_argument("cost_report: no results");
  double reduction = 0.0;
  for (const CompressionResult& r : results)
    reduction += 1.0 - static_cast<double>(r.retained_tokens) /
                           static_cast<double>(r.original_tokens);
  CostReport rep;
  rep.mean_token_reduction = reduction / static_cast<double>(results.size());
  rep.est_relative_prompt_cost = 1.0 - rep.mean_token_reduction;
  return rep;
}

}  // namespace ctxc
