#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctxc/evaluation.hpp"
#include "ctxc/training.hpp"
#include "test_support.hpp"

using namespace ctxc;
using namespace ctxc::testing;

namespace {

// Brute-force clipped n-gram overlap, kept independent of the library path.
RougeScore brute_rouge_n(const std::vector<std::string>& cand,
                         const std::vector<std::string>& ref, int n) {
  auto grams = [&](const std::vector<std::string>& t) {
    std::vector<std::string> out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= t.size(); ++i) {
      std::string g;
      for (int k = 0; k < n; ++k) g += t[i + static_cast<size_t>(k)] + "\x01";
      out.push_back(g);
    }
    return out;
  };
  const auto cg = grams(cand), rg = grams(ref);
  double overlap = 0.0;
  std::vector<bool> used(rg.size(), false);
  for (const std::string& g : cg)
    for (size_t j = 0; j < rg.size(); ++j)
      if (!used[j] && rg[j] == g) {
        used[j] = true;
        overlap += 1.0;
        break;
      }
  RougeScore s;
  if (!cg.empty()) s.precision = overlap / static_cast<double>(cg.size());
  if (!rg.empty()) s.recall = overlap / static_cast<double>(rg.size());
  if (s.precision + s.recall > 0)
    s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

// Exhaustive LCS: tries every subsequence of the candidate (lengths <= 12).
int brute_lcs(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  int best = 0;
  const size_t m = cand.size();
  for (uint32_t mask = 0; mask < (1u << m); ++mask) {
    std::vector<std::string> sub;
    for (size_t i = 0; i < m; ++i)
      if (mask & (1u << i)) sub.push_back(cand[i]);
    // is sub a subsequence of ref?
    size_t r = 0;
    for (const std::string& t : sub) {
      while (r < ref.size() && ref[r] != t) ++r;
      if (r == ref.size()) break;
      ++r;
    }
    const bool is_sub = sub.empty() || r <= ref.size();
    size_t matched = 0;
    {
      size_t rr = 0;
      for (const std::string& t : sub) {
        while (rr < ref.size() && ref[rr] != t) ++rr;
        if (rr == ref.size()) break;
        ++rr;
        ++matched;
      }
    }
    if (is_sub && matched == sub.size()) best = std::max(best, static_cast<int>(sub.size()));
  }
  return best;
}

std::vector<std::string> random_words(std::mt19937_64& rng, size_t max_len) {
  const size_t n = rng() % (max_len + 1);
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(rng() % 5));
  return out;
}

std::string join_words(const std::vector<std::string>& w) {
  std::string s;
  for (size_t i = 0; i < w.size(); ++i) {
    if (i) s += " ";
    s += w[i];
  }
  return s;
}

}  // namespace

TEST_CASE("rouge_n: spec cases") {
  const RougeScore same = rouge_n("alpha beta", "alpha beta", 1);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const RougeScore disjoint = rouge_n("aa bb", "cc dd", 1);
  CHECK(disjoint.f1 == 0.0);

  const RougeScore two_thirds = rouge_n("a b c", "a b d", 1);
  CHECK(two_thirds.precision == doctest::Approx(2.0 / 3.0));
  CHECK(two_thirds.recall == doctest::Approx(2.0 / 3.0));
  CHECK(two_thirds.f1 == doctest::Approx(2.0 / 3.0));

  CHECK(rouge_n("", "a b", 1).f1 == 0.0);
  CHECK(rouge_n("a b", "", 1).f1 == 0.0);
  CHECK_THROWS_AS(rouge_n("a", "a", 0), std::invalid_argument);
}

TEST_CASE("rouge_l: spec cases") {
  CHECK(rouge_l("x y z", "x y z").f1 == 1.0);
  const RougeScore s = rouge_l("a b c d", "a c b d");  // LCS = 3
  CHECK(s.precision == doctest::Approx(0.75));
  CHECK(s.recall == doctest::Approx(0.75));
  CHECK(s.f1 == doctest::Approx(0.75));
  CHECK(rouge_l("", "a").f1 == 0.0);
}

TEST_CASE("rouge matches brute-force oracles on random pairs") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cand = random_words(rng, 12);
    const auto ref = random_words(rng, 12);
    const std::string cand_s = join_words(cand), ref_s = join_words(ref);
    for (int n = 1; n <= 2; ++n) {
      const RougeScore got = rouge_n(cand_s, ref_s, n);
      const RougeScore want = brute_rouge_n(cand, ref, n);
      CHECK(got.precision == want.precision);  // exact: same counting, integer ratios
      CHECK(got.recall == want.recall);
      CHECK(got.f1 == want.f1);
    }
    const RougeScore got_l = rouge_l(cand_s, ref_s);
    const int lcs = brute_lcs(cand, ref);
    if (!cand.empty() && !ref.empty()) {
      CHECK(got_l.precision == static_cast<double>(lcs) / cand.size());
      CHECK(got_l.recall == static_cast<double>(lcs) / ref.size());
    }
  }
}

TEST_CASE("rouge: swapping candidate and reference swaps P and R") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::string a = join_words(random_words(rng, 10));
    const std::string b = join_words(random_words(rng, 10));
    for (int n = 1; n <= 2; ++n) {
      const RougeScore ab = rouge_n(a, b, n);
      const RougeScore ba = rouge_n(b, a, n);
      CHECK(ab.precision == ba.recall);
      CHECK(ab.recall == ba.precision);
      CHECK(ab.f1 == ba.f1);
    }
    const RougeScore lab = rouge_l(a, b), lba = rouge_l(b, a);
    CHECK(lab.precision == lba.recall);
    CHECK(lab.f1 == lba.f1);
  }
}

TEST_CASE("rouge tokenization: punctuation edges, case, unspaced scripts") {
  CHECK(rouge_tokenize("The 4B9. code!") ==
        std::vector<std::string>{"the", "4b9", "code"});
  CHECK(rouge_tokenize("\xE4\xBD\xA0\xE5\xA5\xBD").size() == 2);  // per code point
  CHECK(rouge_tokenize("").empty());
  // value with punctuation still matches its bare reference
  CHECK(rouge_n("is 4B9.", "4B9", 1).recall == 1.0);
}

TEST_CASE("recall_at_k: spec cases and monotonicity") {
  // positive always first
  std::vector<std::vector<int64_t>> first = {{0, 1, 2}, {5, 6, 7}};
  std::vector<std::set<int64_t>> pos_first = {{0}, {5}};
  for (int k = 1; k <= 3; ++k) CHECK(recall_at_k(first, pos_first, k) == 1.0);

  // positive at rank 3 everywhere
  std::vector<std::vector<int64_t>> third = {{9, 8, 0, 1}, {7, 6, 5, 4}};
  std::vector<std::set<int64_t>> pos_third = {{0}, {5}};
  CHECK(recall_at_k(third, pos_third, 1) == 0.0);
  CHECK(recall_at_k(third, pos_third, 5) == 1.0);

  // 8 of 10 queries hit at rank 1
  std::vector<std::vector<int64_t>> lists;
  std::vector<std::set<int64_t>> pos;
  for (int q = 0; q < 10; ++q) {
    lists.push_back({q < 8 ? 100 + q : -1, 0, 1});
    pos.push_back({100 + q});
  }
  CHECK(recall_at_k(lists, pos, 1) == doctest::Approx(0.8));

  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<int64_t>> rl;
    std::vector<std::set<int64_t>> ps;
    for (int q = 0; q < 6; ++q) {
      std::vector<int64_t> ids;
      for (int64_t i = 0; i < 8; ++i) ids.push_back(i);
      for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng() % i]);
      rl.push_back(ids);
      ps.push_back({static_cast<int64_t>(rng() % 8)});
    }
    double prev = 0.0;
    for (int k = 1; k <= 8; ++k) {
      const double r = recall_at_k(rl, ps, k);
      CHECK(r >= prev);  // non-decreasing in k
      prev = r;
    }
    CHECK(prev == 1.0);
  }

  CHECK_THROWS_AS(recall_at_k({}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(recall_at_k(first, pos_first, 0), std::invalid_argument);
}

TEST_CASE("extractive_answer picks the best-matching sentence deterministically") {
  const std::string ctx = "Mara packed 47 crates. The code for QX is 118. Ben slept.";
  CHECK(extractive_answer(ctx, "What is the code for QX?") ==
        " The code for QX is 118.");
  CHECK(extractive_answer("", "anything") == "");
}

TEST_CASE("run_sweep: shape, ratio-1.0 row equals origin bit-for-bit") {
  ModelConfig cfg;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.d_model = 16;
  cfg.ffn_dim = 32;
  cfg.heads = 2;
  cfg.max_seq = 256;
  cfg.seed = 13;
  CompressorModel model(cfg);
  const Dataset data = gen_synthetic(6, 4, 3, 3);

  const std::vector<CompressionMethod> methods = {CompressionMethod::kRanking,
                                                  CompressionMethod::kSelective};
  const std::vector<double> ratios = {0.5, 1.0};
  const SweepReport rep = run_sweep(data.qa, model, methods, ratios, 2);
  REQUIRE(rep.rows.size() == 1 + methods.size() * ratios.size());
  const SweepRow& origin = rep.rows[0];
  CHECK(origin.method == "origin");
  CHECK(origin.needle_retention == 1.0);
  CHECK(origin.token_reduction == 0.0);

  for (const SweepRow& row : rep.rows) {
    if (row.ratio != 1.0 || row.method == "origin") continue;
    CHECK(row.rouge1.precision == origin.rouge1.precision);
    CHECK(row.rouge1.f1 == origin.rouge1.f1);
    CHECK(row.rouge2.f1 == origin.rouge2.f1);
    CHECK(row.rougeL.f1 == origin.rougeL.f1);
    CHECK(row.rouge1_diff == 0.0);
    CHECK(row.needle_retention == 1.0);
    CHECK(row.token_reduction == 0.0);
  }

  const std::string csv = sweep_to_csv(rep);
  CHECK(csv.find("method,ratio,rouge1,rouge2,rougeL,rouge1_diff,rouge2_diff,"
                 "rougeL_diff,needle_retention,token_reduction") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(rep.rows.size()));
  CHECK(sweep_to_json(rep).find("\"rows\"") != std::string::npos);
}

TEST_CASE("cost_report: arithmetic and edge cases") {
  CompressionResult half;
  half.original_tokens = 1000;
  half.retained_tokens = 500;
  CompressionResult none;
  none.original_tokens = 300;
  none.retained_tokens = 300;

  const CostReport a = cost_report({half});
  CHECK(a.mean_token_reduction == doctest::Approx(0.5));
  CHECK(a.est_relative_prompt_cost == doctest::Approx(0.5));
  const CostReport b = cost_report({none});
  CHECK(b.mean_token_reduction == 0.0);
  const CostReport c = cost_report({half, none});
  CHECK(c.mean_token_reduction == doctest::Approx(0.25));
  CHECK_THROWS_AS(cost_report({}), std::invalid_argument);
}
