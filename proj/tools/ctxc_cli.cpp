#include <CLI11.hpp>

#include <atomic>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "ctxc/compression.hpp"
#include "ctxc/dataset.hpp"
#include "ctxc/errors.hpp"
#include "ctxc/evaluation.hpp"
#include "ctxc/heatmap.hpp"
#include "ctxc/model.hpp"
#include "ctxc/training.hpp"

using namespace ctxc;

namespace {

std::string check_ratio(const std::string& s) {
  try {
    const double r = std::stod(s);
    if (r > 0.0 && r <= 1.0) return "";
  } catch (...) {
  }
  return "ratio must be in (0,1]";
}

ChunkingStrategy make_chunking(const std::string& kind, int window_tokens) {
  if (kind == "delimiter") return ChunkingStrategy();
  if (kind == "window") return ChunkingStrategy::window(window_tokens);
  throw UsageError("unknown chunking strategy: " + kind);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  size_t begin = 0;
  while (begin <= s.size()) {
    const size_t comma = s.find(',', begin);
    const size_t end = comma == std::string::npos ? s.size() : comma;
    if (end > begin) out.push_back(s.substr(begin, end - begin));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

void require_valid(const std::string& path, DatasetSchema schema) {
  const ValidationReport rep = validate_dataset(path, schema);
  if (!rep.violations.empty()) {
    std::cerr << path << ": " << rep.violations.size() << " schema violation(s):\n";
    for (const ValidationIssue& v : rep.violations)
      std::cerr << "  line " << v.line << ": " << v.message << "\n";
    throw DataError("dataset failed validation: " + path);
  }
}

struct CommonModelFlags {
  int enc_layers = 2, dec_layers = 2, d_model = 64, ffn_dim = 128, heads = 4,
      max_seq = 512;

  void attach(CLI::App* cmd) {
    cmd->add_option("--enc-layers", enc_layers, "encoder layers");
    cmd->add_option("--dec-layers", dec_layers, "decoder layers");
    cmd->add_option("--d-model", d_model, "model width");
    cmd->add_option("--ffn-dim", ffn_dim, "feed-forward width");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_option("--max-seq", max_seq, "maximum sequence length");
  }

  ModelConfig to_config(uint64_t seed) const {
    ModelConfig cfg;
    cfg.enc_layers = enc_layers;
    cfg.dec_layers = dec_layers;
    cfg.d_model = d_model;
    cfg.ffn_dim = ffn_dim;
    cfg.heads = heads;
    cfg.max_seq = max_seq;
    cfg.seed = seed;
    return cfg;
  }
};

int run_gen_synthetic(int n, int fillers, int negatives, uint64_t seed,
                      const std::string& out_qa, const std::string& out_cand) {
  const Dataset data = gen_synthetic(n, fillers, seed, negatives + 1);
  write_qa_jsonl(out_qa, data.qa);
  write_candidates_jsonl(out_cand, data.candidates);
  std::cout << "wrote " << data.qa.size() << " qa pairs to " << out_qa << " and "
            << data.candidates.size() << " candidate sets to " << out_cand << "\n";
  return 0;
}

int run_train(const std::string& qa_path, const std::string& cand_path,
              const std::string& out, const CommonModelFlags& dims, TrainConfig cfg,
              const std::string& val_path, double target_acc, int eval_every,
              int eval_limit) {
  Dataset data;
  if (!qa_path.empty()) {
    require_valid(qa_path, DatasetSchema::kQa);
    data.qa = read_qa_jsonl(qa_path);
  }
  if (!cand_path.empty()) {
    require_valid(cand_path, DatasetSchema::kCandidates);
    data.candidates = read_candidates_jsonl(cand_path);
  }
  std::vector<CandidateSet> val;
  if (!val_path.empty()) {
    require_valid(val_path, DatasetSchema::kCandidates);
    val = read_candidates_jsonl(val_path);
  }

  CompressorModel model(dims.to_config(cfg.seed));
  ProgressHook hook = [&](int step, CompressorModel& m) {
    if (!val.empty() && step % eval_every == 0) {
      const double acc = ranking_accuracy(m, val, static_cast<size_t>(eval_limit));
      std::cout << "step " << step << " val ranking accuracy " << acc << std::endl;
      if (acc >= target_acc) return false;
    }
    return true;
  };
  const TrainStats stats = train_joint(data, model, cfg, hook);
  model.save(out);
  if (!stats.rank_losses.empty())
    std::cout << "final losses: ranking " << stats.rank_losses.back() << " lm "
              << stats.lm_losses.back() << " after " << stats.steps << " steps\n";
  std::cout << "saved checkpoint to " << out << "\n";
  return 0;
}

int run_compress(const std::string& ckpt, const std::string& in, const std::string& out,
                 const std::string& method, double ratio, int gen_steps, int layer,
                 const std::string& chunking, int window_tokens, int jobs) {
  const CompressorModel model = CompressorModel::load(ckpt);
  require_valid(in, DatasetSchema::kQa);
  const std::vector<QAPair> qa = read_qa_jsonl(in);

  std::vector<std::string> lines(qa.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= qa.size()) return;
      CompressionRequest req;
      req.instruction = qa[i].instruction;
      req.document = qa[i].document;
      req.ratio = ratio;
      req.method = parse_method(method);
      req.chunking = make_chunking(chunking, window_tokens);
      req.gen_steps = gen_steps;
      req.gradcam_layer = layer;
      lines[i] = result_to_json_line(qa[i].id, req.method, compress(req, model));
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(qa.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + out);
  for (const std::string& line : lines) f << line << "\n";
  std::cout << "compressed " << qa.size() << " documents to " << out << "\n";
  return 0;
}

int run_rank(const std::string& ckpt, const std::string& in, const std::string& out) {
  const CompressorModel model = CompressorModel::load(ckpt);
  require_valid(in, DatasetSchema::kCandidates);
  const std::vector<CandidateSet> sets = read_candidates_jsonl(in);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + out);
  for (const CandidateSet& set : sets) {
    const TokenSequence instr = tokenize(set.instruction);
    std::vector<double> scores;
    scores.reserve(set.candidates.size());
    for (const std::string& doc : set.candidates)
      scores.push_back(model.rank_score(instr, model.encode(tokenize(doc))));
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
      return a < b;
    });
    nlohmann::json j{{"id", set.id}, {"order", order}, {"scores", scores}};
    f << j.dump() << "\n";
  }
  std::cout << "ranked " << sets.size() << " candidate sets to " << out << "\n";
  return 0;
}

int run_eval(const std::string& results_path, const std::string& qa_path,
             const std::string& out) {
  require_valid(qa_path, DatasetSchema::kQa);
  const std::vector<QAPair> qa = read_qa_jsonl(qa_path);
  std::unordered_map<int64_t, const QAPair*> by_id;
  for (const QAPair& q : qa) by_id.emplace(q.id, &q);

  std::ifstream f(results_path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + results_path);
  std::string line;
  int line_no = 0;
  RougeScore r1, r2, rl;
  double retention = 0.0;
  int retention_n = 0, count = 0;
  std::vector<CompressionResult> results;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      CompressionResult r;
      r.compressed_text = j.at("compressed_text").get<std::string>();
      r.retained_indices = j.at("retained_indices").get<std::vector<int>>();
      r.original_tokens = j.at("original_tokens").get<int64_t>();
      r.retained_tokens = j.at("retained_tokens").get<int64_t>();
      const int64_t id = j.at("id").get<int64_t>();
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw DataError(results_path + ":" + std::to_string(line_no) +
                        ": id not present in qa file");
      const QAPair& pair = *it->second;
      const std::string ans = extractive_answer(r.compressed_text, pair.instruction);
      auto acc = [](RougeScore& dst, const RougeScore& s) {
        dst.precision += s.precision;
        dst.recall += s.recall;
        dst.f1 += s.f1;
      };
      acc(r1, rouge_n(ans, pair.reference, 1));
      acc(r2, rouge_n(ans, pair.reference, 2));
      acc(rl, rouge_l(ans, pair.reference));
      if (pair.needle_chunk_index) {
        retention += std::binary_search(r.retained_indices.begin(),
                                        r.retained_indices.end(),
                                        *pair.needle_chunk_index)
                         ? 1.0
                         : 0.0;
        ++retention_n;
      }
      ++count;
      results.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(results_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (count == 0) throw DataError("no results in " + results_path);
  const CostReport cost = cost_report(results);
  const double n = count;
  nlohmann::json rep{
      {"count", count},
      {"rouge1", {{"precision", r1.precision / n}, {"recall", r1.recall / n}, {"f1", r1.f1 / n}}},
      {"rouge2", {{"precision", r2.precision / n}, {"recall", r2.recall / n}, {"f1", r2.f1 / n}}},
      {"rougeL", {{"precision", rl.precision / n}, {"recall", rl.recall / n}, {"f1", rl.f1 / n}}},
      {"needle_retention", retention_n ? retention / retention_n : 0.0},
      {"mean_token_reduction", cost.mean_token_reduction},
      {"est_relative_prompt_cost", cost.est_relative_prompt_cost}};
  std::ofstream of(out, std::ios::binary | std::ios::trunc);
  if (!of) throw DataError("cannot open for writing: " + out);
  of << rep.dump(2) << "\n";
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int run_sweep_cmd(const std::string& ckpt, const std::string& qa_path,
                  const std::string& methods_csv, const std::string& ratios_csv,
                  int gen_steps, const std::string& chunking, int window_tokens,
                  const std::string& out_csv, const std::string& out_json) {
  const CompressorModel model = CompressorModel::load(ckpt);
  require_valid(qa_path, DatasetSchema::kQa);
  const std::vector<QAPair> qa = read_qa_jsonl(qa_path);

  std::vector<CompressionMethod> methods;
  for (const std::string& m : split_csv(methods_csv)) methods.push_back(parse_method(m));
  std::vector<double> ratios;
  for (const std::string& r : split_csv(ratios_csv)) {
    const std::string err = check_ratio(r);
    if (!err.empty()) throw UsageError(err);
    ratios.push_back(std::stod(r));
  }
  if (methods.empty() || ratios.empty())
    throw UsageError("sweep requires at least one method and one ratio");

  const SweepReport rep =
      run_sweep(qa, model, methods, ratios, gen_steps, make_chunking(chunking, window_tokens));
  if (!out_csv.empty()) {
    std::ofstream f(out_csv, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + out_csv);
    f << sweep_to_csv(rep);
  }
  if (!out_json.empty()) {
    std::ofstream f(out_json, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + out_json);
    f << sweep_to_json(rep) << "\n";
  }
  std::cout << sweep_to_csv(rep);
  return 0;
}

int run_gradcam_viz(const std::string& ckpt, std::string instruction, std::string document,
                    const std::string& qa_path, int line_index, const std::string& out,
                    int gen_steps, int layer) {
  const CompressorModel model = CompressorModel::load(ckpt);
  if (!qa_path.empty()) {
    const std::vector<QAPair> qa = read_qa_jsonl(qa_path);
    if (line_index < 0 || static_cast<size_t>(line_index) >= qa.size())
      throw UsageError("--line out of range for " + qa_path);
    instruction = qa[static_cast<size_t>(line_index)].instruction;
    document = qa[static_cast<size_t>(line_index)].document;
  }
  if (instruction.empty() || document.empty())
    throw UsageError("provide --instruction and --document, or --qa with --line");
  const std::vector<double> scores =
      gradcam_token_scores(model, instruction, document, gen_steps, layer);
  emit_heatmap(document, scores, instruction, out);
  std::cout << "wrote heatmap to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instruction-aware context compression toolkit"};
  app.require_subcommand(1);
  uint64_t seed = 0;
  app.add_option("--seed", seed, "global random seed")->capture_default_str();

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "generate a needle-in-haystack corpus");
  int gen_n = 100, gen_fillers = 9, gen_negatives = 19;
  std::string gen_out_qa, gen_out_cand;
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--fillers", gen_fillers, "filler sentences per document")
      ->capture_default_str();
  gen->add_option("--negatives", gen_negatives, "hard negatives per candidate set")
      ->capture_default_str();
  gen->add_option("--out-qa", gen_out_qa, "output qa jsonl")->required();
  gen->add_option("--out-candidates", gen_out_cand, "output candidates jsonl")->required();

  // train
  auto* train = app.add_subcommand("train", "jointly train ranking + generation");
  std::string tr_qa, tr_cand, tr_out, tr_val;
  CommonModelFlags tr_dims;
  TrainConfig tr_cfg;
  double tr_target_acc = 0.9;
  int tr_eval_every = 100, tr_eval_limit = 100;
  train->add_option("--qa", tr_qa, "qa jsonl (generation objective)");
  train->add_option("--candidates", tr_cand, "candidates jsonl (ranking objective)");
  train->add_option("--out", tr_out, "output checkpoint path")->required();
  train->add_option("--epochs", tr_cfg.epochs)->capture_default_str();
  train->add_option("--lr", tr_cfg.lr)->capture_default_str();
  train->add_option("--batch", tr_cfg.batch)->capture_default_str();
  train->add_option("--smoothing", tr_cfg.smoothing)->capture_default_str();
  train->add_option("--w-rank", tr_cfg.w_rank)->capture_default_str();
  train->add_option("--w-lm", tr_cfg.w_lm)->capture_default_str();
  train->add_option("--val-candidates", tr_val, "held-out candidate sets for early stop");
  train->add_option("--target-acc", tr_target_acc)->capture_default_str();
  train->add_option("--eval-every", tr_eval_every)->capture_default_str();
  train->add_option("--eval-limit", tr_eval_limit)->capture_default_str();
  tr_dims.attach(train);

  // compress
  auto* comp = app.add_subcommand("compress", "compress documents against instructions");
  std::string c_ckpt, c_in, c_out, c_method = "ensemble", c_chunking = "delimiter";
  double c_ratio = 0.5;
  int c_gen_steps = 32, c_layer = -1, c_window = 32, c_jobs = 1;
  comp->add_option("--checkpoint", c_ckpt)->required();
  comp->add_option("--in", c_in, "qa jsonl input")->required();
  comp->add_option("--out", c_out, "results jsonl output")->required();
  comp->add_option("--method", c_method)
      ->check(CLI::IsMember({"ranking", "generation", "ensemble", "selective"}))
      ->capture_default_str();
  comp->add_option("--ratio", c_ratio)->check(check_ratio)->capture_default_str();
  comp->add_option("--gen-steps", c_gen_steps)->capture_default_str();
  comp->add_option("--gradcam-layer", c_layer, "-1 selects the last decoder layer")
      ->capture_default_str();
  comp->add_option("--chunking", c_chunking)
      ->check(CLI::IsMember({"delimiter", "window"}))
      ->capture_default_str();
  comp->add_option("--window-tokens", c_window)->capture_default_str();
  comp->add_option("--jobs", c_jobs, "parallel workers; output order is preserved")
      ->capture_default_str();

  // rank
  auto* rank = app.add_subcommand("rank", "score and order candidate sets");
  std::string r_ckpt, r_in, r_out;
  rank->add_option("--checkpoint", r_ckpt)->required();
  rank->add_option("--in", r_in, "candidates jsonl")->required();
  rank->add_option("--out", r_out, "rankings jsonl")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "score compression results against references");
  std::string e_results, e_qa, e_out;
  ev->add_option("--results", e_results, "compression results jsonl")->required();
  ev->add_option("--qa", e_qa, "qa jsonl with references")->required();
  ev->add_option("--out", e_out, "report json output")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "retention-ratio sweep with report");
  std::string s_ckpt, s_qa, s_methods = "ranking,generation,ensemble,selective";
  std::string s_ratios = "0.2,0.35,0.5,0.65,0.8", s_chunking = "delimiter";
  std::string s_out_csv, s_out_json;
  int s_gen_steps = 32, s_window = 32;
  sw->add_option("--checkpoint", s_ckpt)->required();
  sw->add_option("--qa", s_qa)->required();
  sw->add_option("--methods", s_methods)->capture_default_str();
  sw->add_option("--ratios", s_ratios)->capture_default_str();
  sw->add_option("--gen-steps", s_gen_steps)->capture_default_str();
  sw->add_option("--chunking", s_chunking)
      ->check(CLI::IsMember({"delimiter", "window"}))
      ->capture_default_str();
  sw->add_option("--window-tokens", s_window)->capture_default_str();
  sw->add_option("--out-csv", s_out_csv);
  sw->add_option("--out-json", s_out_json);

  // gradcam-viz
  auto* viz = app.add_subcommand("gradcam-viz", "emit a token-relevance heatmap");
  std::string v_ckpt, v_instruction, v_document, v_qa, v_out;
  int v_line = 0, v_gen_steps = 32, v_layer = -1;
  viz->add_option("--checkpoint", v_ckpt)->required();
  viz->add_option("--instruction", v_instruction);
  viz->add_option("--document", v_document);
  viz->add_option("--qa", v_qa, "take instruction/document from this qa jsonl");
  viz->add_option("--line", v_line, "0-based line into --qa")->capture_default_str();
  viz->add_option("--out", v_out, "output html path")->required();
  viz->add_option("--gen-steps", v_gen_steps)->capture_default_str();
  viz->add_option("--layer", v_layer)->capture_default_str();

  // lets the global --seed appear after a subcommand name
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    tr_cfg.seed = seed;
    if (*gen) return run_gen_synthetic(gen_n, gen_fillers, gen_negatives, seed, gen_out_qa,
                                       gen_out_cand);
    if (*train)
      return run_train(tr_qa, tr_cand, tr_out, tr_dims, tr_cfg, tr_val, tr_target_acc,
                       tr_eval_every, tr_eval_limit);
    if (*comp)
      return run_compress(c_ckpt, c_in, c_out, c_method, c_ratio, c_gen_steps, c_layer,
                          c_chunking, c_window, c_jobs);
    if (*rank) return run_rank(r_ckpt, r_in, r_out);
    if (*ev) return run_eval(e_results, e_qa, e_out);
    if (*sw)
      return run_sweep_cmd(s_ckpt, s_qa, s_methods, s_ratios, s_gen_steps, s_chunking,
                           s_window, s_out_csv, s_out_json);
    if (*viz)
      return run_gradcam_viz(v_ckpt, v_instruction, v_document, v_qa, v_line, v_out,
                             v_gen_steps, v_layer);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
