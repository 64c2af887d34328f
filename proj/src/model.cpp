#include "ctxc/model.hpp"

#include <bit>
#include <fstream>
#include <random>

#include <json.hpp>

#include "ctxc/errors.hpp"

namespace ctxc {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  // 53-bit mantissa draw; avoids implementation-defined std distributions
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

int argmax_row(const Tensor& logits, Index row) {
  Index best = 0;
  logits.mat().row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

void ModelConfig::validate() const {
  if (enc_layers < 1 || dec_layers < 1 || d_model < 1 || ffn_dim < 1 || heads < 1 ||
      max_seq < 1)
    throw UsageError("model dimensions must be >= 1");
  if (vocab < 4) throw UsageError("vocab must cover PAD/BOS/EOS plus content ids");
  if (d_model % heads != 0) throw UsageError("d_model must be divisible by heads");
}

CompressorModel::CompressorModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build_parameters();
  init_weights();
  // fixed sinusoidal positional encoding
  pos_enc_ = Tensor({cfg_.max_seq, cfg_.d_model});
  for (Index p = 0; p < cfg_.max_seq; ++p)
    for (Index i = 0; i < cfg_.d_model; ++i) {
      const double rate =
          std::pow(10000.0, static_cast<double>(2 * (i / 2)) / cfg_.d_model);
      pos_enc_.mat()(p, i) =
          (i % 2 == 0) ? std::sin(p / rate) : std::cos(p / rate);
    }
}

Parameter& CompressorModel::add_param(const std::string& name, std::vector<Index> shape) {
  params_.emplace_back(name, Tensor(std::move(shape)));
  by_name_[name] = &params_.back();
  return params_.back();
}

Parameter& CompressorModel::parameter(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return *it->second;
}

const Parameter& CompressorModel::parameter(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return *it->second;
}

void CompressorModel::build_parameters() {
  const Index d = cfg_.d_model, f = cfg_.ffn_dim, v = cfg_.vocab;
  // weights are stored {out, in}
  auto attn = [&](const std::string& p) {
    add_param(p + ".wq", {d, d});
    add_param(p + ".bq", {1, d});
    add_param(p + ".wk", {d, d});
    add_param(p + ".bk", {1, d});
    add_param(p + ".wv", {d, d});
    add_param(p + ".bv", {1, d});
    add_param(p + ".wo", {d, d});
    add_param(p + ".bo", {1, d});
  };
  auto norm = [&](const std::string& p) {
    add_param(p + ".g", {1, d});
    add_param(p + ".b", {1, d});
  };
  auto ffn = [&](const std::string& p) {
    add_param(p + ".w1", {f, d});
    add_param(p + ".b1", {1, f});
    add_param(p + ".w2", {d, f});
    add_param(p + ".b2", {1, d});
  };

  add_param("embed.tok", {v, d});
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    norm(p + ".ln1");
    attn(p + ".attn");
    norm(p + ".ln2");
    ffn(p + ".ffn");
  }
  norm("enc.ln");
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    norm(p + ".ln1");
    attn(p + ".self");
    norm(p + ".ln2");
    attn(p + ".cross");
    norm(p + ".ln3");
    ffn(p + ".ffn");
  }
  norm("dec.ln");
  add_param("head.rank.w", {1, d});
  add_param("head.rank.b", {1, 1});
  add_param("head.lm.b", {1, v});  // LM projection is tied to embed.tok
}

void CompressorModel::init_weights() {
  std::mt19937_64 rng(cfg_.seed);
  for (Parameter& p : params_) {
    const size_t dot = p.name.rfind('.');
    const std::string leaf = p.name.substr(dot + 1);
    if (leaf == "g") {
      p.value.flat().setOnes();  // layer-norm gains
    } else if (leaf[0] == 'b') {
      p.value.flat().setZero();  // biases
    } else {
      // Xavier-uniform; weights are {fan_out, fan_in}
      const double limit =
          std::sqrt(6.0 / static_cast<double>(p.value.dim(0) + p.value.dim(1)));
      for (Index i = 0; i < p.value.numel(); ++i)
        p.value[i] = uniform(rng, -limit, limit);
    }
  }
}

Tensor CompressorModel::positional_slice(Index len) const {
  Tensor t({len, cfg_.d_model});
  t.mat() = pos_enc_.mat().topRows(len);
  return t;
}

Node* CompressorModel::attention_block(Graph& g, Node* x_q, Node* x_kv,
                                       const std::string& prefix, bool causal, bool tap,
                                       const Tensor* probe, Node** map_out,
                                       bool row_stable) const {
  auto lin = [&](Node* x, const std::string& w, const std::string& b, bool rs) {
    return rs ? g.linear_rows(x, g.param(parameter(w)), g.param(parameter(b)))
              : g.linear(x, g.param(parameter(w)), g.param(parameter(b)));
  };
  // key/value projections follow the kv input: fixed-length encoder states
  // keep the fast path even inside the decoder
  const bool kv_stable = row_stable && x_q == x_kv;
  Node* q = lin(x_q, prefix + ".wq", prefix + ".bq", row_stable);
  Node* k = lin(x_kv, prefix + ".wk", prefix + ".bk", kv_stable);
  Node* v = lin(x_kv, prefix + ".wv", prefix + ".bv", kv_stable);
  Node* map = g.attn_map(q, k, cfg_.heads, causal, tap, probe, row_stable);
  if (map_out) *map_out = map;
  Node* att = g.attn_apply(map, v, cfg_.heads, row_stable);
  return lin(att, prefix + ".wo", prefix + ".bo", row_stable);
}

Node* CompressorModel::transformer_ffn(Graph& g, Node* x, const std::string& prefix,
                                        bool row_stable) const {
  auto lin = [&](Node* in, const std::string& w, const std::string& b) {
    return row_stable ? g.linear_rows(in, g.param(parameter(w)), g.param(parameter(b)))
                      : g.linear(in, g.param(parameter(w)), g.param(parameter(b)));
  };
  return lin(g.silu(lin(x, prefix + ".w1", prefix + ".b1")), prefix + ".w2",
             prefix + ".b2");
}

Node* CompressorModel::encode_nodes(Graph& g, const TokenSequence& doc) const {
  if (doc.empty()) throw std::invalid_argument("encode: empty document");
  if (static_cast<int>(doc.size()) > cfg_.max_seq)
    throw std::invalid_argument("encode: document exceeds max_seq (" +
                                std::to_string(doc.size()) + " > " +
                                std::to_string(cfg_.max_seq) + ")");
  auto ln = [&](Node* x, const std::string& p) {
    return g.layer_norm(x, g.param(parameter(p + ".g")),
                        g.param(parameter(p + ".b")));
  };
  Node* x = g.scale(g.embed(g.param(parameter("embed.tok")), doc), embed_scale());
  x = g.add_const(x, positional_slice(static_cast<Index>(doc.size())));
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    Node* h = ln(x, p + ".ln1");
    x = g.add(x, attention_block(g, h, h, p + ".attn", /*causal=*/false, false, nullptr,
                                 nullptr, /*row_stable=*/false));
    x = g.add(x, transformer_ffn(g, ln(x, p + ".ln2"), p + ".ffn", false));
  }
  return ln(x, "enc.ln");
}

Node* CompressorModel::decoder_states_node(Graph& g, const TokenSequence& input,
                                           Node* enc_states, DecoderMode mode,
                                           bool tap_cross, std::vector<Node*>* cross_maps,
                                           const std::vector<Tensor>* probes) const {
  if (input.empty()) throw std::invalid_argument("decoder: empty input");
  if (static_cast<int>(input.size()) > cfg_.max_seq)
    throw std::invalid_argument("decoder: input exceeds max_seq");
  if (probes && static_cast<int>(probes->size()) != cfg_.dec_layers)
    throw std::invalid_argument("decoder: one probe per decoder layer required");
  auto ln = [&](Node* x, const std::string& p) {
    return g.layer_norm(x, g.param(parameter(p + ".g")),
                        g.param(parameter(p + ".b")));
  };
  const bool causal = mode == DecoderMode::kGeneration;
  Node* x = g.scale(g.embed(g.param(parameter("embed.tok")), input), embed_scale());
  x = g.add_const(x, positional_slice(static_cast<Index>(input.size())));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    Node* h = ln(x, p + ".ln1");
    x = g.add(x, attention_block(g, h, h, p + ".self", causal, false, nullptr, nullptr,
                                 /*row_stable=*/true));
    if (enc_states) {
      Node* map = nullptr;
      x = g.add(x, attention_block(g, ln(x, p + ".ln2"), enc_states, p + ".cross",
                                   /*causal=*/false, tap_cross,
                                   probes ? &(*probes)[static_cast<size_t>(l)] : nullptr,
                                   &map, /*row_stable=*/true));
      if (cross_maps) cross_maps->push_back(map);
    }
    x = g.add(x, transformer_ffn(g, ln(x, p + ".ln3"), p + ".ffn", true));
  }
  return ln(x, "dec.ln");
}

Node* CompressorModel::rank_score_node(Graph& g, const TokenSequence& instruction,
                                       Node* enc_states) const {
  if (instruction.empty()) throw std::invalid_argument("rank_score: empty instruction");
  Node* states = decoder_states_node(g, instruction, enc_states, DecoderMode::kRanking,
                                     false, nullptr, nullptr);
  Node* pooled = g.mean_rows(states);
  Node* score = g.linear_rows(pooled, g.param(parameter("head.rank.w")),
                              g.param(parameter("head.rank.b")));
  return g.pick(score, 0, 0);
}

Node* CompressorModel::decoder_logits_node(Graph& g, const TokenSequence& input,
                                           Node* enc_states, DecoderMode mode,
                                           bool tap_cross, std::vector<Node*>* cross_maps,
                                           const std::vector<Tensor>* probes) const {
  Node* states =
      decoder_states_node(g, input, enc_states, mode, tap_cross, cross_maps, probes);
  // output projection tied to the token embedding
  return g.linear_rows(states, g.param(parameter("embed.tok")),
                       g.param(parameter("head.lm.b")));
}

Tensor CompressorModel::encode(const TokenSequence& doc) const {
  Graph g(/*grads_into_params=*/false);
  return encode_nodes(g, doc)->value;
}

double CompressorModel::rank_score(const TokenSequence& instruction,
                                   const Tensor& enc_states) const {
  Graph g(false);
  return rank_score_node(g, instruction, g.leaf(enc_states))->value[0];
}

Tensor CompressorModel::next_token_logits(const TokenSequence& prefix,
                                          const Tensor* enc_states) const {
  if (prefix.empty() || prefix[0] != kBosId)
    throw std::invalid_argument("next_token_logits: prefix must begin with BOS");
  Graph g(false);
  Node* enc = enc_states ? g.leaf(*enc_states) : nullptr;
  return decoder_logits_node(g, prefix, enc, DecoderMode::kGeneration)->value;
}

DecoderRun CompressorModel::run_decoder_traced(const TokenSequence& input,
                                               const Tensor* enc_states, DecoderMode mode,
                                               int backprop_token,
                                               const std::vector<Tensor>* probes) const {
  Graph g(false);
  Node* enc = enc_states ? g.leaf(*enc_states) : nullptr;
  std::vector<Node*> map_nodes;
  Node* logits =
      decoder_logits_node(g, input, enc, mode, /*tap_cross=*/true, &map_nodes, probes);
  const Index last = logits->value.dim(0) - 1;
  if (backprop_token == kBackpropArgmax) backprop_token = argmax_row(logits->value, last);
  if (backprop_token >= 0) {
    if (backprop_token >= cfg_.vocab)
      throw std::invalid_argument("run_decoder_traced: token out of range");
    g.backward(g.pick(logits, last, backprop_token));
  }
  DecoderRun run;
  run.logits = logits->value;
  run.chosen = argmax_row(logits->value, last);
  for (Node* m : map_nodes) {
    run.trace.maps.push_back(m->value);
    run.trace.grads.push_back(m->grad);
  }
  return run;
}

TokenSequence CompressorModel::generate_greedy(const TokenSequence& instruction,
                                               const Tensor& enc_states, int k) const {
  if (k < 1) throw std::invalid_argument("generate_greedy: k must be >= 1");
  TokenSequence prefix;
  prefix.push_back(kBosId);
  prefix.insert(prefix.end(), instruction.begin(), instruction.end());
  TokenSequence out;
  for (int step = 0; step < k; ++step) {
    if (static_cast<int>(prefix.size()) >= cfg_.max_seq) break;
    const Tensor logits = next_token_logits(prefix, &enc_states);
    const int tok = argmax_row(logits, logits.dim(0) - 1);
    if (tok == kEosId) break;
    out.push_back(tok);
    prefix.push_back(tok);
  }
  return out;
}

TraceResult CompressorModel::forward_with_trace(const TokenSequence& instruction,
                                                const Tensor& enc_states, int k) const {
  if (k < 1) throw std::invalid_argument("forward_with_trace: k must be >= 1");
  TraceResult res;
  TokenSequence prefix;
  prefix.push_back(kBosId);
  prefix.insert(prefix.end(), instruction.begin(), instruction.end());
  for (int step = 0; step < k; ++step) {
    if (static_cast<int>(prefix.size()) >= cfg_.max_seq) break;
    DecoderRun run =
        run_decoder_traced(prefix, &enc_states, DecoderMode::kGeneration, kBackpropArgmax);
    res.step_tokens.push_back(run.chosen);
    res.steps.push_back(std::move(run.trace));
    if (run.chosen == kEosId) break;
    res.generated.push_back(run.chosen);
    prefix.push_back(run.chosen);
  }
  return res;
}

// ---- checkpoint I/O ----

void CompressorModel::save(const std::string& path) const {
  json manifest;
  manifest["config"] = {{"enc_layers", cfg_.enc_layers}, {"dec_layers", cfg_.dec_layers},
                        {"d_model", cfg_.d_model},       {"ffn_dim", cfg_.ffn_dim},
                        {"heads", cfg_.heads},           {"vocab", cfg_.vocab},
                        {"max_seq", cfg_.max_seq},       {"seed", cfg_.seed}};
  json dir = json::array();
  uint64_t offset = 0;
  for (const Parameter& p : params_) {
    json entry;
    entry["name"] = p.name;
    entry["shape"] = p.value.shape();
    entry["byte_offset"] = offset;
    dir.push_back(entry);
    offset += static_cast<uint64_t>(p.value.numel()) * sizeof(double);
  }
  manifest["tensors"] = dir;
  const std::string header = manifest.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  const uint64_t len = header.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Parameter& p : params_)
    f.write(reinterpret_cast<const char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
  if (!f) throw DataError("failed writing checkpoint: " + path);
}

CompressorModel CompressorModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || len == 0 || len > (1ull << 32))
    throw DataError("corrupt checkpoint header: " + path);
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw DataError("corrupt checkpoint header: " + path);

  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw DataError("invalid checkpoint manifest: " + std::string(e.what()));
  }
  ModelConfig cfg;
  try {
    const json& c = manifest.at("config");
    cfg.enc_layers = c.at("enc_layers").get<int>();
    cfg.dec_layers = c.at("dec_layers").get<int>();
    cfg.d_model = c.at("d_model").get<int>();
    cfg.ffn_dim = c.at("ffn_dim").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.vocab = c.at("vocab").get<int>();
    cfg.max_seq = c.at("max_seq").get<int>();
    cfg.seed = c.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw DataError("invalid checkpoint config: " + std::string(e.what()));
  }

  CompressorModel model(cfg);
  const std::streampos body = f.tellg();
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw DataError("checkpoint manifest missing tensor directory");
  size_t listed = 0;
  for (const json& entry : manifest["tensors"]) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<Index> shape = entry.at("shape").get<std::vector<Index>>();
    const uint64_t off = entry.at("byte_offset").get<uint64_t>();
    Parameter* p = nullptr;
    try {
      p = &model.parameter(name);
    } catch (const std::invalid_argument&) {
      throw DataError("checkpoint tensor does not match model: " + name);
    }
    if (p->value.shape() != shape)
      throw DataError("checkpoint tensor shape mismatch for " + name);
    f.seekg(body + static_cast<std::streamoff>(off));
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
    if (!f) throw DataError("truncated checkpoint body: " + path);
    ++listed;
  }
  if (listed != model.params_.size())
    throw DataError("checkpoint tensor directory incomplete");
  return model;
}

}  // namespace ctxc
