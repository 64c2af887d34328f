#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "ctxc/autodiff.hpp"
#include "ctxc/tokenizer.hpp"

namespace ctxc {

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int d_model = 64;
  int ffn_dim = 128;
  int heads = 4;
  int vocab = kVocabSize;
  int max_seq = 512;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// The decoder's two functionalities share one set of weights and differ only
// in the self-attention mask.
enum class DecoderMode { kRanking, kGeneration };

// Cross-attention maps and their gradients for every decoder layer, shapes
// {heads, dec_len, enc_len}. Gradients are populated by a backward pass from
// one chosen-token logit.
struct AttentionTrace {
  std::vector<Tensor> maps;
  std::vector<Tensor> grads;
};

struct TraceResult {
  TokenSequence generated;          // emitted tokens, EOS excluded
  std::vector<int> step_tokens;     // argmax token per traced step (may end with EOS)
  std::vector<AttentionTrace> steps;
};

// One decoder run with recorded cross-attention state; test hook `probes`
// adds a constant offset to each layer's cross-attention map so map
// gradients can be finite-difference checked.
struct DecoderRun {
  Tensor logits;  // {dec_len, vocab}
  int chosen = -1;  // argmax token at the last position
  AttentionTrace trace;
};

// backprop_token sentinels for run_decoder_traced
constexpr int kNoBackprop = -1;
constexpr int kBackpropArgmax = -2;

// Encoder-decoder scorer/generator: a document encoder plus a single decoder
// whose ranking and generation modes are toggled by the self-attention mask,
// with a linear ranking head over mean-pooled decoder states and an LM head.
class CompressorModel {
 public:
  explicit CompressorModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::deque<Parameter>& parameters() { return params_; }
  const std::deque<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  // ---- graph builders (shared by training and inference paths) ----

  // Document states {len, d_model}; the encoder never sees the instruction.
  Node* encode_nodes(Graph& g, const TokenSequence& doc) const;

  // Bidirectional decoder pass over the instruction, cross-attending to
  // enc_states; mean-pooled and projected to the scalar matching score.
  Node* rank_score_node(Graph& g, const TokenSequence& instruction, Node* enc_states) const;

  // Decoder logits {len, vocab}. enc_states may be null (decoder-only
  // language modeling, used by the self-information baseline). When
  // tap_cross is set, cross-attention maps are tapped and collected.
  Node* decoder_logits_node(Graph& g, const TokenSequence& input, Node* enc_states,
                            DecoderMode mode, bool tap_cross = false,
                            std::vector<Node*>* cross_maps = nullptr,
                            const std::vector<Tensor>* probes = nullptr) const;

  // ---- plain inference ----

  Tensor encode(const TokenSequence& doc) const;
  double rank_score(const TokenSequence& instruction, const Tensor& enc_states) const;

  // Logits for every prefix position; prefix must begin with BOS. Pass
  // enc_states = nullptr to run the decoder without cross-attention.
  Tensor next_token_logits(const TokenSequence& prefix, const Tensor* enc_states) const;

  // Greedy decoding from [BOS] + instruction, up to k tokens, stopping at EOS.
  TokenSequence generate_greedy(const TokenSequence& instruction, const Tensor& enc_states,
                                int k) const;

  // Greedy decoding that records, per step, every decoder layer's
  // cross-attention map and its gradient w.r.t. that step's chosen-token
  // logit. A terminating EOS step is traced before stopping.
  TraceResult forward_with_trace(const TokenSequence& instruction, const Tensor& enc_states,
                                 int k) const;

  // Single traced decoder pass; backprop_token >= 0 backpropagates that
  // token's last-position logit into the trace gradients.
  DecoderRun run_decoder_traced(const TokenSequence& input, const Tensor* enc_states,
                                DecoderMode mode, int backprop_token,
                                const std::vector<Tensor>* probes = nullptr) const;

  // ---- checkpoint I/O (length-prefixed JSON manifest + raw f64 body) ----
  void save(const std::string& path) const;
  static CompressorModel load(const std::string& path);

 private:
  void build_parameters();
  Parameter& add_param(const std::string& name, std::vector<Index> shape);
  void init_weights();
  Tensor positional_slice(Index len) const;
  double embed_scale() const { return std::sqrt(static_cast<double>(cfg_.d_model)); }
  Node* transformer_ffn(Graph& g, Node* x, const std::string& prefix,
                        bool row_stable) const;
  Node* attention_block(Graph& g, Node* x_q, Node* x_kv, const std::string& prefix,
                        bool causal, bool tap, const Tensor* probe, Node** map_out,
                        bool row_stable) const;
  Node* decoder_states_node(Graph& g, const TokenSequence& input, Node* enc_states,
                            DecoderMode mode, bool tap_cross,
                            std::vector<Node*>* cross_maps,
                            const std::vector<Tensor>* probes) const;

  ModelConfig cfg_;
  std::deque<Parameter> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
  Tensor pos_enc_;  // {max_seq, d_model}, fixed sinusoidal
};

}  // namespace ctxc
