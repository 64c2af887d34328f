#pragma once

#include <functional>

#include "ctxc/dataset.hpp"
#include "ctxc/model.hpp"

namespace ctxc {

struct TrainConfig {
  double lr = 3e-4;
  int epochs = 1;  // 0 is a no-op pass (model untouched)
  int batch = 8;
  double smoothing = 0.1;
  double w_rank = 1.0;
  double w_lm = 1.0;
  int warmup_steps = 0;  // linear LR ramp over the first N optimizer steps
  uint64_t seed = 0;

  void validate() const;
};

// -log softmax(scores)[target]; the c-class ranking objective with a
// one-hot target.
double ranking_loss(const Vector& scores, int target);

// Mean over non-PAD positions of (1-eps) * NLL(target) + eps * uniform
// cross-entropy over the vocabulary. eps = 0 reduces to the plain
// autoregressive NLL mean. pad_id = -1 disables PAD exclusion.
double lm_loss_smoothed(const Matrix& logits, const std::vector<int>& targets, double eps,
                        int pad_id = kPadId);

// ---- graph builders (shared by the trainer and gradient checks) ----

Node* ranking_loss_node(Graph& g, const CompressorModel& model,
                        const std::string& instruction,
                        const std::vector<std::string>& candidates, int target);

// LM loss for one (context, instruction, response) triple. Decoder input is
// [BOS] + instruction + reference; loss covers the reference tokens plus the
// closing EOS, with instruction positions PAD-masked out of the mean.
Node* lm_loss_node(Graph& g, const CompressorModel& model, Node* enc_states,
                   const std::string& instruction, const std::string& reference,
                   double eps);

// ---- optimization ----

class AdamOptimizer {
 public:
  AdamOptimizer(std::deque<Parameter>& params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  // One update from the accumulated Parameter gradients (divided by
  // `accumulated` to form a mean), then clears them. lr_scale multiplies the
  // base rate for this step (warmup/schedules).
  void step(int accumulated = 1, double lr_scale = 1.0);

 private:
  std::deque<Parameter>* params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainStats {
  std::vector<double> rank_losses;  // per optimizer step (batch means)
  std::vector<double> lm_losses;
  int steps = 0;
};

// Called after every optimizer step; return false to stop training early.
using ProgressHook = std::function<bool(int step, CompressorModel& model)>;

// Joint optimization: per sample, one encoder pass over the positive
// document serves both the ranking pass and the generation pass of the
// decoder; negatives are encoded for ranking only. Samples pair a
// CandidateSet with the QAPair of the same id when present.
TrainStats train_joint(const Dataset& data, CompressorModel& model, const TrainConfig& cfg,
                       const ProgressHook& hook = nullptr);

// Fraction of candidate sets whose positive (index 0) gets the top score.
// limit = 0 evaluates all sets.
double ranking_accuracy(const CompressorModel& model, const std::vector<CandidateSet>& sets,
                        size_t limit = 0);

}  // namespace ctxc
