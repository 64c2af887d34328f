#include "ctxc/training.hpp"

#include <random>
#include <unordered_map>

#include "ctxc/errors.hpp"

namespace ctxc {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw UsageError("lr must be > 0");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (batch < 1) throw UsageError("batch must be >= 1");
  if (smoothing < 0.0 || smoothing >= 1.0) throw UsageError("smoothing must be in [0,1)");
  if (warmup_steps < 0) throw UsageError("warmup_steps must be >= 0");
}

double ranking_loss(const Vector& scores, int target) {
  if (scores.size() < 2) throw std::invalid_argument("ranking_loss: need at least 2 scores");
  if (target < 0 || target >= scores.size())
    throw std::invalid_argument("ranking_loss: target out of range");
  return -std::log(softmax(scores)[target]);
}

double lm_loss_smoothed(const Matrix& logits, const std::vector<int>& targets, double eps,
                        int pad_id) {
  Graph g(false);
  return g.lm_ce_smoothed(g.leaf(Tensor::from_matrix(logits)), targets, eps, pad_id)->value[0];
}

Node* ranking_loss_node(Graph& g, const CompressorModel& model,
                        const std::string& instruction,
                        const std::vector<std::string>& candidates, int target) {
  if (candidates.size() < 2)
    throw std::invalid_argument("ranking_loss_node: need at least 2 candidates");
  const TokenSequence instr = tokenize(instruction);
  std::vector<Node*> scores;
  scores.reserve(candidates.size());
  for (const std::string& doc : candidates)
    scores.push_back(model.rank_score_node(g, instr, model.encode_nodes(g, tokenize(doc))));
  return g.softmax_ce(g.stack_scalars(scores), target);
}

namespace {

// Decoder input and shifted targets for teacher forcing; instruction
// positions are PAD-masked so the mean covers response tokens plus EOS.
std::pair<TokenSequence, std::vector<int>> lm_teacher_forcing(const TokenSequence& instr,
                                                              const TokenSequence& ref) {
  TokenSequence input;
  input.push_back(kBosId);
  input.insert(input.end(), instr.begin(), instr.end());
  input.insert(input.end(), ref.begin(), ref.end());
  std::vector<int> targets(input.size());
  for (size_t i = 0; i + 1 < input.size(); ++i) targets[i] = input[i + 1];
  targets.back() = kEosId;
  for (size_t i = 0; i < instr.size(); ++i) targets[i] = kPadId;
  return {std::move(input), std::move(targets)};
}

}  // namespace

Node* lm_loss_node(Graph& g, const CompressorModel& model, Node* enc_states,
                   const std::string& instruction, const std::string& reference,
                   double eps) {
  auto [input, targets] = lm_teacher_forcing(tokenize(instruction), tokenize(reference));
  Node* logits =
      model.decoder_logits_node(g, input, enc_states, DecoderMode::kGeneration);
  return g.lm_ce_smoothed(logits, targets, eps);
}

AdamOptimizer::AdamOptimizer(std::deque<Parameter>& params, double lr, double beta1,
                             double beta2, double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Parameter& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void AdamOptimizer::step(int accumulated, double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double lr = lr_ * lr_scale;
  size_t i = 0;
  for (Parameter& p : *params_) {
    auto g = (p.grad.flat() / static_cast<double>(accumulated)).eval();
    m_[i].flat() = beta1_ * m_[i].flat() + (1.0 - beta1_) * g;
    v_[i].flat() = beta2_ * v_[i].flat().array().matrix() +
                   (1.0 - beta2_) * g.array().square().matrix();
    p.value.flat().array() -=
        lr * (m_[i].flat().array() / bc1) / ((v_[i].flat().array() / bc2).sqrt() + eps_);
    p.zero_grad();
    ++i;
  }
}

namespace {

struct TrainUnit {
  const CandidateSet* cand = nullptr;
  const QAPair* qa = nullptr;
};

void accumulate_param_grads(Graph& g, std::unordered_map<const Parameter*, Parameter*>& remap) {
  for (const Parameter* cp : g.graph_params()) {
    Node* n = g.param_node(*cp);
    if (n->grad.numel() == 0) continue;
    remap.at(cp)->grad.flat() += n->grad.flat();
  }
}

}  // namespace

TrainStats train_joint(const Dataset& data, CompressorModel& model, const TrainConfig& cfg,
                       const ProgressHook& hook) {
  cfg.validate();
  if (data.qa.empty() && data.candidates.empty())
    throw std::invalid_argument("train_joint: empty dataset");

  std::unordered_map<int64_t, const QAPair*> qa_by_id;
  for (const QAPair& q : data.qa) qa_by_id.emplace(q.id, &q);
  std::vector<TrainUnit> units;
  std::unordered_map<int64_t, bool> paired;
  for (const CandidateSet& c : data.candidates) {
    TrainUnit u;
    u.cand = &c;
    auto it = qa_by_id.find(c.id);
    if (it != qa_by_id.end()) {
      u.qa = it->second;
      paired[c.id] = true;
    }
    units.push_back(u);
  }
  for (const QAPair& q : data.qa)
    if (!paired.count(q.id)) units.push_back({nullptr, &q});

  std::unordered_map<const Parameter*, Parameter*> self_map;
  for (Parameter& p : model.parameters()) self_map.emplace(&p, &p);

  AdamOptimizer adam(model.parameters(), cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  TrainStats stats;
  double batch_rank = 0.0, batch_lm = 0.0;
  int in_batch = 0;
  bool stop = false;

  std::vector<size_t> order(units.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    // Fisher-Yates with the raw engine keeps shuffles identical across
    // standard libraries
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng() % i]);

    for (size_t oi = 0; oi < order.size() && !stop; ++oi) {
      const TrainUnit& u = units[order[oi]];
      Graph g(/*grads_into_params=*/true);
      Node* total = nullptr;
      double rank_v = 0.0, lm_v = 0.0;

      if (u.cand) {
        const TokenSequence instr = tokenize(u.cand->instruction);
        std::vector<Node*> scores;
        Node* enc_pos = model.encode_nodes(g, tokenize(u.cand->candidates[0]));
        scores.push_back(model.rank_score_node(g, instr, enc_pos));
        for (size_t c = 1; c < u.cand->candidates.size(); ++c)
          scores.push_back(model.rank_score_node(
              g, instr, model.encode_nodes(g, tokenize(u.cand->candidates[c]))));
        Node* rank = g.softmax_ce(g.stack_scalars(scores), 0);
        rank_v = rank->value[0];
        total = g.scale(rank, cfg.w_rank);
        if (u.qa) {
          // reuse the positive document's encoder states for the LM pass
          Node* lm = lm_loss_node(g, model, enc_pos, u.qa->instruction, u.qa->reference,
                                  cfg.smoothing);
          lm_v = lm->value[0];
          total = g.add(total, g.scale(lm, cfg.w_lm));
        }
      } else {
        Node* enc = model.encode_nodes(g, tokenize(u.qa->document));
        Node* lm =
            lm_loss_node(g, model, enc, u.qa->instruction, u.qa->reference, cfg.smoothing);
        lm_v = lm->value[0];
        total = g.scale(lm, cfg.w_lm);
      }

      if (!std::isfinite(total->value[0]))
        throw DataError("train_joint: non-finite loss at step " +
                        std::to_string(stats.steps) + " (epoch " + std::to_string(epoch) +
                        ")");
      g.backward(total);
      accumulate_param_grads(g, self_map);
      batch_rank += rank_v;
      batch_lm += lm_v;
      ++in_batch;

      if (in_batch == cfg.batch || oi + 1 == order.size()) {
        const double lr_scale =
            cfg.warmup_steps > 0
                ? std::min(1.0, static_cast<double>(stats.steps + 1) / cfg.warmup_steps)
                : 1.0;
        adam.step(in_batch, lr_scale);
        stats.rank_losses.push_back(batch_rank / in_batch);
        stats.lm_losses.push_back(batch_lm / in_batch);
        batch_rank = batch_lm = 0.0;
        in_batch = 0;
        ++stats.steps;
        if (hook && !hook(stats.steps, model)) stop = true;
      }
    }
  }
  return stats;
}

double ranking_accuracy(const CompressorModel& model, const std::vector<CandidateSet>& sets,
                        size_t limit) {
  if (sets.empty()) throw std::invalid_argument("ranking_accuracy: empty evaluation set");
  const size_t n = limit == 0 ? sets.size() : std::min(limit, sets.size());
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i) {
    const TokenSequence instr = tokenize(sets[i].instruction);
    double best = -std::numeric_limits<double>::infinity();
    size_t best_idx = 0;
    for (size_t c = 0; c < sets[i].candidates.size(); ++c) {
      const double s = model.rank_score(instr, model.encode(tokenize(sets[i].candidates[c])));
      if (s > best) {
        best = s;
        best_idx = c;
      }
    }
    if (best_idx == 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace ctxc
