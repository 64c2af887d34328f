#pragma once

#include <deque>
#include <unordered_map>
#include <vector>

#include "ctxc/tensor.hpp"

namespace ctxc {

// A named learnable tensor with a persistent gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(v), grad(v.shape()) {}
  void zero_grad() { grad.flat().setZero(); }
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated by Graph::backward for reachable nodes
  std::vector<Node*> parents;
  std::function<void(Node&)> backward_fn;  // accumulates node.grad into parents
  bool requires_grad = false;  // gradient must flow into this node
  bool tap = false;            // gradient retained for inspection after backward
  const char* op = "leaf";
  int visit = 0;  // backward traversal state
};

// A single-use computation graph. Nodes are arena-owned; ops are member
// functions that append nodes. Values are checked finite at construction so
// a NaN/Inf surfaces at the op that produced it.
class Graph {
 public:
  // grads_into_params=false builds graphs whose parameter leaves are treated
  // as constants (inference paths that only need tapped-node gradients).
  explicit Graph(bool grads_into_params = true)
      : grads_into_params_(grads_into_params) {}

  Node* leaf(Tensor value, bool requires_grad = false) {
    Node* n = alloc("leaf", std::move(value), {});
    n->requires_grad = requires_grad;
    return n;
  }

  // One node per Parameter per graph, shared across all uses.
  Node* param(const Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Node* n = leaf(p.value, grads_into_params_);
    n->op = "param";
    param_nodes_.emplace(&p, n);
    param_order_.push_back(&p);
    return n;
  }

  const std::vector<const Parameter*>& graph_params() const { return param_order_; }
  Node* param_node(const Parameter& p) const { return param_nodes_.at(&p); }

  // ---- elementwise / structural ops ----

  Node* add(Node* a, Node* b) {
    check_same_shape(a, b, "add");
    Tensor v = a->value;
    v.flat() += b->value.flat();
    Node* n = alloc("add", std::move(v), {a, b});
    n->backward_fn = [](Node& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->grad.flat() += n.grad.flat();
      if (n.parents[1]->requires_grad) n.parents[1]->grad.flat() += n.grad.flat();
    };
    return n;
  }

  Node* add_const(Node* a, const Tensor& c) {
    if (!a->value.same_shape(c)) throw std::invalid_argument("add_const: shape mismatch");
    Tensor v = a->value;
    v.flat() += c.flat();
    Node* n = alloc("add_const", std::move(v), {a});
    n->backward_fn = [](Node& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->grad.flat() += n.grad.flat();
    };
    return n;
  }

  Node* scale(Node* a, double s) {
    Tensor v = a->value;
    v.flat() *= s;
    Node* n = alloc("scale", std::move(v), {a});
    n->backward_fn = [s](Node& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->grad.flat() += s * n.grad.flat();
    };
    return n;
  }

  Node* mul(Node* a, Node* b) {
    check_same_shape(a, b, "mul");
    Tensor v = a->value;
    v.flat().array() *= b->value.flat().array();
    Node* n = alloc("mul", std::move(v), {a, b});
    n->backward_fn = [](Node& n) {
      Node* a = n.parents[0];
      Node* b = n.parents[1];
      if (a->requires_grad)
        a->grad.flat().array() += n.grad.flat().array() * b->value.flat().array();
      if (b->requires_grad)
        b->grad.flat().array() += n.grad.flat().array() * a->value.flat().array();
    };
    return n;
  }

  // Scalar node: sum of all entries.
  Node* sum(Node* a) {
    Node* n = alloc("sum", Tensor::scalar(a->value.flat().sum()), {a});
    n->backward_fn = [](Node& n) {
      if (n.parents[0]->requires_grad)
        n.parents[0]->grad.flat().array() += n.grad[0];
    };
    return n;
  }

  // ---- matrix ops (rank-2 operands) ----

  Node* matmul(Node* a, Node* b) {
    const auto& as = a->value.shape();
    const auto& bs = b->value.shape();
    if (a->value.rank() != 2 || b->value.rank() != 2 || as[1] != bs[0])
      throw std::invalid_argument("matmul: inner dimensions disagree " +
                                  a->value.shape_str() + " x " + b->value.shape_str());
    Tensor v = Tensor::raw({as[0], bs[1]});
    v.mat().noalias() = a->value.mat() * b->value.mat();
    Node* n = alloc("matmul", std::move(v), {a, b});
    n->backward_fn = [](Node& n) {
      Node* a = n.parents[0];
      Node* b = n.parents[1];
      if (a->requires_grad)
        a->grad.mat().noalias() += n.grad.mat() * b->value.mat().transpose();
      if (b->requires_grad)
        b->grad.mat().noalias() += a->value.mat().transpose() * n.grad.mat();
    };
    return n;
  }

  // y = x * w^T + bias with w stored {out, in} and bias {1, out}. Evaluated
  // with one GEMM; row values may depend on the total row count in the last
  // bits (kernel tails), so this is for inputs of fixed length (encoder).
  Node* linear(Node* x, Node* w, Node* bias) {
    check_linear_shapes(x, w, bias);
    Tensor v = Tensor::raw({x->value.dim(0), w->value.dim(0)});
    v.mat().noalias() = x->value.mat() * w->value.mat().transpose();
    v.mat().rowwise() += bias->value.mat().row(0);
    Node* n = alloc("linear", std::move(v), {x, w, bias});
    n->backward_fn = linear_backward;
    return n;
  }

  // Same contract as linear, evaluated per row with contiguous dot products:
  // row i's bits depend only on row i's input, so appending rows never
  // changes earlier rows (decoder paths, where the sequence grows).
  Node* linear_rows(Node* x, Node* w, Node* bias) {
    check_linear_shapes(x, w, bias);
    const Index rows = x->value.dim(0), out = w->value.dim(0);
    Tensor v = Tensor::raw({rows, out});
    for (Index i = 0; i < rows; ++i) {
      auto xr = x->value.mat().row(i);
      for (Index o = 0; o < out; ++o)
        v.mat()(i, o) = xr.dot(w->value.mat().row(o)) + bias->value.mat()(0, o);
    }
    Node* n = alloc("linear_rows", std::move(v), {x, w, bias});
    n->backward_fn = linear_backward;
    return n;
  }

  // bias has shape {1, n}; added to every row of x {m, n}.
  Node* add_rowwise(Node* x, Node* bias) {
    const auto& xs = x->value.shape();
    const auto& bs = bias->value.shape();
    if (x->value.rank() != 2 || bias->value.rank() != 2 || bs[0] != 1 || bs[1] != xs[1])
      throw std::invalid_argument("add_rowwise: shape mismatch");
    Tensor v = x->value;
    v.mat().rowwise() += bias->value.mat().row(0);
    Node* n = alloc("add_rowwise", std::move(v), {x, bias});
    n->backward_fn = [](Node& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->grad.flat() += n.grad.flat();
      if (n.parents[1]->requires_grad)
        n.parents[1]->grad.mat().row(0) += n.grad.mat().colwise().sum();
    };
    return n;
  }

  Node* gelu(Node* x) {
    Tensor v = x->value;
    v.flat().array() =
        0.5 * v.flat().array() * (1.0 + (v.flat().array() * M_SQRT1_2).erf());
    Node* n = alloc("gelu", std::move(v), {x});
    n->backward_fn = [](Node& n) {
      Node* x = n.parents[0];
      if (!x->requires_grad) return;
      const auto xin = x->value.flat().array();
      x->grad.flat().array() +=
          n.grad.flat().array() *
          (0.5 * (1.0 + (xin * M_SQRT1_2).erf()) +
           xin * (-0.5 * xin.square()).exp() * (1.0 / std::sqrt(2.0 * M_PI)));
    };
    return n;
  }

  Node* silu(Node* x) {
    Tensor v = x->value;
    if (v.rank() == 2) {
      // per-row exp keeps each row's packet phases independent of the row
      // count (exp rounding is SIMD-lane dependent)
      for (Index i = 0; i < v.dim(0); ++i) {
        auto row = v.mat().row(i).array();
        row = row / (1.0 + (-row).exp());
      }
    } else {
      v.flat().array() = v.flat().array() / (1.0 + (-v.flat().array()).exp());
    }
    Node* n = alloc("silu", std::move(v), {x});
    n->backward_fn = [](Node& n) {
      Node* x = n.parents[0];
      if (!x->requires_grad) return;
      const auto xin = x->value.flat().array();
      const auto sig = (1.0 + (-xin).exp()).inverse();
      x->grad.flat().array() += n.grad.flat().array() * sig * (1.0 + xin * (1.0 - sig));
    };
    return n;
  }

  // Rowwise layer norm with learned gain/bias of shape {1, n}.
  Node* layer_norm(Node* x, Node* gain, Node* bias, double eps = 1e-5) {
    const auto& xs = x->value.shape();
    if (x->value.rank() != 2) throw std::invalid_argument("layer_norm: rank-2 input required");
    if (gain->value.shape() != std::vector<Index>{1, xs[1]} ||
        bias->value.shape() != std::vector<Index>{1, xs[1]})
      throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
    Tensor v = Tensor::raw({xs[0], xs[1]});
    Tensor xhat = Tensor::raw({xs[0], xs[1]});
    Tensor inv_std = Tensor::raw({xs[0]});
    {
      auto xm = x->value.mat();
      const Vector mu = xm.rowwise().mean();
      Matrix centered = xm.colwise() - mu;
      inv_std.flat() =
          (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
      xhat.mat() = centered.array().colwise() * inv_std.flat().array();
      v.mat() = (xhat.mat().array().rowwise() * gain->value.mat().row(0).array())
                    .rowwise() +
                bias->value.mat().row(0).array();
    }
    Node* n = alloc("layer_norm", std::move(v), {x, gain, bias});
    n->backward_fn = [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
      Node* x = n.parents[0];
      Node* gain = n.parents[1];
      Node* bias = n.parents[2];
      if (gain->requires_grad)
        gain->grad.mat().row(0) += n.grad.mat().cwiseProduct(xhat.mat()).colwise().sum();
      if (bias->requires_grad) bias->grad.mat().row(0) += n.grad.mat().colwise().sum();
      if (!x->requires_grad) return;
      const Matrix dxhat =
          n.grad.mat().array().rowwise() * gain->value.mat().row(0).array();
      const Vector mean_dxhat = dxhat.rowwise().mean();
      const Vector mean_dxhat_xhat =
          dxhat.cwiseProduct(xhat.mat()).rowwise().mean();
      x->grad.mat().array() +=
          ((dxhat.colwise() - mean_dxhat).array() -
           xhat.mat().array().colwise() * mean_dxhat_xhat.array())
              .colwise() *
          inv_std.flat().array();
    };
    return n;
  }

  // Rows of `table` gathered by token id -> {len(ids), d}.
  Node* embed(Node* table, const std::vector<int>& ids) {
    if (table->value.rank() != 2) throw std::invalid_argument("embed: rank-2 table required");
    if (ids.empty()) throw std::invalid_argument("embed: empty id sequence");
    const Index v = table->value.dim(0), d = table->value.dim(1);
    Tensor out = Tensor::raw({static_cast<Index>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= v)
        throw std::invalid_argument("embed: token id out of range");
      out.mat().row(static_cast<Index>(i)) = table->value.mat().row(ids[i]);
    }
    Node* n = alloc("embed", std::move(out), {table});
    n->backward_fn = [ids](Node& n) {
      Node* table = n.parents[0];
      if (!table->requires_grad) return;
      for (size_t i = 0; i < ids.size(); ++i)
        table->grad.mat().row(ids[i]) += n.grad.mat().row(static_cast<Index>(i));
    };
    return n;
  }

  Node* mean_rows(Node* x) {
    if (x->value.rank() != 2) throw std::invalid_argument("mean_rows: rank-2 input required");
    const Index m = x->value.dim(0);
    Tensor v = Tensor::raw({1, x->value.dim(1)});
    v.mat().row(0) = x->value.mat().colwise().mean();
    Node* n = alloc("mean_rows", std::move(v), {x});
    n->backward_fn = [m](Node& n) {
      Node* x = n.parents[0];
      if (!x->requires_grad) return;
      x->grad.mat().rowwise() += (n.grad.mat().row(0) / static_cast<double>(m)).eval();
    };
    return n;
  }

  // Scalar node holding x[row, col].
  Node* pick(Node* x, Index row, Index col) {
    if (x->value.rank() != 2) throw std::invalid_argument("pick: rank-2 input required");
    if (row < 0 || row >= x->value.dim(0) || col < 0 || col >= x->value.dim(1))
      throw std::invalid_argument("pick: index out of range");
    Node* n = alloc("pick", Tensor::scalar(x->value.mat()(row, col)), {x});
    n->backward_fn = [row, col](Node& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->grad.mat()(row, col) += n.grad[0];
    };
    return n;
  }

  Node* stack_scalars(const std::vector<Node*>& xs) {
    if (xs.empty()) throw std::invalid_argument("stack_scalars: empty input");
    Tensor v({static_cast<Index>(xs.size())});
    std::vector<Node*> ps;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (xs[i]->value.numel() != 1)
        throw std::invalid_argument("stack_scalars: non-scalar element");
      v[static_cast<Index>(i)] = xs[i]->value[0];
      ps.push_back(xs[i]);
    }
    Node* n = alloc("stack_scalars", std::move(v), std::move(ps));
    n->backward_fn = [](Node& n) {
      for (size_t i = 0; i < n.parents.size(); ++i)
        if (n.parents[i]->requires_grad)
          n.parents[i]->grad[0] += n.grad[static_cast<Index>(i)];
    };
    return n;
  }

  // ---- attention ----

  // Softmaxed attention map for multi-head scaled dot product:
  // {heads, Lq, Lk} with rows summing to 1. Causal masking zeroes entries
  // j > i exactly (masked scores are never even computed, so masked keys
  // cannot influence the map's value or gradient). row_stable evaluates
  // scores and softmax strictly per query row, making earlier rows
  // bit-identical when rows are appended (decoder paths).
  Node* attn_map(Node* q, Node* k, int heads, bool causal, bool tap = false,
                 const Tensor* probe = nullptr, bool row_stable = false) {
    const auto& qs = q->value.shape();
    const auto& ks = k->value.shape();
    if (q->value.rank() != 2 || k->value.rank() != 2 || qs[1] != ks[1])
      throw std::invalid_argument("attn_map: dimension mismatch");
    if (qs[1] % heads != 0)
      throw std::invalid_argument("attn_map: model dim not divisible by heads");
    if (causal && qs[0] != ks[0])
      throw std::invalid_argument("attn_map: causal mask requires square attention");
    const Index lq = qs[0], lk = ks[0], dk = qs[1] / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    Tensor v = Tensor::raw({heads, lq, lk});
    for (Index h = 0; h < heads; ++h) {
      auto dst = v.slice(h);
      auto qb = q->value.mat().middleCols(h * dk, dk);
      auto kb = k->value.mat().middleCols(h * dk, dk);
      auto softmax_row = [](Eigen::Map<Matrix>::RowXpr::SegmentReturnType row) {
        const double m = row.maxCoeff();
        row.array() = (row.array() - m).exp();
        row /= row.sum();
      };
      if (causal || row_stable) {
        for (Index i = 0; i < lq; ++i) {
          const Index visible = causal ? i + 1 : lk;
          for (Index j = 0; j < visible; ++j)
            dst(i, j) = qb.row(i).dot(kb.row(j)) * inv_sqrt;
          if (visible < lk) dst.row(i).tail(lk - visible).setZero();
          softmax_row(dst.row(i).head(visible));
        }
      } else {
        dst.noalias() = qb * kb.transpose() * inv_sqrt;
        const Vector rowmax = dst.rowwise().maxCoeff();
        dst.colwise() -= rowmax;
        dst.array() = dst.array().exp();
        const Vector rowsum = dst.rowwise().sum();
        dst.array().colwise() /= rowsum.array();
      }
    }
    Node* n = alloc("attn_map", std::move(v), {q, k});
    n->backward_fn = [heads, dk, inv_sqrt](Node& n) {
      Node* q = n.parents[0];
      Node* k = n.parents[1];
      if (!q->requires_grad && !k->requires_grad) return;
      for (Index h = 0; h < heads; ++h) {
        auto p = n.value.slice(h);
        auto dp = n.grad.slice(h);
        // softmax backward per row: ds = p .* (dp - sum(dp .* p))
        Matrix ds(p.rows(), p.cols());
        for (Index i = 0; i < p.rows(); ++i) {
          const double dot = dp.row(i).dot(p.row(i));
          ds.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
        }
        ds *= inv_sqrt;
        if (q->requires_grad)
          q->grad.mat().middleCols(h * dk, dk).noalias() +=
              ds * k->value.mat().middleCols(h * dk, dk);
        if (k->requires_grad)
          k->grad.mat().middleCols(h * dk, dk).noalias() +=
              ds.transpose() * q->value.mat().middleCols(h * dk, dk);
      }
    };
    // A probe rides on top of the softmax output as a separate node so the
    // softmax backward always sees its own pristine probabilities. Gradient
    // checks perturb probe entries to finite-difference the map.
    Node* out = n;
    if (probe) {
      if (!n->value.same_shape(*probe))
        throw std::invalid_argument("attn_map: probe shape mismatch");
      out = add_const(n, *probe);
      out->op = "attn_map_probe";
    }
    out->tap = tap;
    if (tap) out->requires_grad = true;
    return out;
  }

  // Applies a {heads, Lq, Lk} map to v {Lk, d}: per-head M_h * V_h,
  // concatenated over head column blocks -> {Lq, d}. row_stable accumulates
  // each output row on its own (fixed key order, zero weights skipped), so
  // appended rows never perturb earlier ones.
  Node* attn_apply(Node* map, Node* v, int heads, bool row_stable = false) {
    const auto& ms = map->value.shape();
    const auto& vs = v->value.shape();
    if (map->value.rank() != 3 || v->value.rank() != 2 || ms[0] != heads ||
        ms[2] != vs[0] || vs[1] % heads != 0)
      throw std::invalid_argument("attn_apply: dimension mismatch");
    const Index lq = ms[1], lk = ms[2], dk = vs[1] / heads;
    Tensor out = Tensor::raw({lq, vs[1]});
    for (Index h = 0; h < heads; ++h) {
      auto vb = v->value.mat().middleCols(h * dk, dk);
      if (row_stable) {
        auto m = map->value.slice(h);
        for (Index i = 0; i < lq; ++i) {
          auto orow = out.mat().row(i).segment(h * dk, dk);
          orow.setZero();
          for (Index j = 0; j < lk; ++j)
            if (m(i, j) != 0.0) orow += m(i, j) * vb.row(j);
        }
      } else {
        out.mat().middleCols(h * dk, dk).noalias() = map->value.slice(h) * vb;
      }
    }
    Node* n = alloc("attn_apply", std::move(out), {map, v});
    n->backward_fn = [heads, dk](Node& n) {
      Node* map = n.parents[0];
      Node* v = n.parents[1];
      for (Index h = 0; h < heads; ++h) {
        auto dout = n.grad.mat().middleCols(h * dk, dk);
        if (map->requires_grad)
          map->grad.slice(h).noalias() +=
              dout * v->value.mat().middleCols(h * dk, dk).transpose();
        if (v->requires_grad)
          v->grad.mat().middleCols(h * dk, dk).noalias() +=
              map->value.slice(h).transpose() * dout;
      }
    };
    return n;
  }

  // ---- losses ----

  // -log softmax(scores)[target], scores rank-1.
  Node* softmax_ce(Node* scores, int target) {
    if (scores->value.rank() != 1) throw std::invalid_argument("softmax_ce: vector input required");
    const Index c = scores->value.numel();
    if (target < 0 || target >= c) throw std::invalid_argument("softmax_ce: target out of range");
    Vector p = softmax(scores->value.flat());
    const double loss = -std::log(p[target]);
    Node* n = alloc("softmax_ce", Tensor::scalar(loss), {scores});
    n->backward_fn = [p = std::move(p), target](Node& n) {
      Node* s = n.parents[0];
      if (!s->requires_grad) return;
      s->grad.flat() += n.grad[0] * p;
      s->grad[target] -= n.grad[0];
    };
    return n;
  }

  // Label-smoothed cross entropy over logits {T, V}, mean over non-PAD
  // target positions. targets[t] == pad_id marks an excluded position.
  Node* lm_ce_smoothed(Node* logits, const std::vector<int>& targets, double eps,
                       int pad_id = 0) {
    if (logits->value.rank() != 2) throw std::invalid_argument("lm_ce_smoothed: rank-2 logits");
    const Index t_count = logits->value.dim(0), vocab = logits->value.dim(1);
    if (static_cast<Index>(targets.size()) != t_count)
      throw std::invalid_argument("lm_ce_smoothed: target length mismatch");
    if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("lm_ce_smoothed: eps outside [0,1)");
    Index valid = 0;
    for (int y : targets)
      if (y != pad_id) ++valid;
    if (valid == 0) throw std::invalid_argument("lm_ce_smoothed: no non-PAD targets");
    Matrix probs = Matrix::Zero(t_count, vocab);
    double loss = 0.0;
    for (Index t = 0; t < t_count; ++t) {
      if (targets[static_cast<size_t>(t)] == pad_id) continue;
      probs.row(t) = softmax(logits->value.mat().row(t).transpose()).transpose();
      const int y = targets[static_cast<size_t>(t)];
      if (y < 0 || y >= vocab) throw std::invalid_argument("lm_ce_smoothed: target out of range");
      const double nll = -std::log(probs(t, y));
      double uniform_ce = 0.0;
      if (eps > 0.0) uniform_ce = -probs.row(t).array().log().mean();
      loss += (1.0 - eps) * nll + eps * uniform_ce;
    }
    loss /= static_cast<double>(valid);
    Node* n = alloc("lm_ce_smoothed", Tensor::scalar(loss), {logits});
    n->backward_fn = [probs = std::move(probs), targets, eps, pad_id, valid,
                      vocab](Node& n) {
      Node* logits = n.parents[0];
      if (!logits->requires_grad) return;
      const double w = n.grad[0] / static_cast<double>(valid);
      for (Index t = 0; t < logits->value.dim(0); ++t) {
        const int y = targets[static_cast<size_t>(t)];
        if (y == pad_id) continue;
        logits->grad.mat().row(t) += w * probs.row(t);
        logits->grad.mat()(t, y) -= w * (1.0 - eps);
        if (eps > 0.0)
          logits->grad.mat().row(t).array() -= w * eps / static_cast<double>(vocab);
      }
    };
    return n;
  }

  // ---- backward ----

  // Reverse-mode sweep from a scalar loss. Gradients of every reachable node
  // are reset first, so repeated calls recompute rather than accumulate.
  void backward(Node* loss) {
    if (loss->value.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar-valued");
    std::vector<Node*> order = topo_order(loss);
    for (Node* n : order) {
      n->grad = Tensor(n->value.shape());
      n->visit = 0;
    }
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

 private:
  void check_linear_shapes(Node* x, Node* w, Node* bias) {
    if (x->value.rank() != 2 || w->value.rank() != 2 || bias->value.rank() != 2 ||
        x->value.dim(1) != w->value.dim(1) || bias->value.dim(0) != 1 ||
        bias->value.dim(1) != w->value.dim(0))
      throw std::invalid_argument("linear: shape mismatch " + x->value.shape_str() +
                                  " x " + w->value.shape_str() + " + " +
                                  bias->value.shape_str());
  }

  // y = x w^T + b: dx = g w, dw = g^T x, db = colsum(g)
  static void linear_backward(Node& n) {
    Node* x = n.parents[0];
    Node* w = n.parents[1];
    Node* bias = n.parents[2];
    if (x->requires_grad) x->grad.mat().noalias() += n.grad.mat() * w->value.mat();
    if (w->requires_grad)
      w->grad.mat().noalias() += n.grad.mat().transpose() * x->value.mat();
    if (bias->requires_grad) bias->grad.mat().row(0) += n.grad.mat().colwise().sum();
  }

  Node* alloc(const char* op, Tensor value, std::vector<Node*> parents) {
    if (!value.all_finite())
      throw std::runtime_error(std::string("non-finite values produced by op '") + op + "'");
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.op = op;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (Node* p : n.parents) n.requires_grad = n.requires_grad || p->requires_grad;
    return &n;
  }

  void check_same_shape(Node* a, Node* b, const char* op) {
    if (!a->value.same_shape(b->value))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  a->value.shape_str() + " vs " + b->value.shape_str());
  }

  // Iterative DFS; detects cycles via in-progress marks.
  std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
    root->visit = 1;
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++];
        if (p->visit == 1) throw std::runtime_error("backward: cycle detected in graph");
        if (p->visit == 0) {
          p->visit = 1;
          stack.push_back({p, 0});
        }
      } else {
        n->visit = 2;
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  static double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
  static double gelu_bwd(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
  }

  bool grads_into_params_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, Node*> param_nodes_;
  std::vector<const Parameter*> param_order_;
};

}  // namespace ctxc
