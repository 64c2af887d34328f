#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "ctxc/autodiff.hpp"
#include "ctxc/tensor.hpp"
#include "test_support.hpp"

using namespace ctxc;
using namespace ctxc::testing;

TEST_CASE("softmax: uniform, saturation, direct value") {
  Vector zeros = Vector::Zero(4);
  Vector p = softmax(zeros);
  for (int i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-12));

  Vector big(2);
  big << 1000.0, 0.0;
  Vector q = softmax(big);  // max-subtraction keeps this finite
  CHECK(std::abs(q[0] - 1.0) < 1e-12);
  CHECK(std::abs(q[1] - 0.0) < 1e-12);

  Vector two(2);
  two << 2.0, 0.0;
  Vector r = softmax(two);  // e^2/(e^2+1)
  CHECK(std::abs(r[0] - 0.8808) < 1e-4);
  CHECK(std::abs(r[1] - 0.1192) < 1e-4);
}

TEST_CASE("softmax: errors and invariants") {
  CHECK_THROWS_AS(softmax(Vector()), std::invalid_argument);
  Vector bad(2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(softmax(bad), std::invalid_argument);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    Vector x(n);
    for (int i = 0; i < n; ++i) x[i] = uniform(rng, -30, 30);
    Vector p = softmax(x);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    CHECK(p.minCoeff() >= 0.0);
    const double c = uniform(rng, -100, 100);
    Vector shifted = softmax((x.array() + c).matrix().eval());
    for (int i = 0; i < n; ++i) CHECK(std::abs(p[i] - shifted[i]) <= 1e-12);
  }
}

TEST_CASE("fd_gradient: polynomial and constant") {
  Tensor p = Tensor::scalar(3.0);
  auto square = [&]() { return p[0] * p[0]; };
  Tensor g = fd_gradient<double>(square, p, 1e-5);
  CHECK(std::abs(g[0] - 6.0) <= 1e-6);
  CHECK(p[0] == 3.0);  // restored

  Tensor q({4});
  auto constant = [&]() { return 42.0; };
  Tensor gz = fd_gradient<double>(constant, q, 1e-5);
  for (Index i = 0; i < 4; ++i) CHECK(gz[i] == 0.0);

  CHECK_THROWS_AS(fd_gradient<double>(square, p, 0.0), std::invalid_argument);
  auto nan_f = [&]() { return std::numeric_limits<double>::quiet_NaN(); };
  CHECK_THROWS_AS(fd_gradient<double>(nan_f, p, 1e-5), std::runtime_error);
}

TEST_CASE("attention: singleton map, causal zeros, row sums") {
  std::mt19937_64 rng(11);
  Graph g;
  Node* q1 = g.leaf(random_tensor(rng, {1, 4}));
  Node* k1 = g.leaf(random_tensor(rng, {1, 4}));
  Node* map1 = g.attn_map(q1, k1, 2, false);
  CHECK(map1->value.shape() == std::vector<Index>{2, 1, 1});
  CHECK(map1->value[0] == 1.0);
  CHECK(map1->value[1] == 1.0);

  Node* q = g.leaf(random_tensor(rng, {3, 4}));
  Node* k = g.leaf(random_tensor(rng, {3, 4}));
  Node* causal = g.attn_map(q, k, 2, true);
  for (Index h = 0; h < 2; ++h) {
    for (Index i = 0; i < 3; ++i) {
      double row = 0.0;
      for (Index j = 0; j < 3; ++j) {
        if (j > i) CHECK(causal->value.slice(h)(i, j) == 0.0);  // exact
        row += causal->value.slice(h)(i, j);
      }
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("attention: 2x2 single head matches scalar expansion") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor qv = random_tensor(rng, {2, 2});
    Tensor kv = random_tensor(rng, {2, 2});
    Tensor vv = random_tensor(rng, {2, 2});
    Graph g;
    Node* map = g.attn_map(g.leaf(qv), g.leaf(kv), 1, false);
    Node* out = g.attn_apply(map, g.leaf(vv), 1);

    // independent scalar expansion of softmax(QK^T/sqrt(d)) V
    const double inv = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < 2; ++i) {
      double s0 = (qv.mat()(i, 0) * kv.mat()(0, 0) + qv.mat()(i, 1) * kv.mat()(0, 1)) * inv;
      double s1 = (qv.mat()(i, 0) * kv.mat()(1, 0) + qv.mat()(i, 1) * kv.mat()(1, 1)) * inv;
      const double m = std::max(s0, s1);
      const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
      const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
      for (int c = 0; c < 2; ++c) {
        const double expect = p0 * vv.mat()(0, c) + p1 * vv.mat()(1, c);
        CHECK(std::abs(out->value.mat()(i, c) - expect) <= 1e-12);
      }
      CHECK(std::abs(map->value.slice(0)(i, 0) - p0) <= 1e-12);
      CHECK(std::abs(map->value.slice(0)(i, 1) - p1) <= 1e-12);
    }
  }
}

TEST_CASE("attention: causal output is exactly independent of future keys/values") {
  std::mt19937_64 rng(31);
  Tensor qv = random_tensor(rng, {4, 6});
  Tensor kv = random_tensor(rng, {4, 6});
  Tensor vv = random_tensor(rng, {4, 6});
  auto run = [&](const Tensor& k, const Tensor& v) {
    Graph g;
    Node* out = g.attn_apply(g.attn_map(g.leaf(qv), g.leaf(k), 3, true), g.leaf(v), 3);
    return out->value;
  };
  const Tensor base = run(kv, vv);
  Tensor kv2 = kv, vv2 = vv;
  for (Index j = 2; j < 4; ++j) {
    kv2.mat().row(j).setConstant(uniform(rng, -5, 5));
    vv2.mat().row(j).setConstant(uniform(rng, -5, 5));
  }
  const Tensor perturbed = run(kv2, vv2);
  for (Index i = 0; i < 2; ++i)
    for (Index c = 0; c < 6; ++c)
      CHECK(base.mat()(i, c) == perturbed.mat()(i, c));  // bitwise
}

TEST_CASE("backward: sum and dot") {
  std::mt19937_64 rng(41);
  Graph g;
  Node* x = g.leaf(random_tensor(rng, {3, 5}), true);
  g.backward(g.sum(x));
  for (Index i = 0; i < x->value.numel(); ++i) CHECK(x->grad[i] == 1.0);

  Graph g2;
  Tensor xv = random_tensor(rng, {7});
  Tensor yv = random_tensor(rng, {7});
  Node* a = g2.leaf(xv, true);
  Node* b = g2.leaf(yv, true);
  g2.backward(g2.sum(g2.mul(a, b)));
  for (Index i = 0; i < 7; ++i) {
    CHECK(a->grad[i] == yv[i]);
    CHECK(b->grad[i] == xv[i]);
  }
}

TEST_CASE("backward: composite attention + projection matches finite differences") {
  std::mt19937_64 rng(47);
  Tensor qv = random_tensor(rng, {3, 4});
  Tensor kv = random_tensor(rng, {3, 4});
  Tensor vv = random_tensor(rng, {3, 4});
  Tensor wv = random_tensor(rng, {4, 2});

  auto forward = [&](Node** q_out, Node** k_out, Node** v_out, Node** w_out, Graph& g) {
    Node* q = g.leaf(qv, true);
    Node* k = g.leaf(kv, true);
    Node* v = g.leaf(vv, true);
    Node* w = g.leaf(wv, true);
    if (q_out) *q_out = q;
    if (k_out) *k_out = k;
    if (v_out) *v_out = v;
    if (w_out) *w_out = w;
    Node* att = g.attn_apply(g.attn_map(q, k, 2, true), v, 2);
    return g.sum(g.gelu(g.matmul(att, w)));
  };

  Graph g;
  Node *qn, *kn, *vn, *wn;
  Node* loss = forward(&qn, &kn, &vn, &wn, g);
  g.backward(loss);

  auto f = [&]() {
    Graph fg;
    return forward(nullptr, nullptr, nullptr, nullptr, fg)->value[0];
  };
  CHECK(max_rel_err(qn->grad, fd_gradient<double>(f, qv, 1e-5), 1e-3) <= 1e-6);
  CHECK(max_rel_err(kn->grad, fd_gradient<double>(f, kv, 1e-5), 1e-3) <= 1e-6);
  CHECK(max_rel_err(vn->grad, fd_gradient<double>(f, vv, 1e-5), 1e-3) <= 1e-6);
  CHECK(max_rel_err(wn->grad, fd_gradient<double>(f, wv, 1e-5), 1e-3) <= 1e-6);
}

TEST_CASE("backward: tapped attention map gradient matches probe finite differences") {
  std::mt19937_64 rng(53);
  Tensor qv = random_tensor(rng, {2, 4});
  Tensor kv = random_tensor(rng, {3, 4});
  Tensor vv = random_tensor(rng, {3, 4});
  Tensor probe({2, 2, 3});  // heads x Lq x Lk, zeros

  Node* map_node = nullptr;
  auto build = [&](Graph& g) {
    Node* map = g.attn_map(g.leaf(qv), g.leaf(kv), 2, false, /*tap=*/true, &probe);
    map_node = map;
    return g.sum(g.attn_apply(map, g.leaf(vv), 2));
  };
  Graph g;
  g.backward(build(g));
  Tensor analytic = map_node->grad;
  CHECK(analytic.shape() == probe.shape());

  auto f = [&]() {
    Graph fg;
    return build(fg)->value[0];
  };
  Tensor fd = fd_gradient<double>(f, probe, 1e-5);
  CHECK(max_rel_err(analytic, fd, 1e-3) <= 1e-6);
}

TEST_CASE("backward: every op agrees with finite differences across seeds") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor xv = random_tensor(rng, {3, 6});
    Tensor gv = random_tensor(rng, {1, 6}, 0.5, 1.5);
    Tensor bv = random_tensor(rng, {1, 6}, -0.2, 0.2);
    Tensor w1v = random_tensor(rng, {6, 4});
    Tensor b1v = random_tensor(rng, {1, 4});
    Tensor tablev = random_tensor(rng, {5, 6});
    const std::vector<int> ids = {1, 4, 0};
    const std::vector<int> targets = {2, 0, 3};  // middle one PAD-masked

    std::vector<Tensor*> params = {&xv, &gv, &bv, &w1v, &b1v, &tablev};
    std::vector<Node*> nodes(params.size());

    auto build = [&](Graph& g, bool record) {
      Node* x = g.leaf(xv, true);
      Node* gain = g.leaf(gv, true);
      Node* bias = g.leaf(bv, true);
      Node* w1 = g.leaf(w1v, true);
      Node* b1 = g.leaf(b1v, true);
      Node* table = g.leaf(tablev, true);
      if (record) nodes = {x, gain, bias, w1, b1, table};
      Node* e = g.embed(table, ids);
      Node* h = g.layer_norm(g.add(x, e), gain, bias);
      Node* q = g.matmul(h, g.leaf(Tensor::from_matrix(Matrix::Identity(6, 6))));
      Node* att = g.attn_apply(g.attn_map(q, h, 2, true), h, 2);
      Node* f1 = g.silu(g.gelu(g.add_rowwise(g.matmul(att, w1), b1)));
      Node* pooled = g.mean_rows(f1);
      Node* s0 = g.pick(pooled, 0, 0);
      Node* s1 = g.pick(pooled, 0, 1);
      Node* ce = g.softmax_ce(g.stack_scalars({s0, s1}), 0);
      Node* lm = g.lm_ce_smoothed(f1, targets, 0.1);
      return g.add(g.scale(ce, 0.7), g.scale(lm, 0.3));
    };

    Graph g;
    g.backward(build(g, true));
    auto f = [&]() {
      Graph fg;
      return build(fg, false)->value[0];
    };
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor fd = fd_gradient<double>(f, *params[p], 1e-5);
      CHECK(max_rel_err(nodes[p]->grad, fd, 1e-4) <= 1e-4);
    }
  }
}

TEST_CASE("backward: repeated calls are idempotent") {
  std::mt19937_64 rng(61);
  Graph g;
  Node* x = g.leaf(random_tensor(rng, {4, 4}), true);
  Node* loss = g.sum(g.gelu(g.matmul(x, x)));
  g.backward(loss);
  Tensor first = x->grad;
  g.backward(loss);
  for (Index i = 0; i < first.numel(); ++i) CHECK(first[i] == x->grad[i]);
}

TEST_CASE("backward: rejects non-scalar loss and cyclic graphs") {
  std::mt19937_64 rng(67);
  Graph g;
  Node* x = g.leaf(random_tensor(rng, {2, 2}), true);
  Node* y = g.matmul(x, x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);

  Graph g2;
  Node* a = g2.leaf(Tensor::scalar(1.0), true);
  Node* b = g2.scale(a, 2.0);
  Node* c = g2.scale(b, 1.5);
  b->parents.push_back(c);  // manufacture a cycle
  CHECK_THROWS_AS(g2.backward(c), std::runtime_error);
}

TEST_CASE("ops are deterministic: identical pipelines produce identical bits") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Graph g;
    Node* x = g.leaf(random_tensor(rng, {5, 8}), true);
    Node* w = g.leaf(random_tensor(rng, {8, 8}));
    Node* att = g.attn_apply(g.attn_map(g.matmul(x, w), x, 4, false), x, 4);
    Node* loss = g.sum(g.gelu(att));
    g.backward(loss);
    std::pair<Tensor, Tensor> out{loss->value, x->grad};
    return out;
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(std::memcmp(l1.data(), l2.data(), sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), static_cast<size_t>(g1.numel()) * 8) == 0);
}

TEST_CASE("graph ops reject non-finite values at the producing op") {
  Graph g;
  Tensor inf({2});
  inf[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(g.leaf(inf), std::runtime_error);
}
