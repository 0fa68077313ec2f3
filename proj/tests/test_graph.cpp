#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ganinc/graph.hpp"
#include "ganinc/params.hpp"
#include "ganinc/rng.hpp"

using namespace ganinc;

namespace {

// Small two-layer perceptron used across the gradient tests:
//   y = w2 * relu(w1 * x + b1) + b2, loss = sum(y * y)
template <class S>
double mlp_loss(Graph<S>& g, const ParameterSet<S>& params, const BasicTensor<S>& input,
                NamedTensors<S>* grads) {
  std::vector<std::pair<std::string, Var>> vars;
  for (const auto& e : params.entries()) vars.emplace_back(e.name, g.leaf(e.value));
  auto at = [&](const std::string& n) {
    for (auto& [name, v] : vars)
      if (name == n) return v;
    throw usage_error("missing " + n);
  };
  Var x = g.constant(input);
  Var h = g.relu(g.affine_rows(x, at("w1"), at("b1")));
  Var y = g.affine_rows(h, at("w2"), at("b2"));
  Var loss = g.sum_all(g.mul(y, y));
  if (grads) {
    g.backward(loss);
    for (auto& [name, v] : vars) grads->add(name, g.grad(v));
  }
  return static_cast<double>(g.value(loss).data[0]);
}

template <class S>
ParameterSet<S> mlp_params(Rng& rng, int in = 3, int hidden = 4, int out = 2) {
  ParameterSet<S> p;
  auto uniform = [&](std::vector<int64_t> shape) {
    BasicTensor<S> t(shape);
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-0.8, 0.8));
    return t;
  };
  p.add("w1", uniform({hidden, in}));
  p.add("b1", uniform({hidden}));
  p.add("w2", uniform({out, hidden}));
  p.add("b2", uniform({out}));
  return p;
}

}  // namespace

TEST_CASE("identity record returns the input") {
  Graph<float> g;
  Var v = g.leaf(TensorValue({3}, {1.f, 2.f, 3.f}));
  CHECK(g.value(v).data == std::vector<float>{1.f, 2.f, 3.f});
}

TEST_CASE("affine map with zero weights yields the bias") {
  Graph<float> g;
  Var x = g.constant(TensorValue({2, 3}, {1.f, -2.f, 0.5f, 3.f, 4.f, -1.f}));
  Var w = g.leaf(TensorValue({2, 3}));
  Var b = g.leaf(TensorValue({2}, {0.25f, -1.5f}));
  const auto& out = g.value(g.affine_rows(x, w, b));
  for (int64_t i = 0; i < 2; ++i) {
    CHECK(out.at2(i, 0) == 0.25f);
    CHECK(out.at2(i, 1) == -1.5f);
  }
}

TEST_CASE("two-layer forward matches a straight-line replay") {
  Rng rng(0);
  auto params = mlp_params<float>(rng);
  TensorValue input({2, 3}, {0.3f, -0.7f, 1.1f, -0.2f, 0.8f, 0.05f});
  Graph<float> g;
  double loss = mlp_loss<float>(g, params, input, nullptr);

  // Independent replay with plain loops.
  const auto& w1 = params.at("w1");
  const auto& b1 = params.at("b1");
  const auto& w2 = params.at("w2");
  const auto& b2 = params.at("b2");
  double expected = 0;
  for (int n = 0; n < 2; ++n) {
    double h[4];
    for (int j = 0; j < 4; ++j) {
      double acc = b1[j];
      for (int k = 0; k < 3; ++k) acc += double(input.at2(n, k)) * double(w1.at2(j, k));
      h[j] = acc > 0 ? acc : 0;
    }
    for (int j = 0; j < 2; ++j) {
      double acc = b2[j];
      for (int k = 0; k < 4; ++k) acc += h[k] * double(w2.at2(j, k));
      expected += acc * acc;
    }
  }
  CHECK(loss == Catch::Approx(expected).epsilon(1e-5));
}

TEST_CASE("quadratic loss gradient") {
  Graph<float> g;
  Var w = g.leaf(TensorValue::scalar(3.f));
  Var loss = g.mul(w, w);
  g.backward(loss);
  CHECK(g.grad(w).data[0] == Catch::Approx(6.f));
}

TEST_CASE("sum-of-parameters gradient is all ones") {
  Graph<float> g;
  Var w = g.leaf(TensorValue({5}, {1.f, -2.f, 3.f, 0.f, 7.f}));
  g.backward(g.sum_all(w));
  for (float v : g.grad(w).data) CHECK(v == 1.f);
}

TEST_CASE("mlp gradients match central finite differences") {
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    Rng rng(seed);
    auto params = mlp_params<double>(rng);
    BasicTensor<double> input({4, 3});
    for (auto& v : input.data) v = rng.uniform(-1.0, 1.0);
    auto fn = [&](ParameterSet<double>& p, NamedTensors<double>* grads) {
      Graph<double> g;
      return mlp_loss(g, p, input, grads);
    };
    double err = finite_diff_check<double>(fn, params, 1e-3);
    INFO("seed " << seed);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("usage errors") {
  SECTION("backward on a non-recording graph") {
    Graph<float> g(false);
    Var v = g.leaf(TensorValue::scalar(1.f));
    CHECK_THROWS_AS(g.backward(v), usage_error);
  }
  SECTION("backward before any forward") {
    Graph<float> g;
    CHECK_THROWS_AS(g.backward(Var{}), usage_error);
  }
  SECTION("backward twice") {
    Graph<float> g;
    Var w = g.leaf(TensorValue::scalar(2.f));
    Var loss = g.mul(w, w);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), usage_error);
  }
  SECTION("gradient before backward") {
    Graph<float> g;
    Var w = g.leaf(TensorValue::scalar(2.f));
    CHECK_THROWS_AS(g.grad(w), usage_error);
  }
  SECTION("shape mismatch names the primitive") {
    Graph<float> g;
    Var a = g.leaf(TensorValue({2, 3}));
    Var b = g.leaf(TensorValue({2, 3}));
    CHECK_THROWS_WITH(g.matmul(a, b), Catch::Matchers::ContainsSubstring("matmul"));
  }
}

TEST_CASE("forward and backward are bitwise deterministic") {
  auto run = [] {
    Rng rng(42);
    auto params = mlp_params<float>(rng);
    TensorValue input({3, 3});
    for (auto& v : input.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    Graph<float> g;
    NamedTensors<float> grads;
    double loss = mlp_loss(g, params, input, &grads);
    std::vector<float> flat{static_cast<float>(loss)};
    for (auto& [n, t] : grads.items) flat.insert(flat.end(), t.data.begin(), t.data.end());
    return flat;
  };
  CHECK(run() == run());
}

TEST_CASE("conv2d and pooling gradients match finite differences") {
  Rng rng(7);
  ParameterSet<double> params;
  BasicTensor<double> w({2, 1, 3, 3}), b({2});
  for (auto& v : w.data) v = rng.uniform(-0.5, 0.5);
  for (auto& v : b.data) v = rng.uniform(-0.5, 0.5);
  params.add("w", w);
  params.add("b", b);
  BasicTensor<double> input({2, 1, 4, 4});
  for (auto& v : input.data) v = rng.uniform(-1.0, 1.0);

  auto fn = [&](ParameterSet<double>& p, NamedTensors<double>* grads) {
    Graph<double> g;
    Var wv = g.leaf(p.at("w"));
    Var bv = g.leaf(p.at("b"));
    Var x = g.constant(input);
    Var y = g.relu(g.conv2d(x, wv, bv, 2, 1));
    Var pooled = g.global_avg_pool(y);
    Var normed = g.l2_normalize_rows(pooled, 1e-8);
    Var loss = g.sum_all(g.mul(normed, normed));
    if (grads) {
      g.backward(loss);
      grads->add("w", g.grad(wv));
      grads->add("b", g.grad(bv));
    }
    return g.value(loss).data[0];
  };
  CHECK(finite_diff_check<double>(fn, params, 1e-4) < 1e-3);
}

TEST_CASE("log_softmax rows sum to one after exp") {
  Graph<float> g;
  Var x = g.leaf(TensorValue({2, 3}, {1.f, 2.f, 3.f, -5.f, 0.f, 5.f}));
  const auto& ls = g.value(g.log_softmax_rows(x));
  for (int64_t i = 0; i < 2; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < 3; ++j) sum += std::exp(double(ls.at2(i, j)));
    CHECK(sum == Catch::Approx(1.0).margin(1e-6));
  }
}
