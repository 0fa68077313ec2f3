#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ganinc/params.hpp"

using namespace ganinc;

TEST_CASE("zero gradients never change parameters") {
  ParameterSet<float> p;
  p.add("w", TensorValue({3}, {1.f, -2.f, 0.5f}));
  NamedTensors<float> grads;
  grads.add("w", TensorValue({3}));
  for (int i = 0; i < 5; ++i) adam_step(p, grads, AdamConfig{});
  CHECK(p.at("w").data == std::vector<float>{1.f, -2.f, 0.5f});
  CHECK(p.step() == 5);
}

TEST_CASE("moments decay under zero gradient") {
  ParameterSet<float> p;
  p.add("w", TensorValue::scalar(1.f));
  auto* e = p.find("w");
  e->m.data[0] = 1.f;
  e->v.data[0] = 1.f;
  NamedTensors<float> grads;
  grads.add("w", TensorValue::scalar(0.f));
  adam_step(p, grads, AdamConfig{});
  CHECK(e->m.data[0] == Catch::Approx(0.9f));
  CHECK(e->v.data[0] == Catch::Approx(0.999f));
}

TEST_CASE("first step magnitude is about lr") {
  for (float g0 : {0.37f, -2.5f, 11.f}) {
    ParameterSet<float> p;
    p.add("w", TensorValue::scalar(0.f));
    NamedTensors<float> grads;
    grads.add("w", TensorValue::scalar(g0));
    AdamConfig cfg;
    adam_step(p, grads, cfg);
    double delta = std::fabs(double(p.at("w").data[0]));
    CHECK(delta == Catch::Approx(cfg.lr).epsilon(1e-4));
    CHECK(std::signbit(p.at("w").data[0]) == !std::signbit(g0));
  }
}

TEST_CASE("two identical steps match a scalar replay") {
  const double g0 = 0.37, lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  // straight-line scalar Adam
  double m = 0, v = 0, w = 0.25;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g0;
    v = b2 * v + (1 - b2) * g0 * g0;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
  }

  ParameterSet<float> p;
  p.add("w", TensorValue::scalar(0.25f));
  NamedTensors<float> grads;
  grads.add("w", TensorValue::scalar(static_cast<float>(g0)));
  adam_step(p, grads, AdamConfig{});
  adam_step(p, grads, AdamConfig{});
  CHECK(double(p.at("w").data[0]) == Catch::Approx(w).epsilon(1e-5));
}

TEST_CASE("non-finite gradient aborts and names the parameter") {
  ParameterSet<float> p;
  p.add("conv0.weight", TensorValue::scalar(1.f));
  NamedTensors<float> grads;
  grads.add("conv0.weight", TensorValue::scalar(std::nanf("")));
  CHECK_THROWS_WITH(adam_step(p, grads, AdamConfig{}),
                    Catch::Matchers::ContainsSubstring("conv0.weight"));
}

TEST_CASE("gradient shape mismatch is a usage error") {
  ParameterSet<float> p;
  p.add("w", TensorValue({2}));
  NamedTensors<float> grads;
  grads.add("w", TensorValue({3}));
  CHECK_THROWS_AS(adam_step(p, grads, AdamConfig{}), usage_error);
}

TEST_CASE("global norm clip") {
  NamedTensors<float> grads;
  grads.add("a", TensorValue({2}, {3.f, 4.f}));   // norm 5
  grads.add("b", TensorValue({1}, {12.f}));       // total norm 13
  double norm = clip_global_norm(grads, 10.0);
  CHECK(norm == Catch::Approx(13.0));
  double after = 0;
  for (auto& [n, t] : grads.items)
    for (float v : t.data) after += double(v) * double(v);
  CHECK(std::sqrt(after) == Catch::Approx(10.0).epsilon(1e-5));

  NamedTensors<float> small;
  small.add("a", TensorValue({2}, {0.3f, 0.4f}));
  clip_global_norm(small, 10.0);
  CHECK(small.items[0].second.data == std::vector<float>{0.3f, 0.4f});
}

TEST_CASE("finite_diff_check on a quadratic") {
  ParameterSet<double> p;
  p.add("w", BasicTensor<double>::scalar(3.0));
  auto fn = [](ParameterSet<double>& params, NamedTensors<double>* grads) {
    double w = params.at("w").data[0];
    if (grads) grads->add("w", BasicTensor<double>::scalar(2 * w));
    return w * w;
  };
  CHECK(finite_diff_check<double>(fn, p, 1e-3) < 1e-6);

  // negative control: a corrupted gradient rule must be flagged
  auto bad = [](ParameterSet<double>& params, NamedTensors<double>* grads) {
    double w = params.at("w").data[0];
    if (grads) grads->add("w", BasicTensor<double>::scalar(3 * w));
    return w * w;
  };
  CHECK(finite_diff_check<double>(bad, p, 1e-3) > 1e-2);
}

TEST_CASE("finite_diff_check rejects a non-positive step") {
  ParameterSet<double> p;
  p.add("w", BasicTensor<double>::scalar(1.0));
  auto fn = [](ParameterSet<double>&, NamedTensors<double>*) { return 0.0; };
  CHECK_THROWS_AS(finite_diff_check<double>(fn, p, 0.0), usage_error);
}
