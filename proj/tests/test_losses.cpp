#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ganinc/losses.hpp"
#include "ganinc/params.hpp"
#include "ganinc/rng.hpp"

using namespace ganinc;

namespace {

ClassRegistry two_arch_registry() {
  ClassRegistry r;
  r.add_architecture(0);  // classes 0 (G), 1 (R)
  r.add_architecture(1);  // classes 2 (G), 3 (R)
  return r;
}

std::vector<int> all_rows(int n) {
  std::vector<int> rows(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) rows[static_cast<size_t>(i)] = i;
  return rows;
}

}  // namespace

TEST_CASE("tempered softmax") {
  SECTION("uniform logits are symmetric for any T") {
    for (double t : {1.0, 2.0, 7.5}) {
      auto p = tempered_softmax({0, 0, 0}, t);
      for (double v : p) CHECK(v == Catch::Approx(1.0 / 3));
    }
  }
  SECTION("frozen value at T=2") {
    auto p = tempered_softmax({2, 0}, 2.0);
    CHECK(p[0] == Catch::Approx(0.7311).margin(1e-4));
    CHECK(p[1] == Catch::Approx(0.2689).margin(1e-4));
  }
  SECTION("shift invariance") {
    auto a = tempered_softmax({0.3, -1.2, 2.0}, 1.5);
    auto b = tempered_softmax({0.3 + 17, -1.2 + 17, 2.0 + 17}, 1.5);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == Catch::Approx(b[i]).margin(1e-9));
  }
  SECTION("entries sum to one") {
    Rng rng(3);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> logits(5);
      for (auto& v : logits) v = rng.uniform(-8, 8);
      auto p = tempered_softmax(logits, 1.0 + rng.uniform() * 4);
      double sum = 0;
      for (double v : p) sum += v;
      CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
  }
  SECTION("T below one is rejected") {
    CHECK_THROWS_AS(tempered_softmax({1, 2}, 0.5), usage_error);
  }
}

TEST_CASE("classification loss") {
  BatchLabels labels;
  labels.class_ids = {0};
  labels.origins = {Origin::gan};
  SECTION("perfect prediction approaches zero") {
    TensorValue g({1, 2}, {1.f - 1e-6f, 1e-6f});
    CHECK(classification_loss(g, labels) < 1e-4);
  }
  SECTION("uninformed prediction is 2 ln 2") {
    TensorValue g({1, 2}, {0.5f, 0.5f});
    CHECK(classification_loss(g, labels) == Catch::Approx(2 * std::log(2.0)).margin(1e-5));
  }
  SECTION("duplicating the batch leaves the mean unchanged") {
    TensorValue g1({2, 3}, {0.7f, 0.2f, 0.4f, 0.1f, 0.6f, 0.3f});
    BatchLabels l1;
    l1.class_ids = {0, 1};
    TensorValue g2({4, 3});
    for (int rep = 0; rep < 2; ++rep)
      for (int64_t i = 0; i < g1.numel(); ++i) g2[rep * g1.numel() + i] = g1[i];
    BatchLabels l2;
    l2.class_ids = {0, 1, 0, 1};
    CHECK(classification_loss(g2, l2) == Catch::Approx(classification_loss(g1, l1)).margin(1e-6));
  }
  SECTION("out-of-range label is a usage error") {
    TensorValue g({1, 2}, {0.5f, 0.5f});
    BatchLabels bad;
    bad.class_ids = {2};
    CHECK_THROWS_AS(classification_loss(g, bad), usage_error);
  }
  SECTION("nonnegative under saturation") {
    TensorValue g({1, 2}, {0.f, 1.f});
    double loss = classification_loss(g, labels);
    CHECK(loss >= 0);
    CHECK(std::isfinite(loss));
  }
}

TEST_CASE("distillation loss") {
  SECTION("identical logits give zero for any T") {
    Rng rng(11);
    for (double t : {1.0, 2.0, 3.0}) {
      TensorValue x({3, 4});
      for (auto& v : x.data) v = static_cast<float>(rng.uniform(-5, 5));
      CHECK(distillation_loss(x, x, t) == Catch::Approx(0.0).margin(1e-7));
    }
  }
  SECTION("frozen scalar value at T=1") {
    TensorValue nl({1, 2}, {1.f, 0.f});
    TensorValue ol({1, 2}, {0.f, 1.f});
    CHECK(distillation_loss(nl, ol, 1.0) == Catch::Approx(0.4621).margin(1e-4));
  }
  SECTION("T=2 matches a straight-line scalar oracle") {
    TensorValue nl({1, 2}, {1.f, 0.f});
    TensorValue ol({1, 2}, {0.f, 1.f});
    // p = softmax((0.5, 0)), q = softmax((0, 0.5)); loss = T^2 * KL(p||q)
    double p0 = std::exp(0.5) / (std::exp(0.5) + 1.0);
    double q0 = 1.0 / (1.0 + std::exp(0.5));
    double kl = p0 * std::log(p0 / q0) + (1 - p0) * std::log((1 - p0) / (1 - q0));
    CHECK(distillation_loss(nl, ol, 2.0) == Catch::Approx(4 * kl).margin(1e-5));
  }
  SECTION("shape mismatch is a usage error") {
    TensorValue a({1, 2}), b({1, 3});
    CHECK_THROWS_AS(distillation_loss(a, b, 2.0), usage_error);
  }
  SECTION("nonnegative on random pairs") {
    Rng rng(5);
    for (int k = 0; k < 30; ++k) {
      TensorValue a({2, 5}), b({2, 5});
      for (auto& v : a.data) v = static_cast<float>(rng.uniform(-6, 6));
      for (auto& v : b.data) v = static_cast<float>(rng.uniform(-6, 6));
      CHECK(distillation_loss(a, b, 1.0 + rng.uniform() * 2) >= -1e-7);
    }
  }
}

TEST_CASE("icarl composite is a convex combination") {
  CHECK(icarl_loss(1.0, 0.5, 0.0) == Catch::Approx(1.0));
  CHECK(icarl_loss(1.0, 0.5, 0.5) == Catch::Approx(0.75));
  CHECK(icarl_loss(1.0, 0.5, 1.0) == Catch::Approx(0.5));
  CHECK_THROWS_AS(icarl_loss(1, 1, 1.5), usage_error);
}

TEST_CASE("mt-mc binary loss") {
  SECTION("confident correct detector approaches zero") {
    TensorValue d({1}, {1.f - 1e-6f});
    BatchLabels l;
    l.origins = {Origin::gan};
    CHECK(binary_loss_mtmc(d, l) < 1e-4);
  }
  SECTION("uninformed detector is ln 2") {
    TensorValue d({1}, {0.5f});
    BatchLabels l;
    l.origins = {Origin::real};
    CHECK(binary_loss_mtmc(d, l) == Catch::Approx(std::log(2.0)).margin(1e-5));
  }
  SECTION("confident wrong detector is large but finite") {
    TensorValue d({1}, {1.f});
    BatchLabels l;
    l.origins = {Origin::real};
    double loss = binary_loss_mtmc(d, l);
    CHECK(loss > 10.0);
    CHECK(std::isfinite(loss));
  }
}

TEST_CASE("mt-mc aggregate is linear in lambda") {
  CHECK(mtmc_loss(1.0, 0.5, 0.0) == Catch::Approx(1.0));
  CHECK(mtmc_loss(1.0, 0.5, 1.0) == Catch::Approx(1.5));
  CHECK(mtmc_loss(1.0, 0.5, 2.0) - mtmc_loss(1.0, 0.5, 1.0) == Catch::Approx(0.5));
}

TEST_CASE("mt-sc group binary loss") {
  ClassRegistry reg = two_arch_registry();
  SECTION("all GAN scores high for a GAN sample approaches zero") {
    TensorValue g({1, 4}, {1.f - 1e-6f, 0.1f, 1.f - 1e-6f, 0.9f});
    BatchLabels l;
    l.origins = {Origin::gan};
    CHECK(group_binary_loss_mtsc(g, l, reg) < 1e-4);
  }
  SECTION("two GAN classes at one half give 2 ln 2") {
    TensorValue g({1, 4}, {0.5f, 0.9f, 0.5f, 0.9f});
    BatchLabels l;
    l.origins = {Origin::gan};
    CHECK(group_binary_loss_mtsc(g, l, reg) == Catch::Approx(2 * std::log(2.0)).margin(1e-5));
  }
  SECTION("real-class scores do not affect a GAN-labeled sample") {
    TensorValue a({1, 4}, {0.6f, 0.9f, 0.7f, 0.2f});
    TensorValue b({1, 4}, {0.6f, 0.01f, 0.7f, 0.99f});
    BatchLabels l;
    l.origins = {Origin::gan};
    CHECK(group_binary_loss_mtsc(a, l, reg) ==
          Catch::Approx(group_binary_loss_mtsc(b, l, reg)).margin(1e-7));
  }
  SECTION("an empty group is a usage error") {
    Graph<float> g(false);
    Var s = g.constant(TensorValue({1, 2}, {0.5f, 0.5f}));
    std::vector<Origin> origins{Origin::gan};
    CHECK_THROWS_AS(
        group_binary_loss_graph(g, s, origins, {}, {0, 1}, all_rows(1)), usage_error);
  }
}

TEST_CASE("loss gradients through sigmoid match finite differences") {
  // Treat raw logits as the parameters and differentiate each loss family.
  Rng rng(23);
  ClassRegistry reg = two_arch_registry();
  BatchLabels labels;
  labels.class_ids = {0, 2, 1, 3};
  labels.origins = {Origin::gan, Origin::gan, Origin::real, Origin::real};

  BasicTensor<double> old_logits({4, 4});
  for (auto& v : old_logits.data) v = rng.uniform(-2, 2);

  enum Kind { kClass, kDistill, kGroup };
  for (Kind kind : {kClass, kDistill, kGroup}) {
    ParameterSet<double> p;
    BasicTensor<double> logits({4, 4});
    for (auto& v : logits.data) v = rng.uniform(-2, 2);
    p.add("logits", logits);
    auto fn = [&](ParameterSet<double>& params, NamedTensors<double>* grads) {
      Graph<double> g;
      Var lv = g.leaf(params.at("logits"));
      Var loss{};
      if (kind == kClass) {
        loss = classification_loss_graph(g, g.sigmoid(lv), labels.class_ids, all_rows(4));
      } else if (kind == kDistill) {
        BasicTensor<double> ols({4, 4});
        for (int64_t i = 0; i < 4; ++i) {
          std::vector<double> row(4);
          for (int64_t j = 0; j < 4; ++j) row[size_t(j)] = old_logits.at2(i, j);
          auto prob = tempered_softmax(row, 2.0);
          for (int64_t j = 0; j < 4; ++j) ols.at2(i, j) = std::log(prob[size_t(j)]);
        }
        loss = distillation_loss_graph(g, lv, ols, 2.0, all_rows(4));
      } else {
        loss = group_binary_loss_graph(g, g.sigmoid(lv), labels.origins,
                                       reg.classes_with_origin(Origin::gan),
                                       reg.classes_with_origin(Origin::real), all_rows(4));
      }
      if (grads) {
        g.backward(loss);
        grads->add("logits", g.grad(lv));
      }
      return g.value(loss).data[0];
    };
    CHECK(finite_diff_check<double>(fn, p, 1e-4) < 1e-3);
  }
}
