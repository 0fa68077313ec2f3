#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ganinc/losses.hpp"
#include "ganinc/model.hpp"
#include "ganinc/rng.hpp"

using namespace ganinc;

namespace {

NetworkConfig small_config(Variant variant = Variant::base_icarl) {
  NetworkConfig cfg;
  cfg.input_size = 8;
  cfg.channels = 3;
  cfg.feature_dim = 8;
  cfg.conv_stages = 2;
  cfg.variant = variant;
  return cfg;
}

TensorValue random_batch(int n, const NetworkConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  TensorValue t({n, cfg.channels, cfg.input_size, cfg.input_size});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// Plain-loop replay of the whole forward pass, independent of the graph.
std::vector<double> replay_features(const ModelState& s, const TensorValue& batch, int n) {
  const auto& cfg = s.config;
  int size = cfg.input_size;
  std::vector<double> cur(batch.data.begin(), batch.data.end());
  int ci = cfg.channels;
  for (int stage = 0; stage < cfg.conv_stages; ++stage) {
    const auto& w = s.params.at("conv" + std::to_string(stage) + ".weight");
    const auto& b = s.params.at("conv" + std::to_string(stage) + ".bias");
    int co = cfg.stage_out_channels(stage);
    int out_size = size / 2;
    std::vector<double> next(static_cast<size_t>(n) * co * out_size * out_size);
    for (int in = 0; in < n; ++in)
      for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < out_size; ++oy)
          for (int ox = 0; ox < out_size; ++ox) {
            double acc = b[oc];
            for (int icd = 0; icd < ci; ++icd)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                  if (iy < 0 || iy >= size || ix < 0 || ix >= size) continue;
                  acc += cur[((size_t(in) * ci + icd) * size + iy) * size + ix] *
                         double(w[((int64_t(oc) * ci + icd) * 3 + ky) * 3 + kx]);
                }
            next[((size_t(in) * co + oc) * out_size + oy) * out_size + ox] = acc > 0 ? acc : 0;
          }
    cur = std::move(next);
    ci = co;
    size = out_size;
  }
  // global average pool + embedding + normalization
  const auto& ew = s.params.at("embed.weight");
  const auto& eb = s.params.at("embed.bias");
  int d = cfg.feature_dim;
  std::vector<double> feats(static_cast<size_t>(n) * d);
  for (int in = 0; in < n; ++in) {
    std::vector<double> pooled(static_cast<size_t>(ci));
    for (int c = 0; c < ci; ++c) {
      double acc = 0;
      for (int p = 0; p < size * size; ++p)
        acc += cur[(size_t(in) * ci + c) * size * size + p];
      pooled[static_cast<size_t>(c)] = acc / (size * size);
    }
    double ss = 0;
    std::vector<double> emb(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) {
      double acc = eb[j];
      for (int c = 0; c < ci; ++c) acc += pooled[static_cast<size_t>(c)] * double(ew.at2(j, c));
      emb[static_cast<size_t>(j)] = acc;
      ss += acc * acc;
    }
    double denom = std::sqrt(ss) + kFeatureNormEps;
    for (int j = 0; j < d; ++j) feats[size_t(in) * d + j] = emb[size_t(j)] / denom;
  }
  return feats;
}

}  // namespace

TEST_CASE("feature rows are unit norm") {
  Rng rng(0);
  auto state = ModelState::init(small_config(), 4, rng);
  auto feats = extract_features(state, random_batch(6, state.config, 9));
  for (int64_t i = 0; i < 6; ++i) {
    double ss = 0;
    for (int64_t j = 0; j < state.config.feature_dim; ++j)
      ss += double(feats.at2(i, j)) * double(feats.at2(i, j));
    CHECK(std::sqrt(ss) == Catch::Approx(1.0).margin(1e-5));
  }
}

TEST_CASE("identical inputs give identical feature rows") {
  Rng rng(0);
  auto state = ModelState::init(small_config(), 2, rng);
  auto one = random_batch(1, state.config, 4);
  TensorValue two({2, state.config.channels, state.config.input_size, state.config.input_size});
  for (int rep = 0; rep < 2; ++rep)
    for (int64_t i = 0; i < one.numel(); ++i) two[rep * one.numel() + i] = one[i];
  auto feats = extract_features(state, two);
  for (int64_t j = 0; j < state.config.feature_dim; ++j)
    CHECK(feats.at2(0, j) == feats.at2(1, j));
}

TEST_CASE("seed-0 forward matches the straight-line replay") {
  Rng rng(0);
  auto state = ModelState::init(small_config(Variant::mt_mc), 3, rng);
  auto batch = random_batch(2, state.config, 1);
  auto feats = extract_features(state, batch);
  auto replay = replay_features(state, batch, 2);
  for (int64_t i = 0; i < feats.numel(); ++i)
    CHECK(double(feats[i]) == Catch::Approx(replay[size_t(i)]).margin(1e-5));

  // head scores: sigmoid(W phi + b)
  auto sb = class_scores(state, batch);
  const auto& hw = state.params.at("head.weight");
  const auto& hb = state.params.at("head.bias");
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t y = 0; y < 3; ++y) {
      double acc = hb[y];
      for (int64_t j = 0; j < state.config.feature_dim; ++j)
        acc += replay[size_t(i) * state.config.feature_dim + size_t(j)] * double(hw.at2(y, j));
      CHECK(double(sb.scores.at2(i, y)) ==
            Catch::Approx(1.0 / (1.0 + std::exp(-acc))).margin(1e-5));
    }

  // detector: sigmoid(w phi + b)
  auto d = detector_score(state, batch);
  const auto& dw = state.params.at("detector.weight");
  const auto& db = state.params.at("detector.bias");
  for (int64_t i = 0; i < 2; ++i) {
    double acc = db[0];
    for (int64_t j = 0; j < state.config.feature_dim; ++j)
      acc += replay[size_t(i) * state.config.feature_dim + size_t(j)] * double(dw[j]);
    CHECK(double(d[i]) == Catch::Approx(1.0 / (1.0 + std::exp(-acc))).margin(1e-5));
  }
}

TEST_CASE("zero head gives one-half scores; large logits saturate") {
  Rng rng(0);
  auto state = ModelState::init(small_config(), 2, rng);
  auto& w = state.params.at("head.weight");
  auto& b = state.params.at("head.bias");
  std::fill(w.data.begin(), w.data.end(), 0.f);
  std::fill(b.data.begin(), b.data.end(), 0.f);
  auto batch = random_batch(3, state.config, 2);
  auto sb = class_scores(state, batch);
  for (float v : sb.scores.data) CHECK(v == Catch::Approx(0.5f));

  b.data[1] = 50.f;  // saturated class
  auto sb2 = class_scores(state, batch);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(sb2.scores.at2(i, 0) == Catch::Approx(0.5).margin(1e-6));
    CHECK(sb2.scores.at2(i, 1) == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("detector requires the mt_mc variant") {
  Rng rng(0);
  auto state = ModelState::init(small_config(Variant::mt_sc), 2, rng);
  CHECK_THROWS_AS(detector_score(state, random_batch(1, state.config, 3)), usage_error);
}

TEST_CASE("zero detector head scores one half") {
  Rng rng(0);
  auto state = ModelState::init(small_config(Variant::mt_mc), 2, rng);
  auto& w = state.params.at("detector.weight");
  auto& b = state.params.at("detector.bias");
  std::fill(w.data.begin(), w.data.end(), 0.f);
  std::fill(b.data.begin(), b.data.end(), 0.f);
  auto d = detector_score(state, random_batch(4, state.config, 5));
  for (float v : d.data) CHECK(v == 0.5f);
}

TEST_CASE("head expansion preserves old logits bitwise and starts new classes at 0.5") {
  Rng rng(0);
  auto state = ModelState::init(small_config(), 2, rng);
  auto batch = random_batch(3, state.config, 6);
  auto before = class_scores(state, batch);
  state.expand_head(2);
  CHECK(state.num_classes == 4);
  auto after = class_scores(state, batch);
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t y = 0; y < 2; ++y) CHECK(after.logits.at2(i, y) == before.logits.at2(i, y));
    for (int64_t y = 2; y < 4; ++y) CHECK(after.scores.at2(i, y) == 0.5f);
  }
  CHECK_THROWS_AS(state.expand_head(0), usage_error);
}

TEST_CASE("adam moments survive head expansion with matching shapes") {
  Rng rng(0);
  auto state = ModelState::init(small_config(), 2, rng);
  auto* head = state.params.find("head.weight");
  std::fill(head->m.data.begin(), head->m.data.end(), 0.5f);
  state.expand_head(2);
  head = state.params.find("head.weight");
  CHECK(head->m.shape == head->value.shape);
  CHECK(head->m.at2(0, 0) == 0.5f);
  CHECK(head->m.at2(3, 0) == 0.f);
}

TEST_CASE("snapshot is immutable under later training") {
  Rng rng(0);
  auto state = ModelState::init(small_config(), 2, rng);
  auto batch = random_batch(2, state.config, 7);
  auto snap = snapshot(state);
  auto before = class_scores(snap, batch);
  for (auto& e : state.params.entries())
    for (auto& v : e.value.data) v += 0.25f;
  auto after = class_scores(snap, batch);
  CHECK(before.logits.data == after.logits.data);

  // distilling a state against its own snapshot is a zero loss
  auto snap2 = snapshot(state);
  auto a = class_scores(state, batch);
  auto b = class_scores(snap2, batch);
  CHECK(distillation_loss(a.logits, b.logits, 2.0) == Catch::Approx(0.0).margin(1e-7));
}

TEST_CASE("seed determines parameters exactly") {
  Rng r1(123), r2(123);
  auto a = ModelState::init(small_config(), 3, r1);
  auto b = ModelState::init(small_config(), 3, r2);
  for (size_t i = 0; i < a.params.entries().size(); ++i)
    CHECK(a.params.entries()[i].value.data == b.params.entries()[i].value.data);
}

TEST_CASE("backbone gradient of a feature projection matches finite differences") {
  struct DoubleState {
    NetworkConfig config;
    ParameterSet<double> params;
    int num_classes;
  };
  Rng rng(0);
  auto cfg = small_config();
  cfg.input_size = 4;
  cfg.conv_stages = 1;
  auto fstate = ModelState::init(cfg, 2, rng);
  DoubleState dstate{cfg, fstate.params.cast<double>(), 2};

  BasicTensor<double> input({2, cfg.channels, 4, 4});
  Rng drng(31);
  for (auto& v : input.data) v = drng.uniform(-1.0, 1.0);
  BasicTensor<double> proj({2, cfg.feature_dim});
  for (auto& v : proj.data) v = drng.uniform(-1.0, 1.0);

  auto fn = [&](ParameterSet<double>& p, NamedTensors<double>* grads) {
    Graph<double> g;
    DoubleState s{cfg, p, 2};
    auto m = BoundModel<double>::bind(g, s, true);
    Var loss = g.weighted_sum(m.features(g.constant(input)), proj);
    if (grads) {
      g.backward(loss);
      *grads = m.collect_grads();
    }
    return g.value(loss).data[0];
  };
  CHECK(finite_diff_check<double>(fn, dstate.params, 1e-4) < 1e-3);
}

TEST_CASE("network config validation") {
  NetworkConfig cfg = small_config();
  cfg.input_size = 10;  // not divisible by 4
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = small_config();
  cfg.feature_dim = 1;
  CHECK_THROWS_AS(cfg.validate(), config_error);
}
