#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ganinc/errors.hpp"
#include "ganinc/graph.hpp"
#include "ganinc/params.hpp"
#include "ganinc/rng.hpp"
#include "ganinc/tensor.hpp"

namespace ganinc {

enum class Variant : uint8_t { base_icarl, mt_mc, mt_sc, finetune };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::base_icarl: return "base_icarl";
    case Variant::mt_mc: return "mt_mc";
    case Variant::mt_sc: return "mt_sc";
    case Variant::finetune: return "finetune";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "base_icarl") return Variant::base_icarl;
  if (s == "mt_mc") return Variant::mt_mc;
  if (s == "mt_sc") return Variant::mt_sc;
  if (s == "finetune") return Variant::finetune;
  throw config_error("unknown variant: " + s);
}

struct NetworkConfig {
  int input_size = 32;
  int channels = 3;
  int feature_dim = 64;
  int conv_stages = 2;  // stride-2 3x3 blocks, 16 -> 32 -> ... channels
  Variant variant = Variant::base_icarl;

  void validate() const {
    if (feature_dim < 2) throw config_error("feature_dim must be >= 2");
    if (conv_stages < 1) throw config_error("conv_stages must be >= 1");
    if (input_size % (1 << conv_stages) != 0)
      throw config_error("input_size must be divisible by 2^conv_stages");
    if (channels < 1) throw config_error("channels must be >= 1");
  }

  int stage_out_channels(int stage) const { return 16 << stage; }
  int stage_in_channels(int stage) const {
    return stage == 0 ? channels : stage_out_channels(stage - 1);
  }
  int backbone_channels() const { return stage_out_channels(conv_stages - 1); }
};

constexpr double kFeatureNormEps = 1e-8;

namespace detail {

inline TensorValue fan_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out,
                               Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  TensorValue t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

// Live trainable state: backbone, growing classification head, and (for
// MT-MC) the auxiliary detector head.
struct ModelState {
  NetworkConfig config;
  ParameterSet<float> params;
  int num_classes = 0;

  static ModelState init(const NetworkConfig& cfg, int initial_classes, Rng& rng) {
    cfg.validate();
    if (initial_classes < 1) throw usage_error("model: need at least one class");
    ModelState s;
    s.config = cfg;
    s.num_classes = initial_classes;
    for (int k = 0; k < cfg.conv_stages; ++k) {
      int64_t ci = cfg.stage_in_channels(k), co = cfg.stage_out_channels(k);
      s.params.add("conv" + std::to_string(k) + ".weight",
                   detail::fan_uniform({co, ci, 3, 3}, ci * 9, co * 9, rng));
      s.params.add("conv" + std::to_string(k) + ".bias", TensorValue({co}));
    }
    int64_t bc = cfg.backbone_channels(), d = cfg.feature_dim;
    s.params.add("embed.weight", detail::fan_uniform({d, bc}, bc, d, rng));
    s.params.add("embed.bias", TensorValue({d}));
    s.params.add("head.weight",
                 detail::fan_uniform({initial_classes, d}, d, initial_classes, rng));
    s.params.add("head.bias", TensorValue({initial_classes}));
    if (cfg.variant == Variant::mt_mc) {
      s.params.add("detector.weight", detail::fan_uniform({1, d}, d, 1, rng));
      s.params.add("detector.bias", TensorValue({1}));
    }
    return s;
  }

  // New head rows are zero-initialized: logits of existing classes are
  // bitwise unchanged and new-class scores start at sigmoid(0) = 0.5.
  void expand_head(int n_new) {
    if (n_new < 1) throw usage_error("expand_head: n_new must be >= 1");
    int64_t d = config.feature_dim;
    const auto& w = params.at("head.weight");
    const auto& b = params.at("head.bias");
    TensorValue nw({num_classes + n_new, d});
    TensorValue nb({num_classes + n_new});
    for (int64_t i = 0; i < w.numel(); ++i) nw[i] = w[i];
    for (int64_t i = 0; i < b.numel(); ++i) nb[i] = b[i];
    params.grow_rows("head.weight", nw);
    params.grow_rows("head.bias", nb);
    num_classes += n_new;
  }
};

// Frozen deep copy used as the old classifier during distillation.
struct ModelSnapshot {
  NetworkConfig config;
  ParameterSet<float> params;
  int num_classes = 0;
};

inline ModelSnapshot snapshot(const ModelState& state) {
  return ModelSnapshot{state.config, state.params, state.num_classes};
}

// One network bound onto a graph: parameter leaves (trainable) or constants
// (frozen snapshot), plus the forward builders.
template <class S>
struct BoundModel {
  Graph<S>* g = nullptr;
  NetworkConfig config;
  int num_classes = 0;
  std::vector<std::pair<std::string, Var>> vars;

  Var param(const std::string& name) const {
    for (const auto& [n, v] : vars)
      if (n == name) return v;
    throw usage_error("bound model: unknown parameter " + name);
  }

  template <class P>
  static BoundModel bind(Graph<S>& graph, const P& state, bool trainable) {
    BoundModel m;
    m.g = &graph;
    m.config = state.config;
    m.num_classes = state.num_classes;
    for (const auto& e : state.params.entries()) {
      auto t = e.value.template cast<S>();
      Var v = trainable ? graph.leaf(std::move(t)) : graph.constant(std::move(t));
      m.vars.emplace_back(e.name, v);
    }
    return m;
  }

  // input (N,C,H,W) scaled to [-1,1] -> unit-norm features (N,D)
  Var features(Var input) const {
    Var x = input;
    for (int k = 0; k < config.conv_stages; ++k) {
      x = g->conv2d(x, param("conv" + std::to_string(k) + ".weight"),
                    param("conv" + std::to_string(k) + ".bias"), /*stride=*/2, /*pad=*/1);
      x = g->relu(x);
    }
    x = g->global_avg_pool(x);
    x = g->affine_rows(x, param("embed.weight"), param("embed.bias"));
    return g->l2_normalize_rows(x, kFeatureNormEps);
  }

  Var logits(Var feats) const {
    return g->affine_rows(feats, param("head.weight"), param("head.bias"));
  }

  Var detector_logits(Var feats) const {
    if (config.variant != Variant::mt_mc)
      throw usage_error("detector head only exists on the mt_mc variant");
    return g->affine_rows(feats, param("detector.weight"), param("detector.bias"));
  }

  // Gradients for every bound parameter, keyed by name.
  NamedTensors<S> collect_grads() const {
    NamedTensors<S> out;
    for (const auto& [name, v] : vars) out.add(name, g->grad(v));
    return out;
  }
};

// ---- plain evaluation helpers (single forward, no gradients) ----

template <class State>
TensorValue extract_features(const State& state, const TensorValue& batch) {
  Graph<float> g(false);
  auto m = BoundModel<float>::bind(g, state, false);
  return g.value(m.features(g.constant(batch)));
}

struct ScoreBatch {
  TensorValue logits;  // (N, t)
  TensorValue scores;  // sigmoid(logits), per-class independent scores
};

template <class State>
ScoreBatch class_scores(const State& state, const TensorValue& batch) {
  Graph<float> g(false);
  auto m = BoundModel<float>::bind(g, state, false);
  Var logit = m.logits(m.features(g.constant(batch)));
  return ScoreBatch{g.value(logit), g.value(g.sigmoid(logit))};
}

template <class State>
TensorValue detector_score(const State& state, const TensorValue& batch) {
  Graph<float> g(false);
  auto m = BoundModel<float>::bind(g, state, false);
  Var d = g.sigmoid(m.detector_logits(m.features(g.constant(batch))));
  TensorValue out = g.value(d);  // (N,1)
  return TensorValue({out.dim(0)}, std::move(out.data));
}

}  // namespace ganinc
