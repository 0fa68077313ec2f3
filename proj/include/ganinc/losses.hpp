#pragma once

#include <cmath>
#include <vector>

#include "ganinc/errors.hpp"
#include "ganinc/graph.hpp"
#include "ganinc/registry.hpp"
#include "ganinc/tensor.hpp"

namespace ganinc {

// Scores are clipped to [kScoreEps, 1 - kScoreEps] inside logs so every loss
// stays finite under saturation.
constexpr double kScoreEps = 1e-7;

struct LossConfig {
  double gamma = 0.5;        // classification/distillation balance
  double temperature = 2.0;  // distillation temperature
  double lambda = 1.0;       // weight of the binary term (1.0 mt_mc, 0.5 mt_sc)

  void validate() const {
    if (gamma < 0 || gamma > 1) throw config_error("gamma must be in [0,1]");
    if (temperature < 1) throw config_error("temperature must be >= 1");
    if (lambda < 0) throw config_error("lambda must be >= 0");
  }
};

struct BatchLabels {
  std::vector<int> class_ids;    // in [0, t)
  std::vector<Origin> origins;   // GAN / real
};

inline std::vector<double> tempered_softmax(const std::vector<double>& logits, double t) {
  if (t < 1) throw usage_error("tempered_softmax: T must be >= 1");
  if (logits.empty()) throw usage_error("tempered_softmax: empty logits");
  double mx = logits[0] / t;
  for (double z : logits) mx = std::max(mx, z / t);
  std::vector<double> out(logits.size());
  double sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / t - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// ---- graph builders ----
// Each builder returns a scalar Var: the negated, batch-averaged form of the
// corresponding objective, averaged over the rows listed in `rows` (the
// remaining rows of the batch belong to other loss terms).

namespace loss_detail {

template <class S>
Var zero_scalar(Graph<S>& g) {
  return g.constant(BasicTensor<S>::scalar(S(0)));
}

template <class S>
Var mean_masked_log(Graph<S>& g, Var scores, BasicTensor<S> mask, int64_t n_rows) {
  Var lg = g.log(g.clamp(scores, kScoreEps, 1.0 - kScoreEps));
  Var s = g.weighted_sum(lg, std::move(mask));
  return g.axpb(s, -1.0 / static_cast<double>(n_rows), 0.0);
}

}  // namespace loss_detail

// Per-class sigmoid cross-entropy over all classes (one-vs-rest), averaged
// over the listed rows.
template <class S>
Var classification_loss_graph(Graph<S>& g, Var scores, const std::vector<int>& class_ids,
                              const std::vector<int>& rows) {
  const auto& v = g.value(scores);
  if (v.rank() != 2) throw usage_error("classification_loss: scores must be (N,t)");
  if (rows.empty()) return loss_detail::zero_scalar(g);
  const int64_t t = v.dim(1);
  BasicTensor<S> pos(v.shape), neg(v.shape);
  for (int r : rows) {
    int y = class_ids[static_cast<size_t>(r)];
    if (y < 0 || y >= t) throw usage_error("classification_loss: label out of range");
    for (int64_t j = 0; j < t; ++j)
      (j == y ? pos : neg)[r * t + j] = S(1);
  }
  Var lpos = loss_detail::mean_masked_log(g, scores, std::move(pos),
                                          static_cast<int64_t>(rows.size()));
  Var one_minus = g.axpb(scores, -1.0, 1.0);
  Var lneg = loss_detail::mean_masked_log(g, one_minus, std::move(neg),
                                          static_cast<int64_t>(rows.size()));
  return g.add(lpos, lneg);
}

// Temperature-scaled KL(new || old) * T^2, averaged over the listed rows.
// `old_log_softmax` holds log softmax(old_logits / T), precomputed from the
// frozen snapshot.
template <class S>
Var distillation_loss_graph(Graph<S>& g, Var new_logits, const BasicTensor<S>& old_log_softmax,
                            double temperature, const std::vector<int>& rows) {
  const auto shape = g.value(new_logits).shape;
  if (shape != old_log_softmax.shape)
    throw usage_error("distillation_loss: logit shape mismatch vs " +
                      old_log_softmax.shape_str());
  if (rows.empty()) return loss_detail::zero_scalar(g);
  const int64_t t = shape[1];
  Var ls_new = g.log_softmax_rows(g.axpb(new_logits, 1.0 / temperature, 0.0));
  Var diff = g.sub(ls_new, g.constant(old_log_softmax));
  Var kl_terms = g.mul(g.exp(ls_new), diff);
  BasicTensor<S> mask(shape);
  for (int r : rows)
    for (int64_t j = 0; j < t; ++j) mask[r * t + j] = S(1);
  Var s = g.weighted_sum(kl_terms, std::move(mask));
  return g.axpb(s, temperature * temperature / static_cast<double>(rows.size()), 0.0);
}

// MT-MC detector binary cross-entropy; d is (N,1) sigmoid scores.
template <class S>
Var detector_bce_graph(Graph<S>& g, Var d, const std::vector<Origin>& origins,
                       const std::vector<int>& rows) {
  const auto& v = g.value(d);
  if (rows.empty()) return loss_detail::zero_scalar(g);
  BasicTensor<S> pos(v.shape), neg(v.shape);
  for (int r : rows)
    (origins[static_cast<size_t>(r)] == Origin::gan ? pos : neg)[r] = S(1);
  Var lpos = loss_detail::mean_masked_log(g, d, std::move(pos), static_cast<int64_t>(rows.size()));
  Var lneg = loss_detail::mean_masked_log(g, g.axpb(d, -1.0, 1.0), std::move(neg),
                                          static_cast<int64_t>(rows.size()));
  return g.add(lpos, lneg);
}

// MT-SC group binary term: for a GAN-labeled sample the log scores of every
// GAN class are summed, and likewise for real samples over the real classes.
template <class S>
Var group_binary_loss_graph(Graph<S>& g, Var scores, const std::vector<Origin>& origins,
                            const std::vector<int>& gan_classes,
                            const std::vector<int>& real_classes, const std::vector<int>& rows) {
  if (gan_classes.empty() || real_classes.empty())
    throw usage_error("group binary loss: empty GAN or real class group");
  const auto& v = g.value(scores);
  if (rows.empty()) return loss_detail::zero_scalar(g);
  const int64_t t = v.dim(1);
  BasicTensor<S> mask(v.shape);
  for (int r : rows) {
    const auto& group =
        origins[static_cast<size_t>(r)] == Origin::gan ? gan_classes : real_classes;
    for (int y : group) mask[r * t + y] = S(1);
  }
  return loss_detail::mean_masked_log(g, scores, std::move(mask),
                                      static_cast<int64_t>(rows.size()));
}

// ---- plain scalar forms (spec surface; same arithmetic on a local tape) ----

namespace loss_detail {

inline std::vector<int> all_rows(int64_t n) {
  std::vector<int> rows(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) rows[static_cast<size_t>(i)] = static_cast<int>(i);
  return rows;
}

}  // namespace loss_detail

inline double classification_loss(const TensorValue& scores, const BatchLabels& labels) {
  Graph<float> g(false);
  Var s = g.constant(scores);
  return g.value(classification_loss_graph(g, s, labels.class_ids,
                                           loss_detail::all_rows(scores.dim(0))))
      .data[0];
}

inline double distillation_loss(const TensorValue& new_logits, const TensorValue& old_logits,
                                double temperature) {
  if (!new_logits.same_shape(old_logits))
    throw usage_error("distillation_loss: logit shape mismatch");
  if (temperature < 1) throw usage_error("distillation_loss: T must be >= 1");
  // Old side computed in binary64 straight from the frozen logits.
  const int64_t n = new_logits.dim(0), t = new_logits.dim(1);
  BasicTensor<float> old_ls({n, t});
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<size_t>(t));
    for (int64_t j = 0; j < t; ++j) row[static_cast<size_t>(j)] = old_logits[i * t + j];
    auto p = tempered_softmax(row, temperature);
    for (int64_t j = 0; j < t; ++j)
      old_ls[i * t + j] = static_cast<float>(std::log(p[static_cast<size_t>(j)]));
  }
  Graph<float> g(false);
  Var nl = g.constant(new_logits);
  return g.value(distillation_loss_graph(g, nl, old_ls, temperature, loss_detail::all_rows(n)))
      .data[0];
}

inline double icarl_loss(double class_term, double distill_term, double gamma) {
  if (gamma < 0 || gamma > 1) throw usage_error("icarl_loss: gamma must be in [0,1]");
  return (1.0 - gamma) * class_term + gamma * distill_term;
}

inline double binary_loss_mtmc(const TensorValue& d, const BatchLabels& labels) {
  TensorValue col({d.numel(), 1}, std::vector<float>(d.data));
  Graph<float> g(false);
  Var dv = g.constant(col);
  return g.value(detector_bce_graph(g, dv, labels.origins, loss_detail::all_rows(d.numel())))
      .data[0];
}

inline double mtmc_loss(double icarl_term, double binary_term, double lambda) {
  if (lambda < 0) throw usage_error("mtmc_loss: lambda must be >= 0");
  return icarl_term + lambda * binary_term;
}

inline double group_binary_loss_mtsc(const TensorValue& scores, const BatchLabels& labels,
                                     const ClassRegistry& registry) {
  Graph<float> g(false);
  Var s = g.constant(scores);
  return g.value(group_binary_loss_graph(g, s, labels.origins,
                                         registry.classes_with_origin(Origin::gan),
                                         registry.classes_with_origin(Origin::real),
                                         loss_detail::all_rows(scores.dim(0))))
      .data[0];
}

}  // namespace ganinc
