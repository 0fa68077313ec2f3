#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ganinc/errors.hpp"
#include "ganinc/registry.hpp"
#include "ganinc/tensor.hpp"

namespace ganinc {

// Memory budget M. The unlimited sentinel covers the M = infinity column of
// the budget sweeps.
struct Budget {
  bool unlimited = false;
  int64_t total = 0;

  static Budget infinite() { return Budget{true, 0}; }
  static Budget of(int64_t m) {
    if (m < 0) throw config_error("memory budget must be >= 0");
    return Budget{false, m};
  }

  // floor(M / t); leftover slots stay unused.
  int64_t quota(int64_t num_classes) const {
    if (num_classes < 1) throw usage_error("quota: need at least one class");
    if (unlimited) return std::numeric_limits<int64_t>::max();
    return total / num_classes;
  }

  std::string str() const { return unlimited ? "inf" : std::to_string(total); }
};

inline int64_t class_quota(const Budget& budget, int64_t num_classes) {
  return budget.quota(num_classes);
}

// Arithmetic mean of feature vectors; deliberately not renormalized.
inline std::vector<double> class_mean(const std::vector<std::vector<float>>& features) {
  if (features.empty()) throw usage_error("class_mean: empty feature list");
  size_t d = features[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) throw usage_error("class_mean: inconsistent dimensions");
    for (size_t j = 0; j < d; ++j) mean[j] += f[j];
  }
  for (double& v : mean) v /= static_cast<double>(features.size());
  return mean;
}

namespace memory_detail {

inline double dist2(const std::vector<float>& f, const std::vector<double>& center) {
  double acc = 0;
  for (size_t j = 0; j < f.size(); ++j) {
    double d = static_cast<double>(f[j]) - center[j];
    acc += d * d;
  }
  return acc;
}

// Indices of the m features closest to `center`, ties broken by ascending
// index so selection is fully deterministic.
inline std::vector<int> closest_indices(const std::vector<std::vector<float>>& features,
                                        const std::vector<double>& center, int64_t m) {
  std::vector<std::pair<double, int>> ranked(features.size());
  for (size_t i = 0; i < features.size(); ++i)
    ranked[i] = {dist2(features[i], center), static_cast<int>(i)};
  std::sort(ranked.begin(), ranked.end());
  int64_t keep = std::min<int64_t>(m, static_cast<int64_t>(ranked.size()));
  std::vector<int> out(static_cast<size_t>(keep));
  for (int64_t i = 0; i < keep; ++i) out[static_cast<size_t>(i)] = ranked[static_cast<size_t>(i)].second;
  return out;
}

}  // namespace memory_detail

// The m samples with the smallest distance to the class grand average.
inline std::vector<int> select_exemplars(const std::vector<std::vector<float>>& class_features,
                                         int64_t m) {
  if (class_features.empty()) throw usage_error("select_exemplars: empty class");
  auto mean = class_mean(class_features);
  return memory_detail::closest_indices(class_features, mean, m);
}

// Minimum-distance rule over class templates; ties go to the smallest id.
inline int classify_nme(const std::vector<float>& feature,
                        const std::vector<std::vector<double>>& templates) {
  if (templates.empty()) throw usage_error("classify_nme: no templates");
  int best = 0;
  double best_d = memory_detail::dist2(feature, templates[0]);
  for (size_t y = 1; y < templates.size(); ++y) {
    double d = memory_detail::dist2(feature, templates[y]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(y);
    }
  }
  return best;
}

// Budgeted per-class exemplar sets with cached features and templates.
// Samples are stored as dataset references so images can be re-run through
// the current feature extractor after every model update.
class ExemplarStore {
 public:
  struct Exemplar {
    int sample_index = -1;          // index into the dataset container
    std::vector<float> feature;     // cache; valid iff store cache is fresh
  };

  explicit ExemplarStore(Budget budget = Budget::of(0)) : budget_(budget) {}

  const Budget& budget() const { return budget_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }

  void add_class() { classes_.emplace_back(); }

  int64_t total_stored() const {
    int64_t n = 0;
    for (const auto& c : classes_) n += static_cast<int64_t>(c.size());
    return n;
  }

  const std::vector<Exemplar>& exemplars(int class_id) const {
    check_class(class_id);
    return classes_[static_cast<size_t>(class_id)];
  }

  void set_exemplars(int class_id, std::vector<Exemplar> ex) {
    check_class(class_id);
    classes_[static_cast<size_t>(class_id)] = std::move(ex);
  }

  void invalidate_features() {
    cache_fresh_ = false;
    templates_.clear();
  }

  bool cache_fresh() const { return cache_fresh_; }
  void mark_cache_fresh() { cache_fresh_ = true; }

  std::vector<Exemplar>& mutable_exemplars(int class_id) {
    check_class(class_id);
    return classes_[static_cast<size_t>(class_id)];
  }

  // Keep the new_m exemplars closest to the class template (features must be
  // fresh). Ties break by ascending position, i.e. ascending sample order.
  void reduce_class(int class_id, int64_t new_m) {
    check_class(class_id);
    auto& ex = classes_[static_cast<size_t>(class_id)];
    if (new_m >= static_cast<int64_t>(ex.size())) return;
    if (new_m == 0) {
      ex.clear();
      return;
    }
    if (!cache_fresh_)
      throw usage_error("reduce_class: feature cache is stale; recompute features first");
    std::vector<std::vector<float>> feats(ex.size());
    for (size_t i = 0; i < ex.size(); ++i) feats[i] = ex[i].feature;
    auto mu = class_mean(feats);
    auto keep = memory_detail::closest_indices(feats, mu, new_m);
    std::sort(keep.begin(), keep.end());
    std::vector<Exemplar> kept;
    kept.reserve(keep.size());
    for (int i : keep) kept.push_back(std::move(ex[static_cast<size_t>(i)]));
    ex = std::move(kept);
  }

  // Template of one class from cached features: mean with the current model's
  // features, not renormalized.
  std::vector<double> class_template(int class_id) const {
    check_class(class_id);
    const auto& ex = classes_[static_cast<size_t>(class_id)];
    if (ex.empty()) throw config_error("class " + std::to_string(class_id) + " has no exemplars");
    if (!cache_fresh_) throw usage_error("class_template: feature cache is stale");
    std::vector<std::vector<float>> feats(ex.size());
    for (size_t i = 0; i < ex.size(); ++i) feats[i] = ex[i].feature;
    return class_mean(feats);
  }

  const std::vector<std::vector<double>>& templates() const { return templates_; }

  void set_templates(std::vector<std::vector<double>> t) { templates_ = std::move(t); }

  bool empty() const { return total_stored() == 0; }

  // Budget invariants asserted after every protocol step.
  void check_invariants(int64_t available_per_class) const {
    if (!budget_.unlimited && total_stored() > budget_.total)
      throw std::runtime_error("exemplar store: budget exceeded");
    if (num_classes() == 0) return;
    int64_t q = budget_.quota(num_classes());
    int64_t expected = std::min<int64_t>(q, available_per_class);
    for (const auto& c : classes_)
      if (static_cast<int64_t>(c.size()) != expected)
        throw std::runtime_error("exemplar store: class holds " + std::to_string(c.size()) +
                                 " exemplars, expected " + std::to_string(expected));
  }

 private:
  void check_class(int class_id) const {
    if (class_id < 0 || class_id >= num_classes())
      throw usage_error("exemplar store: class id out of range");
  }

  Budget budget_;
  std::vector<std::vector<Exemplar>> classes_;
  std::vector<std::vector<double>> templates_;
  bool cache_fresh_ = false;
};

}  // namespace ganinc
