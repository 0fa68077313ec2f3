#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ganinc/errors.hpp"
#include "ganinc/tensor.hpp"

namespace ganinc {

template <class S>
struct NamedTensors {
  std::vector<std::pair<std::string, BasicTensor<S>>> items;

  BasicTensor<S>* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
  const BasicTensor<S>* find(const std::string& name) const {
    return const_cast<NamedTensors*>(this)->find(name);
  }
  void add(std::string name, BasicTensor<S> t) { items.emplace_back(std::move(name), std::move(t)); }
};

// Named parameter tensors plus per-parameter Adam moments. The step counter
// is shared by all parameters updated together.
template <class S>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<S> value;
    BasicTensor<S> m;  // first moment
    BasicTensor<S> v;  // second moment
  };

  void add(std::string name, BasicTensor<S> value) {
    if (find(name)) throw usage_error("parameter already registered: " + name);
    Entry e;
    e.m = BasicTensor<S>(value.shape);
    e.v = BasicTensor<S>(value.shape);
    e.value = std::move(value);
    e.name = std::move(name);
    entries_.push_back(std::move(e));
  }

  Entry* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }
  const Entry* find(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->find(name);
  }

  BasicTensor<S>& at(const std::string& name) {
    Entry* e = find(name);
    if (!e) throw usage_error("unknown parameter: " + name);
    return e->value;
  }
  const BasicTensor<S>& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  // Grow a parameter by rows (moments grow too, zero-filled); used when the
  // classifier head gains classes.
  void grow_rows(const std::string& name, const BasicTensor<S>& new_value) {
    Entry* e = find(name);
    if (!e) throw usage_error("unknown parameter: " + name);
    auto grow = [&](BasicTensor<S>& t) {
      BasicTensor<S> g(new_value.shape);
      for (int64_t i = 0; i < t.numel(); ++i) g[i] = t[i];
      t = std::move(g);
    };
    grow(e->m);
    grow(e->v);
    e->value = new_value;
  }

  template <class T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<T>());
    out.set_step(step_);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  int64_t step_ = 0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Returns the pre-clip global gradient norm; scales grads in place when the
// norm exceeds max_norm.
template <class S>
double clip_global_norm(NamedTensors<S>& grads, double max_norm) {
  double ss = 0;
  for (auto& [name, g] : grads.items)
    for (int64_t i = 0; i < g.numel(); ++i) {
      double z = static_cast<double>(g[i]);
      ss += z * z;
    }
  double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0) {
    double scale = max_norm / norm;
    for (auto& [name, g] : grads.items)
      for (int64_t i = 0; i < g.numel(); ++i)
        g[i] = static_cast<S>(static_cast<double>(g[i]) * scale);
  }
  return norm;
}

// Standard bias-corrected Adam. Parameters without a gradient entry are left
// untouched (their moments do not decay either; they were not part of the
// update).
template <class S>
void adam_step(ParameterSet<S>& params, const NamedTensors<S>& grads, const AdamConfig& cfg) {
  params.set_step(params.step() + 1);
  const double t = static_cast<double>(params.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : params.entries()) {
    const BasicTensor<S>* g = grads.find(e.name);
    if (!g) continue;
    if (!g->same_shape(e.value))
      throw usage_error("adam: gradient shape mismatch for " + e.name);
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      double gi = static_cast<double>((*g)[i]);
      if (!std::isfinite(gi))
        throw std::runtime_error("adam: non-finite gradient in parameter " + e.name);
      double m = cfg.beta1 * static_cast<double>(e.m[i]) + (1.0 - cfg.beta1) * gi;
      double v = cfg.beta2 * static_cast<double>(e.v[i]) + (1.0 - cfg.beta2) * gi * gi;
      e.m[i] = static_cast<S>(m);
      e.v[i] = static_cast<S>(v);
      double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      e.value[i] = static_cast<S>(static_cast<double>(e.value[i]) - update);
    }
  }
}

// loss_fn evaluates the objective at the given parameters; when `grads` is
// non-null it must also fill analytic gradients. Returns the maximum over
// parameter scalars of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// against central differences.
template <class S>
double finite_diff_check(
    const std::function<double(ParameterSet<S>&, NamedTensors<S>*)>& loss_fn,
    ParameterSet<S>& params, double step) {
  if (!(step > 0)) throw usage_error("finite_diff_check: step must be positive");
  NamedTensors<S> analytic;
  loss_fn(params, &analytic);
  double worst = 0;
  for (auto& e : params.entries()) {
    const BasicTensor<S>* g = analytic.find(e.name);
    if (g && !g->same_shape(e.value))
      throw usage_error("finite_diff_check: gradient shape mismatch for " + e.name);
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      S saved = e.value[i];
      e.value[i] = static_cast<S>(static_cast<double>(saved) + step);
      double up = loss_fn(params, nullptr);
      e.value[i] = static_cast<S>(static_cast<double>(saved) - step);
      double down = loss_fn(params, nullptr);
      e.value[i] = saved;
      double numeric = (up - down) / (2.0 * step);
      double a = g ? static_cast<double>((*g)[i]) : 0.0;
      double err = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ganinc
