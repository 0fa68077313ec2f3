#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ganinc/errors.hpp"
#include "ganinc/tensor.hpp"

namespace ganinc {

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Forward values are computed eagerly as operations are
// recorded; backward() replays the record in reverse and accumulates a
// gradient for every node that (transitively) depends on a `leaf`.
// Reductions accumulate in binary64 and store results in S.
template <class S>
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}

  Var constant(BasicTensor<S> v) { return push(std::move(v), "constant", false); }
  Var leaf(BasicTensor<S> v) { return push(std::move(v), "leaf", record_); }

  const BasicTensor<S>& value(Var v) const { return node(v).value; }

  // Zero tensor when no gradient flowed to the node during backward.
  const BasicTensor<S>& grad(Var v) {
    if (!backward_done_) throw usage_error("graph: gradient requested before backward");
    Node& n = node(v);
    if (!n.needs_grad) throw usage_error("graph: node does not require gradients");
    return ensure_grad(v.id);
  }

  size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (!record_) throw usage_error("graph: backward on a non-recording graph");
    if (backward_done_) throw usage_error("graph: backward already run");
    if (nodes_.empty()) throw usage_error("graph: backward before any forward");
    Node& ln = node(loss);
    if (ln.value.numel() != 1) throw usage_error("graph: backward needs a scalar loss");
    if (!std::isfinite(static_cast<double>(ln.value.data[0])))
      throw std::runtime_error("graph: non-finite loss value");
    ensure_grad(loss.id);
    ln.grad.data[0] = S(1);
    for (int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.back) n.back();
    }
    backward_done_ = true;
  }

  // ---- elementwise ----

  Var add(Var a, Var b) { return ew2(a, b, "add", [](double x, double y) { return x + y; },
                                    [](double) { return 1.0; }, [](double) { return 1.0; }); }
  Var sub(Var a, Var b) { return ew2(a, b, "sub", [](double x, double y) { return x - y; },
                                    [](double) { return 1.0; }, [](double) { return -1.0; }); }
  Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    const auto& va = value(a);
    const auto& vb = value(b);
    BasicTensor<S> out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i)
      out[i] = static_cast<S>(static_cast<double>(va[i]) * static_cast<double>(vb[i]));
    Var o = push(std::move(out), "mul", needs(a) || needs(b));
    if (node(o).needs_grad)
      set_back(o, [this, o, a, b] {
        const auto& g = node(o).grad;
        if (needs(a)) {
          auto& ga = ensure_grad(a.id);
          const auto& vb = value(b);
          for (int64_t i = 0; i < g.numel(); ++i)
            ga[i] += static_cast<S>(static_cast<double>(g[i]) * static_cast<double>(vb[i]));
        }
        if (needs(b)) {
          auto& gb = ensure_grad(b.id);
          const auto& va = value(a);
          for (int64_t i = 0; i < g.numel(); ++i)
            gb[i] += static_cast<S>(static_cast<double>(g[i]) * static_cast<double>(va[i]));
        }
      });
    return o;
  }

  // alpha * x + beta, elementwise.
  Var axpb(Var x, double alpha, double beta) {
    const auto& vx = value(x);
    BasicTensor<S> out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i)
      out[i] = static_cast<S>(alpha * static_cast<double>(vx[i]) + beta);
    Var o = push(std::move(out), "axpb", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, alpha] {
        const auto& g = node(o).grad;
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < g.numel(); ++i)
          gx[i] += static_cast<S>(alpha * static_cast<double>(g[i]));
      });
    return o;
  }

  Var relu(Var x) {
    const auto& vx = value(x);
    BasicTensor<S> out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i) out[i] = vx[i] > S(0) ? vx[i] : S(0);
    Var o = push(std::move(out), "relu", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x] {
        const auto& g = node(o).grad;
        const auto& vx = value(x);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (vx[i] > S(0)) gx[i] += g[i];
      });
    return o;
  }

  Var sigmoid(Var x) {
    const auto& vx = value(x);
    BasicTensor<S> out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i) {
      double z = static_cast<double>(vx[i]);
      out[i] = static_cast<S>(z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                     : std::exp(z) / (1.0 + std::exp(z)));
    }
    Var o = push(std::move(out), "sigmoid", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x] {
        const auto& g = node(o).grad;
        const auto& y = value(o);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < g.numel(); ++i) {
          double s = static_cast<double>(y[i]);
          gx[i] += static_cast<S>(static_cast<double>(g[i]) * s * (1.0 - s));
        }
      });
    return o;
  }

  Var log(Var x) {
    const auto& vx = value(x);
    BasicTensor<S> out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i)
      out[i] = static_cast<S>(std::log(static_cast<double>(vx[i])));
    Var o = push(std::move(out), "log", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x] {
        const auto& g = node(o).grad;
        const auto& vx = value(x);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < g.numel(); ++i)
          gx[i] += static_cast<S>(static_cast<double>(g[i]) / static_cast<double>(vx[i]));
      });
    return o;
  }

  Var exp(Var x) {
    const auto& vx = value(x);
    BasicTensor<S> out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i)
      out[i] = static_cast<S>(std::exp(static_cast<double>(vx[i])));
    Var o = push(std::move(out), "exp", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x] {
        const auto& g = node(o).grad;
        const auto& y = value(o);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < g.numel(); ++i)
          gx[i] += static_cast<S>(static_cast<double>(g[i]) * static_cast<double>(y[i]));
      });
    return o;
  }

  // Gradient passes only strictly inside the interval.
  Var clamp(Var x, double lo, double hi) {
    const auto& vx = value(x);
    BasicTensor<S> out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i) {
      double z = static_cast<double>(vx[i]);
      out[i] = static_cast<S>(z < lo ? lo : (z > hi ? hi : z));
    }
    Var o = push(std::move(out), "clamp", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, lo, hi] {
        const auto& g = node(o).grad;
        const auto& vx = value(x);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < g.numel(); ++i) {
          double z = static_cast<double>(vx[i]);
          if (z > lo && z < hi) gx[i] += g[i];
        }
      });
    return o;
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
      throw config_error("matmul: incompatible shapes " + va.shape_str() + " x " + vb.shape_str());
    int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    BasicTensor<S> out({m, n});
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double acc = 0;
        for (int64_t p = 0; p < k; ++p)
          acc += static_cast<double>(va[i * k + p]) * static_cast<double>(vb[p * n + j]);
        out[i * n + j] = static_cast<S>(acc);
      }
    Var o = push(std::move(out), "matmul", needs(a) || needs(b));
    if (node(o).needs_grad)
      set_back(o, [this, o, a, b, m, k, n] {
        const auto& g = node(o).grad;
        if (needs(a)) {
          const auto& vb = value(b);
          auto& ga = ensure_grad(a.id);
          for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
              double acc = 0;
              for (int64_t j = 0; j < n; ++j)
                acc += static_cast<double>(g[i * n + j]) * static_cast<double>(vb[p * n + j]);
              ga[i * k + p] += static_cast<S>(acc);
            }
        }
        if (needs(b)) {
          const auto& va = value(a);
          auto& gb = ensure_grad(b.id);
          for (int64_t p = 0; p < k; ++p)
            for (int64_t j = 0; j < n; ++j) {
              double acc = 0;
              for (int64_t i = 0; i < m; ++i)
                acc += static_cast<double>(va[i * k + p]) * static_cast<double>(g[i * n + j]);
              gb[p * n + j] += static_cast<S>(acc);
            }
        }
      });
    return o;
  }

  // x:(N,D), w:(T,D), b:(T) -> (N,T). Row t of w is the weight vector of
  // output unit t, matching a classifier head that grows by rows.
  Var affine_rows(Var x, Var w, Var b) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    const auto& vb = value(b);
    if (vx.rank() != 2 || vw.rank() != 2 || vb.rank() != 1 || vx.dim(1) != vw.dim(1) ||
        vw.dim(0) != vb.dim(0))
      throw config_error("affine_rows: incompatible shapes " + vx.shape_str() + ", " +
                         vw.shape_str() + ", " + vb.shape_str());
    int64_t n = vx.dim(0), d = vx.dim(1), t = vw.dim(0);
    BasicTensor<S> out({n, t});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < t; ++j) {
        double acc = static_cast<double>(vb[j]);
        for (int64_t p = 0; p < d; ++p)
          acc += static_cast<double>(vx[i * d + p]) * static_cast<double>(vw[j * d + p]);
        out[i * t + j] = static_cast<S>(acc);
      }
    Var o = push(std::move(out), "affine_rows", needs(x) || needs(w) || needs(b));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, w, b, n, d, t] {
        const auto& g = node(o).grad;
        if (needs(x)) {
          const auto& vw = value(w);
          auto& gx = ensure_grad(x.id);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t p = 0; p < d; ++p) {
              double acc = 0;
              for (int64_t j = 0; j < t; ++j)
                acc += static_cast<double>(g[i * t + j]) * static_cast<double>(vw[j * d + p]);
              gx[i * d + p] += static_cast<S>(acc);
            }
        }
        if (needs(w)) {
          const auto& vx = value(x);
          auto& gw = ensure_grad(w.id);
          for (int64_t j = 0; j < t; ++j)
            for (int64_t p = 0; p < d; ++p) {
              double acc = 0;
              for (int64_t i = 0; i < n; ++i)
                acc += static_cast<double>(g[i * t + j]) * static_cast<double>(vx[i * d + p]);
              gw[j * d + p] += static_cast<S>(acc);
            }
        }
        if (needs(b)) {
          auto& gb = ensure_grad(b.id);
          for (int64_t j = 0; j < t; ++j) {
            double acc = 0;
            for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(g[i * t + j]);
            gb[j] += static_cast<S>(acc);
          }
        }
      });
    return o;
  }

  // x:(N,Ci,H,W), w:(Co,Ci,K,K), b:(Co). Zero padding. Lowered to an im2col
  // matrix product per image so the inner loops vectorize; the column matrix
  // is kept for the backward pass.
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    const auto& vb = value(b);
    if (vx.rank() != 4 || vw.rank() != 4 || vb.rank() != 1 || vx.dim(1) != vw.dim(1) ||
        vw.dim(2) != vw.dim(3) || vw.dim(0) != vb.dim(0))
      throw config_error("conv2d: incompatible shapes " + vx.shape_str() + ", " + vw.shape_str());
    const int64_t n = vx.dim(0), ci = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
    const int64_t co = vw.dim(0), kk = vw.dim(2);
    const int64_t ho = (h + 2 * pad - kk) / stride + 1;
    const int64_t wo = (wd + 2 * pad - kk) / stride + 1;
    if (ho < 1 || wo < 1) throw config_error("conv2d: output would be empty for input " + vx.shape_str());
    const int64_t cols = ho * wo, rows = ci * kk * kk;

    auto im2col = [=](const S* xn, S* col) {
      for (int64_t ic = 0; ic < ci; ++ic)
        for (int64_t ky = 0; ky < kk; ++ky)
          for (int64_t kx = 0; kx < kk; ++kx) {
            S* crow = col + ((ic * kk + ky) * kk + kx) * cols;
            for (int64_t oy = 0; oy < ho; ++oy) {
              int64_t iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) {
                for (int64_t ox = 0; ox < wo; ++ox) crow[oy * wo + ox] = S(0);
                continue;
              }
              const S* xrow = xn + (ic * h + iy) * wd;
              for (int64_t ox = 0; ox < wo; ++ox) {
                int64_t ix = ox * stride + kx - pad;
                crow[oy * wo + ox] = (ix < 0 || ix >= wd) ? S(0) : xrow[ix];
              }
            }
          }
    };

    auto col_cache = std::make_shared<std::vector<S>>(static_cast<size_t>(n * rows * cols));
    BasicTensor<S> out({n, co, ho, wo});
    std::vector<double> acc(static_cast<size_t>(cols));
    for (int64_t in = 0; in < n; ++in) {
      S* col = col_cache->data() + in * rows * cols;
      im2col(vx.data.data() + in * ci * h * wd, col);
      for (int64_t oc = 0; oc < co; ++oc) {
        std::fill(acc.begin(), acc.end(), static_cast<double>(vb[oc]));
        const S* wrow = vw.data.data() + oc * rows;
        for (int64_t r = 0; r < rows; ++r) {
          const double wv = static_cast<double>(wrow[r]);
          const S* crow = col + r * cols;
          for (int64_t j = 0; j < cols; ++j) acc[static_cast<size_t>(j)] += wv * static_cast<double>(crow[j]);
        }
        S* orow = out.data.data() + (in * co + oc) * cols;
        for (int64_t j = 0; j < cols; ++j) orow[j] = static_cast<S>(acc[static_cast<size_t>(j)]);
      }
    }

    Var o = push(std::move(out), "conv2d", needs(x) || needs(w) || needs(b));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, w, b, col_cache, stride, pad, n, ci, h, wd, co, kk, ho, wo, rows,
                   cols] {
        const auto& g = node(o).grad;
        const auto& vw = value(w);
        const bool nx = needs(x), nw = needs(w), nb = needs(b);
        std::vector<double> dw(nw ? static_cast<size_t>(co * rows) : 0, 0.0);
        std::vector<double> db(nb ? static_cast<size_t>(co) : 0, 0.0);
        std::vector<double> dx(nx ? value(x).data.size() : 0, 0.0);
        std::vector<double> dcol(nx ? static_cast<size_t>(cols) : 0);
        for (int64_t in = 0; in < n; ++in) {
          const S* col = col_cache->data() + in * rows * cols;
          const S* gn = g.data.data() + in * co * cols;
          if (nb)
            for (int64_t oc = 0; oc < co; ++oc) {
              double s = 0;
              for (int64_t j = 0; j < cols; ++j) s += static_cast<double>(gn[oc * cols + j]);
              db[static_cast<size_t>(oc)] += s;
            }
          if (nw)
            for (int64_t oc = 0; oc < co; ++oc) {
              const S* grow = gn + oc * cols;
              for (int64_t r = 0; r < rows; ++r) {
                const S* crow = col + r * cols;
                double s = 0;
                for (int64_t j = 0; j < cols; ++j)
                  s += static_cast<double>(grow[j]) * static_cast<double>(crow[j]);
                dw[static_cast<size_t>(oc * rows + r)] += s;
              }
            }
          if (nx) {
            double* dxn = dx.data() + in * ci * h * wd;
            for (int64_t r = 0; r < rows; ++r) {
              std::fill(dcol.begin(), dcol.end(), 0.0);
              for (int64_t oc = 0; oc < co; ++oc) {
                const double wv = static_cast<double>(vw[oc * rows + r]);
                const S* grow = gn + oc * cols;
                for (int64_t j = 0; j < cols; ++j)
                  dcol[static_cast<size_t>(j)] += wv * static_cast<double>(grow[j]);
              }
              // col2im scatter for this kernel tap
              int64_t kx = r % kk, ky = (r / kk) % kk, ic = r / (kk * kk);
              for (int64_t oy = 0; oy < ho; ++oy) {
                int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int64_t ox = 0; ox < wo; ++ox) {
                  int64_t ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= wd) continue;
                  dxn[(ic * h + iy) * wd + ix] += dcol[static_cast<size_t>(oy * wo + ox)];
                }
              }
            }
          }
        }
        if (nx) {
          auto& gx = ensure_grad(x.id);
          for (size_t i = 0; i < dx.size(); ++i) gx[static_cast<int64_t>(i)] += static_cast<S>(dx[i]);
        }
        if (nw) {
          auto& gw = ensure_grad(w.id);
          for (size_t i = 0; i < dw.size(); ++i) gw[static_cast<int64_t>(i)] += static_cast<S>(dw[i]);
        }
        if (nb) {
          auto& gb = ensure_grad(b.id);
          for (size_t i = 0; i < db.size(); ++i) gb[static_cast<int64_t>(i)] += static_cast<S>(db[i]);
        }
      });
    return o;
  }

  // (N,C,H,W) -> (N,C)
  Var global_avg_pool(Var x) {
    const auto& vx = value(x);
    if (vx.rank() != 4) throw config_error("global_avg_pool: expected rank-4 input, got " + vx.shape_str());
    int64_t n = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    BasicTensor<S> out({n, c});
    for (int64_t i = 0; i < n * c; ++i) {
      double acc = 0;
      for (int64_t p = 0; p < hw; ++p) acc += static_cast<double>(vx[i * hw + p]);
      out[i] = static_cast<S>(acc / static_cast<double>(hw));
    }
    Var o = push(std::move(out), "global_avg_pool", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, n, c, hw] {
        const auto& g = node(o).grad;
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < n * c; ++i) {
          S share = static_cast<S>(static_cast<double>(g[i]) / static_cast<double>(hw));
          for (int64_t p = 0; p < hw; ++p) gx[i * hw + p] += share;
        }
      });
    return o;
  }

  // Rows of x:(N,D) scaled to unit Euclidean norm; eps added to the
  // denominator so a zero row never divides by zero.
  Var l2_normalize_rows(Var x, double eps) {
    const auto& vx = value(x);
    if (vx.rank() != 2) throw config_error("l2_normalize_rows: expected rank-2 input, got " + vx.shape_str());
    int64_t n = vx.dim(0), d = vx.dim(1);
    BasicTensor<S> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
      double ss = 0;
      for (int64_t j = 0; j < d; ++j) {
        double z = static_cast<double>(vx[i * d + j]);
        ss += z * z;
      }
      double denom = std::sqrt(ss) + eps;
      for (int64_t j = 0; j < d; ++j)
        out[i * d + j] = static_cast<S>(static_cast<double>(vx[i * d + j]) / denom);
    }
    Var o = push(std::move(out), "l2_normalize_rows", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, eps, n, d] {
        const auto& g = node(o).grad;
        const auto& vx = value(x);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < n; ++i) {
          double ss = 0, dot = 0;
          for (int64_t j = 0; j < d; ++j) {
            double z = static_cast<double>(vx[i * d + j]);
            ss += z * z;
            dot += z * static_cast<double>(g[i * d + j]);
          }
          double norm = std::sqrt(ss);
          double denom = norm + eps;
          double scale = norm > 0 ? dot / (norm * denom * denom) : 0.0;
          for (int64_t j = 0; j < d; ++j)
            gx[i * d + j] += static_cast<S>(static_cast<double>(g[i * d + j]) / denom -
                                            static_cast<double>(vx[i * d + j]) * scale);
        }
      });
    return o;
  }

  // First `count` columns of x:(N,T).
  Var slice_cols(Var x, int64_t count) {
    const auto& vx = value(x);
    if (vx.rank() != 2 || count < 1 || count > vx.dim(1))
      throw usage_error("slice_cols: bad column count");
    int64_t n = vx.dim(0), t = vx.dim(1);
    BasicTensor<S> out({n, count});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < count; ++j) out[i * count + j] = vx[i * t + j];
    Var o = push(std::move(out), "slice_cols", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, count, n, t] {
        const auto& g = node(o).grad;
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < count; ++j) gx[i * t + j] += g[i * count + j];
      });
    return o;
  }

  // Row-wise log-softmax of x:(N,T), log-sum-exp stabilized.
  Var log_softmax_rows(Var x) {
    const auto& vx = value(x);
    if (vx.rank() != 2) throw config_error("log_softmax_rows: expected rank-2 input, got " + vx.shape_str());
    int64_t n = vx.dim(0), t = vx.dim(1);
    BasicTensor<S> out({n, t});
    for (int64_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < t; ++j) mx = std::max(mx, static_cast<double>(vx[i * t + j]));
      double sum = 0;
      for (int64_t j = 0; j < t; ++j) sum += std::exp(static_cast<double>(vx[i * t + j]) - mx);
      double lse = mx + std::log(sum);
      for (int64_t j = 0; j < t; ++j)
        out[i * t + j] = static_cast<S>(static_cast<double>(vx[i * t + j]) - lse);
    }
    Var o = push(std::move(out), "log_softmax_rows", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x, n, t] {
        const auto& g = node(o).grad;
        const auto& y = value(o);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < n; ++i) {
          double gsum = 0;
          for (int64_t j = 0; j < t; ++j) gsum += static_cast<double>(g[i * t + j]);
          for (int64_t j = 0; j < t; ++j)
            gx[i * t + j] += static_cast<S>(static_cast<double>(g[i * t + j]) -
                                            std::exp(static_cast<double>(y[i * t + j])) * gsum);
        }
      });
    return o;
  }

  // Scalar sum of x elementwise-weighted by a fixed mask.
  Var weighted_sum(Var x, BasicTensor<S> weights) {
    const auto& vx = value(x);
    if (!vx.same_shape(weights))
      throw usage_error("weighted_sum: mask shape " + weights.shape_str() + " != value shape " +
                        vx.shape_str());
    double acc = 0;
    for (int64_t i = 0; i < vx.numel(); ++i)
      acc += static_cast<double>(vx[i]) * static_cast<double>(weights[i]);
    Var o = push(BasicTensor<S>::scalar(static_cast<S>(acc)), "weighted_sum", needs(x));
    if (node(o).needs_grad) {
      auto w = std::make_shared<BasicTensor<S>>(std::move(weights));
      set_back(o, [this, o, x, w] {
        double go = static_cast<double>(node(o).grad.data[0]);
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < gx.numel(); ++i)
          gx[i] += static_cast<S>(go * static_cast<double>((*w)[i]));
      });
    }
    return o;
  }

  Var sum_all(Var x) {
    const auto& vx = value(x);
    double acc = 0;
    for (int64_t i = 0; i < vx.numel(); ++i) acc += static_cast<double>(vx[i]);
    Var o = push(BasicTensor<S>::scalar(static_cast<S>(acc)), "sum_all", needs(x));
    if (node(o).needs_grad)
      set_back(o, [this, o, x] {
        S go = node(o).grad.data[0];
        auto& gx = ensure_grad(x.id);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += go;
      });
    return o;
  }

  Var mean_all(Var x) {
    int64_t n = value(x).numel();
    return axpb(sum_all(x), 1.0 / static_cast<double>(n), 0.0);
  }

  // alpha * a + beta * b, same shapes.
  Var lincomb(Var a, double alpha, Var b, double beta) {
    return add(axpb(a, alpha, 0.0), axpb(b, beta, 0.0));
  }

 private:
  struct Node {
    BasicTensor<S> value;
    BasicTensor<S> grad;
    bool needs_grad = false;
    const char* op = "";
    std::function<void()> back;
  };

  Var push(BasicTensor<S> v, const char* op, bool needs_grad) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
      throw usage_error("graph: invalid variable");
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Node& node(Var v) const { return const_cast<Graph*>(this)->node(v); }

  bool needs(Var v) { return record_ && node(v).needs_grad; }

  BasicTensor<S>& ensure_grad(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.numel() == 0 && n.value.numel() != 0) n.grad = BasicTensor<S>(n.value.shape);
    return n.grad;
  }

  void set_back(Var v, std::function<void()> fn) {
    if (record_) node(v).back = std::move(fn);
  }

  void check_same_shape(Var a, Var b, const char* op) {
    if (!value(a).same_shape(value(b)))
      throw config_error(std::string(op) + ": shape mismatch " + value(a).shape_str() + " vs " +
                         value(b).shape_str());
  }

  template <class F, class DA, class DB>
  Var ew2(Var a, Var b, const char* opname, F f, DA, DB) {
    check_same_shape(a, b, opname);
    const auto& va = value(a);
    const auto& vb = value(b);
    BasicTensor<S> out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i)
      out[i] = static_cast<S>(f(static_cast<double>(va[i]), static_cast<double>(vb[i])));
    Var o = push(std::move(out), opname, needs(a) || needs(b));
    bool is_sub = std::string(opname) == "sub";
    if (node(o).needs_grad)
      set_back(o, [this, o, a, b, is_sub] {
        const auto& g = node(o).grad;
        if (needs(a)) {
          auto& ga = ensure_grad(a.id);
          for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (needs(b)) {
          auto& gb = ensure_grad(b.id);
          for (int64_t i = 0; i < g.numel(); ++i) gb[i] += is_sub ? static_cast<S>(-g[i]) : g[i];
        }
      });
    return o;
  }

  // deque: references returned by value()/grad() stay valid as nodes are added
  std::deque<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
};

}  // namespace ganinc
