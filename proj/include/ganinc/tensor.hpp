#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ganinc/errors.hpp"

namespace ganinc {

// Dense row-major tensor. Values live in `S` (float in production paths,
// double in the finite-difference shadow arithmetic used by tests).
template <class S>
struct BasicTensor {
  std::vector<int64_t> shape;
  std::vector<S> data;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<int64_t> shp)
      : shape(std::move(shp)), data(static_cast<size_t>(count(shape)), S(0)) {}
  BasicTensor(std::vector<int64_t> shp, std::vector<S> values)
      : shape(std::move(shp)), data(std::move(values)) {
    if (count(shape) != static_cast<int64_t>(data.size()))
      throw usage_error("tensor: shape does not match data length");
  }

  static int64_t count(const std::vector<int64_t>& shp) {
    int64_t n = 1;
    for (int64_t d : shp) {
      if (d < 0) throw usage_error("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static BasicTensor zeros(std::vector<int64_t> shp) { return BasicTensor(std::move(shp)); }
  static BasicTensor full(std::vector<int64_t> shp, S v) {
    BasicTensor t(std::move(shp));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static BasicTensor scalar(S v) { return BasicTensor({}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  S& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const S& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  bool same_shape(const BasicTensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
  }

  template <class T>
  BasicTensor<T> cast() const {
    BasicTensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

using TensorValue = BasicTensor<float>;

}  // namespace ganinc
