#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "graphcl/common.hpp"
#include "graphcl/rng.hpp"

namespace graphcl {

using ArrayX = Eigen::Array<real, Eigen::Dynamic, 1>;
using MatrixX = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic>;
using VectorX = Eigen::Matrix<real, Eigen::Dynamic, 1>;

// Dense multi-axis array. Storage is row-major over `shape`.
struct Tensor {
  std::vector<int> shape;
  ArrayX data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data = ArrayX::Zero(count(shape));
  }
  Tensor(std::vector<int> s, ArrayX d) : shape(std::move(s)), data(std::move(d)) {}

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (const int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, real v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
  }

  static Tensor from_values(std::vector<int> s, std::initializer_list<real> v) {
    Tensor t(std::move(s));
    if (static_cast<std::int64_t>(v.size()) != t.size())
      throw ShapeError("from_values: element count mismatch");
    std::int64_t i = 0;
    for (const real x : v) t.data[i++] = x;
    return t;
  }

  static Tensor uniform(std::vector<int> s, Rng& rng, real lo, real hi) {
    Tensor t(std::move(s));
    for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(lo, hi);
    return t;
  }

  static Tensor normal(std::vector<int> s, Rng& rng, real sigma = 1.0) {
    Tensor t(std::move(s));
    for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = sigma * rng.normal();
    return t;
  }

  std::int64_t size() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }

  real& operator[](std::int64_t i) { return data[i]; }
  real operator[](std::int64_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const { return data.isFinite().all(); }

  // Views storage as a row-major (rows x cols) matrix.
  Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  as_matrix(int rows, int cols) const {
    return {data.data(), rows, cols};
  }
  Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  as_matrix(int rows, int cols) {
    return {data.data(), rows, cols};
  }

  std::string shape_str() const { return shape_str(shape); }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

}  // namespace graphcl
