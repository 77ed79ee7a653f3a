#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace prefdiff {

/// Thrown whenever two tensors disagree on shape; the message carries both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of 64-bit floats.
///
/// Rank is arbitrary for storage and serialization, but every differentiable
/// op works on rank-2 views: a rank-1 tensor of n entries is treated as 1 x n.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (element_count(shape) != data.size()) {
      throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0));
  }
  static Tensor filled(std::size_t rows, std::size_t cols, double value) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, value));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }
  static Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n, 1}, std::move(values));
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
  }
  std::string shape_string() const { return shape_string(shape); }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const {
    if (shape.size() > 2) throw ShapeError("rank-" + std::to_string(shape.size()) + " tensor used as matrix");
    return shape.size() == 2 ? shape[0] : 1;
  }
  std::size_t cols() const {
    if (shape.size() > 2) throw ShapeError("rank-" + std::to_string(shape.size()) + " tensor used as matrix");
    return shape.empty() ? 1 : shape.back();
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const {
    if (data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }
  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMajor>;

inline MatrixMap as_matrix(Tensor& t) {
  return MatrixMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

}  // namespace prefdiff
