#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "invdse/errors.hpp"

namespace invdse {

/// Dense row-major real matrix for small N x K design tensors.
struct Tensor2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2D() = default;
  Tensor2D(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }

  /// Flattened row-major copy as a column vector.
  Eigen::VectorXd flat() const { return Eigen::Map<const Eigen::VectorXd>(data.data(), data.size()); }

  static Tensor2D from_flat(std::size_t r, std::size_t c, const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (static_cast<std::size_t>(v.size()) != r * c) throw ShapeError("flat vector does not match tensor shape");
    Tensor2D t(r, c);
    for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] = v[static_cast<Eigen::Index>(k)];
    return t;
  }

  bool all_finite() const {
    for (double v : data) {
      if (!(v - v == 0.0)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;
};

/// Real-valued image of a bitmap: +1 where the bit is set, -1 elsewhere.
using SignedTensor = Tensor2D;

}  // namespace invdse
