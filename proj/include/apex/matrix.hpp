#pragma once

// Dense row-major matrix of doubles plus the small vector helpers shared by
// the solvers. Everything in this library works on matrices with at most a
// few dozen rows, so there is no attempt at blocking or expression templates.

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace apex {

using Vec = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;

  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(static_cast<size_t>(rows) * cols, fill) {
    assert(rows >= 0 && cols >= 0);
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<int>(rows.size()),
             rows.size() ? static_cast<int>(rows.begin()->size()) : 0);
    int i = 0;
    for (const auto& r : rows) {
      assert(static_cast<int>(r.size()) == m.cols_);
      int j = 0;
      for (double v : r) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  // Builds an n x n matrix from a row-major flat array.
  static Matrix from_flat(int n, const Vec& flat) {
    assert(static_cast<size_t>(n) * n == flat.size());
    Matrix m(n, n);
    m.a_ = flat;
    return m;
  }

  double& operator()(int i, int j) {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    return a_[static_cast<size_t>(i) * cols_ + j];
  }
  double operator()(int i, int j) const {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    return a_[static_cast<size_t>(i) * cols_ + j];
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  const Vec& flat() const { return a_; }
  Vec& flat() { return a_; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && a_ == o.a_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  Vec a_;
};

// w_ij = lambda_i * u_ij.
inline Matrix scale_rows(const Matrix& u, const Vec& lambda) {
  assert(static_cast<int>(lambda.size()) == u.rows());
  Matrix w(u.rows(), u.cols());
  for (int i = 0; i < u.rows(); ++i)
    for (int j = 0; j < u.cols(); ++j) w(i, j) = lambda[i] * u(i, j);
  return w;
}

// Elementwise inner product.
inline double frob_dot(const Matrix& x, const Matrix& y) {
  assert(x.rows() == y.rows() && x.cols() == y.cols());
  double s = 0.0;
  for (size_t k = 0; k < x.flat().size(); ++k) s += x.flat()[k] * y.flat()[k];
  return s;
}

// <row i of u, y>.
inline double row_dot(const Matrix& u, int i, const Vec& y) {
  assert(static_cast<int>(y.size()) == u.cols());
  double s = 0.0;
  for (int j = 0; j < u.cols(); ++j) s += u(i, j) * y[j];
  return s;
}

inline double sum(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Permutation matrix with x(i, perm[i]) = 1.
inline Matrix permutation_matrix(const std::vector<int>& perm) {
  const int n = static_cast<int>(perm.size());
  Matrix x(n, n);
  for (int i = 0; i < n; ++i) x(i, perm[i]) = 1.0;
  return x;
}

}  // namespace apex
