#pragma once

#include <cstddef>
#include <vector>

namespace asmalign {

class Rng;

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  bool empty() const noexcept { return data.empty(); }
  void set_zero();

  static Matrix identity(std::size_t n);
  // Entries drawn from N(0, scale^2).
  static Matrix random_normal(std::size_t r, std::size_t c, double scale, Rng& rng);

  bool operator==(const Matrix&) const = default;
};

// All three throw ShapeError on incompatible operands.
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T

// dst += a * b, dst += a^T * b, dst += a * b^T
void add_matmul(Matrix& dst, const Matrix& a, const Matrix& b);
void add_matmul_tn(Matrix& dst, const Matrix& a, const Matrix& b);
void add_matmul_nt(Matrix& dst, const Matrix& a, const Matrix& b);

void add_inplace(Matrix& dst, const Matrix& src, double scale = 1.0);

// Rows of `a` followed by rows of `b`.
Matrix vconcat(const Matrix& a, const Matrix& b);
// Columns of `a` followed by columns of `b`.
Matrix hconcat(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

}  // namespace asmalign
