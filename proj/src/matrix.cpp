#include "asmalign/matrix.hpp"

#include "asmalign/error.hpp"
#include "asmalign/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace asmalign {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows) + "x" + std::to_string(m.cols); }

void check_dst(const Matrix& dst, std::size_t r, std::size_t c) {
  if (dst.rows != r || dst.cols != c) {
    throw ShapeError("destination " + shape(dst) + " expected " + std::to_string(r) + "x" + std::to_string(c));
  }
}

}  // namespace

void Matrix::set_zero() { std::fill(data.begin(), data.end(), 0.0); }

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::random_normal(std::size_t r, std::size_t c, double scale, Rng& rng) {
  Matrix m(r, c);
  for (auto& x : m.data) x = scale * rng.normal();
  return m;
}

void add_matmul(Matrix& dst, const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("matmul " + shape(a) + " * " + shape(b));
  check_dst(dst, a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* out = dst.row(i);
    const double* ar = a.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double s = ar[k];
      if (s == 0.0) continue;
      const double* br = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) out[j] += s * br[j];
    }
  }
}

void add_matmul_tn(Matrix& dst, const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ShapeError("matmul_tn " + shape(a) + "^T * " + shape(b));
  check_dst(dst, a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ar = a.row(k);
    const double* br = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double s = ar[i];
      if (s == 0.0) continue;
      double* out = dst.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) out[j] += s * br[j];
    }
  }
}

void add_matmul_nt(Matrix& dst, const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw ShapeError("matmul_nt " + shape(a) + " * " + shape(b) + "^T");
  check_dst(dst, a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ar[k] * br[k];
      dst(i, j) += s;
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  add_matmul(out, a, b);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols, b.cols);
  add_matmul_tn(out, a, b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.rows);
  add_matmul_nt(out, a, b);
  return out;
}

void add_inplace(Matrix& dst, const Matrix& src, double scale) {
  check_dst(dst, src.rows, src.cols);
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * src.data[i];
}

Matrix vconcat(const Matrix& a, const Matrix& b) {
  if (a.rows == 0) return b;
  if (b.rows == 0) return a;
  if (a.cols != b.cols) throw ShapeError("vconcat width " + std::to_string(a.cols) + " vs " + std::to_string(b.cols));
  Matrix out(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ShapeError("hconcat rows " + std::to_string(a.rows) + " vs " + std::to_string(b.rows));
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    std::copy(a.row(i), a.row(i) + a.cols, out.row(i));
    std::copy(b.row(i), b.row(i) + b.cols, out.row(i) + a.cols);
  }
  return out;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.data.begin(), m.data.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace asmalign
