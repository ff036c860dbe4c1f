#include "paraclap/tensor.hpp"

#include <cmath>

#include "paraclap/error.hpp"

namespace paraclap {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> affine(const Matrix& w, std::span<const double> b, std::span<const double> x) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw ShapeError("affine: weight " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                     " vs input " + std::to_string(x.size()) + " / bias " +
                     std::to_string(b.size()));
  }
  std::vector<double> out(b.begin(), b.end());
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] += dot(w.row(r), x);
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_transposed: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  }
  return out;
}

}  // namespace paraclap
