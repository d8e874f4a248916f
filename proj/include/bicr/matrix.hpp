#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bicr/errors.hpp"
#include "bicr/rng.hpp"

namespace bicr {

// Dense row-major fp64 matrix. Vectors are 1xN or Nx1 matrices, or plain
// std::vector<double> where only one shape makes sense.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(checked_size(rows, cols), 0.0) {}
  Matrix(int rows, int cols, std::vector<double> data);

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }
  static Matrix identity(int n);
  static Matrix randn(int rows, int cols, Rng& rng, double stddev = 1.0);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  std::span<double> row(int r) { return {row_ptr(r), static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const { return {row_ptr(r), static_cast<std::size_t>(cols_)}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;
  void fill(double v);

  bool operator==(const Matrix& o) const = default;

 private:
  static std::size_t checked_size(int rows, int cols);

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// Throws DimensionError with `what` context unless the shapes hold.
void require_shape(const Matrix& m, int rows, int cols, const std::string& what);
void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what);

// Standard product a(m,k) * b(k,n). OpenMP-parallel over output rows for
// large outputs; bitwise identical to matmul_serial for any thread count
// (every output element is one fixed-order dot product).
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_serial(const Matrix& a, const Matrix& b);

// a(m,k) * b(n,k)^T -> (m,n). The layout used by affine layers (weights
// stored out x in).
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_nt_serial(const Matrix& a, const Matrix& b);

// a(k,m)^T * b(k,n) -> (m,n). Used by weight gradients.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_tn_serial(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_in_place(Matrix& a, const Matrix& b);
void axpy_in_place(Matrix& a, double s, const Matrix& b);  // a += s * b

// Numerically stabilized softmax (max subtraction). Total on finite input;
// output is strictly positive and sums to one.
std::vector<double> softmax(std::span<const double> x);

// Normalizes to unit l2 norm. Throws DegenerateVectorError when the norm
// is below 1e-12.
std::vector<double> l2_normalize(std::span<const double> z);

double l2_norm(std::span<const double> z);
double dot(std::span<const double> a, std::span<const double> b);

// Cosine similarity, clamped to [-1, 1]. Throws DegenerateVectorError on a
// zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Threshold below which a vector counts as collapsed.
inline constexpr double kDegenerateNorm = 1e-12;

}  // namespace bicr
