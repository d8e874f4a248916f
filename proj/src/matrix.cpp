#include "bicr/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace bicr {

namespace {

// Row counts below this stay serial; the parallel ramp-up costs more than
// the work on 2-4 core desk machines.
constexpr long long kParallelFlopThreshold = 1LL << 16;

bool worth_parallel(int m, int n, int k) {
  return static_cast<long long>(m) * n * k >= kParallelFlopThreshold;
}

}  // namespace

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != checked_size(rows, cols)) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

std::size_t Matrix::checked_size(int rows, int cols) {
  if (rows < 0 || cols < 0) {
    throw DimensionError("negative matrix dimension " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::randn(int rows, int cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = stddev * rng.normal();
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int r = 0; r < m.rows(); ++r) {
    if (rows[r].size() != static_cast<std::size_t>(m.cols())) {
      throw DimensionError("ragged row list at row " + std::to_string(r));
    }
    std::copy(rows[r].begin(), rows[r].end(), m.row_ptr(r));
  }
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void require_shape(const Matrix& m, int rows, int cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw DimensionError(what + ": shapes " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + " differ");
  }
}

namespace {

void check_matmul(const Matrix& a, const Matrix& b, int ak, int bk, const char* what) {
  if (ak != bk) {
    throw DimensionError(std::string(what) + ": inner dimensions " + std::to_string(ak) + " and " +
                         std::to_string(bk) + " differ (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, int i) {
  const int n = b.cols();
  const int k = a.cols();
  const double* arow = a.row_ptr(i);
  double* crow = c.row_ptr(i);
  for (int kk = 0; kk < k; ++kk) {
    const double av = arow[kk];
    const double* brow = b.row_ptr(kk);
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const Matrix& a, const Matrix& b, Matrix& c, int i) {
  const int n = b.rows();
  const int k = a.cols();
  const double* arow = a.row_ptr(i);
  double* crow = c.row_ptr(i);
  for (int j = 0; j < n; ++j) {
    const double* brow = b.row_ptr(j);
    double acc = 0.0;
    for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
    crow[j] = acc;
  }
}

}  // namespace

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
  return c;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  const int m = a.rows();
#pragma omp parallel for schedule(static) if (worth_parallel(m, b.cols(), a.cols()))
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, i);
  return c;
}

Matrix matmul_nt_serial(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.cols(), "matmul_nt");
  Matrix c(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) matmul_nt_row(a, b, c, i);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.cols(), "matmul_nt");
  Matrix c(a.rows(), b.rows());
  const int m = a.rows();
#pragma omp parallel for schedule(static) if (worth_parallel(m, b.rows(), a.cols()))
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i);
  return c;
}

Matrix matmul_tn_serial(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.rows(), b.rows(), "matmul_tn");
  Matrix c(a.cols(), b.cols());
  for (int i = 0; i < a.cols(); ++i) {
    double* crow = c.row_ptr(i);
    for (int kk = 0; kk < a.rows(); ++kk) {
      const double av = a.at(kk, i);
      const double* brow = b.row_ptr(kk);
      for (int j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.rows(), b.rows(), "matmul_tn");
  Matrix c(a.cols(), b.cols());
  const int m = a.cols();
#pragma omp parallel for schedule(static) if (worth_parallel(m, b.cols(), a.rows()))
  for (int i = 0; i < m; ++i) {
    double* crow = c.row_ptr(i);
    for (int kk = 0; kk < a.rows(); ++kk) {
      const double av = a.at(kk, i);
      const double* brow = b.row_ptr(kk);
      for (int j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) t.at(c, r) = a.at(r, c);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (auto& v : c.data()) v *= s;
  return c;
}

void add_in_place(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add_in_place");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

void axpy_in_place(Matrix& a, double s, const Matrix& b) {
  require_same_shape(a, b, "axpy_in_place");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += s * b.data()[i];
}

std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

double l2_norm(std::span<const double> z) {
  double s = 0.0;
  for (double v : z) s += v * v;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> l2_normalize(std::span<const double> z) {
  const double n = l2_norm(z);
  if (n < kDegenerateNorm) {
    throw DegenerateVectorError("cannot normalize a vector with norm " + std::to_string(n));
  }
  std::vector<double> out(z.begin(), z.end());
  for (auto& v : out) v /= n;
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < kDegenerateNorm || nb < kDegenerateNorm) {
    throw DegenerateVectorError("cosine_similarity on a zero-norm vector");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace bicr
