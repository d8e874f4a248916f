#include <doctest.h>

#include "bicr/matrix.hpp"

using namespace bicr;

TEST_CASE("matmul identity and hand cases") {
  Matrix i2 = Matrix::identity(2);
  Matrix a(2, 2, {1, 2, 3, 4});
  CHECK(matmul(i2, a) == a);

  Matrix row(1, 2, {1, 2});
  Matrix col(2, 1, {3, 4});
  Matrix prod = matmul(row, col);
  CHECK(prod.rows() == 1);
  CHECK(prod.cols() == 1);
  CHECK(prod.at(0, 0) == doctest::Approx(11.0));
}

TEST_CASE("matmul rejects shape mismatch") {
  Matrix a(2, 3);
  Matrix b(2, 3);
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_THROWS_AS(matmul_nt(a, Matrix(3, 2)), DimensionError);
  CHECK_THROWS_AS(matmul_tn(a, Matrix(3, 3)), DimensionError);
}

TEST_CASE("parallel kernels match the serial reference bitwise") {
  Rng rng(7);
  // Large enough to cross the parallel threshold.
  Matrix a = Matrix::randn(70, 80, rng);
  Matrix b = Matrix::randn(80, 90, rng);
  CHECK(matmul(a, b) == matmul_serial(a, b));

  Matrix c = Matrix::randn(70, 80, rng);
  Matrix d = Matrix::randn(90, 80, rng);
  CHECK(matmul_nt(c, d) == matmul_nt_serial(c, d));

  Matrix e = Matrix::randn(80, 70, rng);
  Matrix f = Matrix::randn(80, 90, rng);
  CHECK(matmul_tn(e, f) == matmul_tn_serial(e, f));
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
  Rng rng(11);
  Matrix a = Matrix::randn(5, 7, rng);
  Matrix b = Matrix::randn(9, 7, rng);
  Matrix via_t = matmul(a, transpose(b));
  Matrix direct = matmul_nt(a, b);
  for (std::size_t i = 0; i < direct.size(); ++i) {
    CHECK(direct.data()[i] == doctest::Approx(via_t.data()[i]).epsilon(1e-12));
  }

  Matrix c = Matrix::randn(7, 5, rng);
  Matrix d = Matrix::randn(7, 9, rng);
  Matrix via_t2 = matmul(transpose(c), d);
  Matrix direct2 = matmul_tn(c, d);
  for (std::size_t i = 0; i < direct2.size(); ++i) {
    CHECK(direct2.data()[i] == doctest::Approx(via_t2.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax basics") {
  std::vector<double> flat{0.0, 0.0, 0.0};
  auto s = softmax(flat);
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3));

  std::vector<double> big{1000.0, 0.0};
  auto sb = softmax(big);
  CHECK(sb[0] == doctest::Approx(1.0));
  CHECK(sb[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(sb[0]));

  std::vector<double> pair{1.0, 0.0};
  auto sp = softmax(pair);
  const double e = std::exp(1.0);
  CHECK(sp[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
  CHECK(sp[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));

  SUBCASE("sums to one and stays positive on random input") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> x(8);
      for (auto& v : x) v = rng.normal(0, 5);
      auto sm = softmax(x);
      double sum = 0.0;
      for (double v : sm) {
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("l2_normalize") {
  std::vector<double> v{3.0, 4.0};
  auto n = l2_normalize(v);
  CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-12));

  auto twice = l2_normalize(n);
  for (std::size_t i = 0; i < n.size(); ++i) CHECK(std::abs(twice[i] - n[i]) < 1e-15);

  std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(l2_normalize(zero), DegenerateVectorError);
}

TEST_CASE("cosine similarity") {
  std::vector<double> a{1.0, 0.0};
  std::vector<double> b{0.0, 1.0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  std::vector<double> na{-1.0, 0.0};
  CHECK(cosine_similarity(a, na) == doctest::Approx(-1.0));
  std::vector<double> z{0.0, 0.0};
  CHECK_THROWS_AS(cosine_similarity(a, z), DegenerateVectorError);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(6), y(6);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    const double c = cosine_similarity(x, y);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("rng determinism and splitting") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42);
  Rng s1 = c.split(1);
  Rng s2 = c.split(2);
  CHECK(s1.next_u64() != s2.next_u64());

  Rng d(42);
  Rng s1_again = d.split(1);
  Rng s1_ref = Rng(42).split(1);
  CHECK(s1_again.next_u64() == s1_ref.next_u64());
}
