#include <doctest.h>

#include <cmath>
#include <limits>

#include "relief/tensor.hpp"

using relief::Matrix;
using relief::Rng;

TEST_CASE("matrix construction and element access") {
  Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.0);
  CHECK(m.row(1)[0] == 4.0);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), relief::ShapeError);
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), relief::ShapeError);

  const Matrix id = Matrix::identity(3);
  CHECK(sum(id) == 3.0);
  CHECK(id(1, 1) == 1.0);
  CHECK(id(0, 1) == 0.0);
}

TEST_CASE("elementwise arithmetic") {
  const Matrix a = Matrix::from_rows({{1, -2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{0.5, 0.5}, {-1, 2}});
  CHECK(a + b == Matrix::from_rows({{1.5, -1.5}, {2, 6}}));
  CHECK(a - b == Matrix::from_rows({{0.5, -2.5}, {4, 2}}));
  CHECK(a * 2.0 == Matrix::from_rows({{2, -4}, {6, 8}}));
  CHECK(relief::max_abs(a) == 4.0);
  CHECK(relief::sum(a) == 6.0);
  CHECK_THROWS_AS(Matrix(1, 2) + Matrix(2, 1), relief::ShapeError);
  const std::vector<double> x{1, 2, 3}, y{4, 5, 6};
  CHECK(relief::dot(x, y) == 32.0);
}

TEST_CASE("gather_rows picks rows in order") {
  const Matrix m = Matrix::from_rows({{1, 1}, {2, 2}, {3, 3}});
  const std::vector<std::size_t> idx{2, 0, 2};
  CHECK(relief::gather_rows(m, idx) == Matrix::from_rows({{3, 3}, {1, 1}, {3, 3}}));
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(relief::gather_rows(m, bad), relief::ShapeError);
}

TEST_CASE("require_finite reports the location") {
  Matrix m(1, 2);
  CHECK_NOTHROW(m.require_finite("x"));
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(m.all_finite());
  CHECK_THROWS_WITH_AS(m.require_finite("weights"), doctest::Contains("weights"), relief::NumericalError);
}

TEST_CASE("rng is reproducible and serializable") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
  const std::string state = a.serialize();
  const double next = a.normal();
  Rng c(0);
  c.deserialize(state);
  CHECK(c.normal() == next);
  CHECK_THROWS(c.deserialize("garbage"));
  CHECK_THROWS(c.index(0));

  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = d.index(5);
    CHECK(k < 5);
    const double u = d.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("rng shuffle is a permutation") {
  Rng r(3);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("forks give distinct streams") {
  Rng r(1);
  Rng f1 = r.fork();
  Rng f2 = r.fork();
  CHECK(f1.next_u64() != f2.next_u64());
}
