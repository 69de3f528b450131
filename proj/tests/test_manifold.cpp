#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "vmfcoop/manifold.hpp"
#include "vmfcoop/vmf.hpp"

using namespace vmfcoop;

namespace {

EmbeddingMatrix random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (double& v : m.data()) v = rng.normal();
  return normalize_rows(m).matrix;
}

}  // namespace

TEST(UnitVector, AcceptsUnitNormWithinTolerance) {
  EXPECT_NO_THROW(UnitVector({0.6, 0.8}));
  EXPECT_NO_THROW(UnitVector({1.0 + 5e-7, 0.0}));
}

TEST(UnitVector, RejectsBadInput) {
  EXPECT_THROW(UnitVector({1.0 + 1e-5, 0.0}), Error);
  EXPECT_THROW(UnitVector({1.0}), Error);
  try {
    UnitVector({NAN, 1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteInput);
  }
}

TEST(UnitVector, FromDirectionNormalizes) {
  const UnitVector u = UnitVector::from_direction({3.0, 4.0});
  EXPECT_DOUBLE_EQ(u[0], 0.6);
  EXPECT_DOUBLE_EQ(u[1], 0.8);
  EXPECT_THROW(UnitVector::from_direction({0.0, 0.0}), Error);
}

TEST(EmbeddingMatrix, Invariants) {
  EXPECT_THROW(EmbeddingMatrix(Matrix(0, 3), false), Error);
  EXPECT_THROW(EmbeddingMatrix(Matrix(2, 1), false), Error);
  EXPECT_THROW(EmbeddingMatrix::from_rows({{1.0, 1.0}}, true), Error);
  EXPECT_NO_THROW(EmbeddingMatrix::from_rows({{1.0, 1.0}}, false));
  try {
    EmbeddingMatrix::from_rows({{1.0, INFINITY}}, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteInput);
  }
}

TEST(EmbeddingMatrix, SelectKeepsOrderAndFlag) {
  const auto m = EmbeddingMatrix::from_rows({{1, 0}, {0, 1}, {-1, 0}}, true);
  const std::vector<std::size_t> idx{2, 0};
  const auto s = m.select(idx);
  EXPECT_TRUE(s.normalized());
  EXPECT_EQ(s(0, 0), -1.0);
  EXPECT_EQ(s(1, 0), 1.0);
}

TEST(NormalizeRows, ThreeFourFive) {
  const auto r = normalize_rows(Matrix::from_rows({{3.0, 4.0}}), 1e-12);
  EXPECT_DOUBLE_EQ(r.matrix(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(r.matrix(0, 1), 0.8);
  EXPECT_TRUE(r.matrix.normalized());
  EXPECT_TRUE(r.degenerate_rows.empty());
}

TEST(NormalizeRows, UnitRowUnchanged) {
  const double s = 1.0 / std::sqrt(2.0);
  const auto r = normalize_rows(Matrix::from_rows({{s, s}}));
  EXPECT_NEAR(r.matrix(0, 0), s, 1e-12);
  EXPECT_NEAR(r.matrix(0, 1), s, 1e-12);
}

TEST(NormalizeRows, ZeroRowIsClampedAndReported) {
  const auto r = normalize_rows(Matrix::from_rows({{1.0, 0.0}, {0.0, 0.0}}), 1e-12);
  EXPECT_EQ(r.matrix(1, 0), 0.0);
  EXPECT_EQ(r.matrix(1, 1), 0.0);
  ASSERT_EQ(r.degenerate_rows.size(), 1u);
  EXPECT_EQ(r.degenerate_rows[0], 1u);
  EXPECT_FALSE(r.matrix.normalized());
}

TEST(NormalizeRows, NonFiniteRejected) {
  try {
    normalize_rows(Matrix::from_rows({{1.0, NAN}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteInput);
  }
}

TEST(NormalizeRows, Idempotent) {
  Rng rng(7);
  Matrix m(50, 9);
  for (double& v : m.data()) v = 10.0 * rng.normal();
  const auto once = normalize_rows(m).matrix;
  const auto twice = normalize_rows(once).matrix;
  for (std::size_t k = 0; k < m.data().size(); ++k)
    EXPECT_NEAR(once.values().data()[k], twice.values().data()[k], 1e-15);
}

TEST(CosineMatrix, IdentityBasis) {
  const auto a = EmbeddingMatrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, true);
  const Matrix c = cosine_matrix(a, a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(c(i, j), i == j ? 1.0 : 0.0);
}

TEST(CosineMatrix, Antipodal) {
  const auto a = EmbeddingMatrix::from_rows({{0.6, 0.8}}, true);
  const auto b = EmbeddingMatrix::from_rows({{-0.6, -0.8}}, true);
  EXPECT_NEAR(cosine_matrix(a, b)(0, 0), -1.0, 1e-15);
}

TEST(CosineMatrix, MatchesScalarLoop) {
  const auto a = random_rows(3, 5, 11);
  const auto b = random_rows(4, 5, 12);
  const Matrix c = cosine_matrix(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(j, k);
      EXPECT_NEAR(c(i, j), s, 1e-12);
      EXPECT_LE(std::abs(c(i, j)), 1.0 + 1e-9);
    }
}

TEST(CosineMatrix, UnitDiagonal) {
  const auto a = random_rows(20, 33, 13);
  const Matrix c = cosine_matrix(a, a);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(c(i, i), 1.0, 1e-9);
}

TEST(CosineMatrix, Errors) {
  const auto a = random_rows(2, 4, 1);
  const auto b = random_rows(2, 5, 2);
  try {
    cosine_matrix(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimMismatch);
  }
  EXPECT_THROW(cosine_matrix(a, EmbeddingMatrix::from_rows({{2, 0, 0, 0}}, false)), Error);
}

TEST(MeanResultant, IdenticalRows) {
  const auto m = EmbeddingMatrix::from_rows({{0.6, 0.8}, {0.6, 0.8}}, true);
  const MeanResultant r = mean_resultant(m);
  EXPECT_DOUBLE_EQ(r.length, 1.0);
  EXPECT_DOUBLE_EQ(r.direction[0], 0.6);
  EXPECT_DOUBLE_EQ(r.direction[1], 0.8);
}

TEST(MeanResultant, AntipodalIsDegenerate) {
  const auto m = EmbeddingMatrix::from_rows({{1, 0}, {-1, 0}}, true);
  try {
    mean_resultant(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateMean);
  }
}

TEST(MeanResultant, TwoBasisVectors) {
  const auto m = EmbeddingMatrix::from_rows({{1, 0}, {0, 1}}, true);
  const MeanResultant r = mean_resultant(m);
  EXPECT_NEAR(r.length, std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.direction[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(r.direction[1], 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(MeanResultant, PermutationInvariantAndBounded) {
  const auto m = random_rows(40, 6, 21);
  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < 40; ++i) perm[i] = i;
  Rng rng(3);
  rng.shuffle(std::span<std::size_t>(perm));
  const double r1 = mean_resultant(m).length;
  const double r2 = mean_resultant(m.select(perm)).length;
  EXPECT_NEAR(r1, r2, 1e-12);
  EXPECT_LE(r1, 1.0);
}

TEST(MeanResultant, LengthOneOnlyForEqualRows) {
  const auto same = EmbeddingMatrix::from_rows({{0, 1, 0}, {0, 1, 0}, {0, 1, 0}}, true);
  EXPECT_NEAR(mean_resultant(same).length, 1.0, 1e-9);
  const double s = std::sqrt(1.0 - 1e-6);
  const auto near = EmbeddingMatrix::from_rows({{0, 1, 0}, {1e-3, s, 0}}, true);
  EXPECT_LT(mean_resultant(near).length, 1.0);
}
