#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "vmfcoop/vmf.hpp"

using namespace vmfcoop;

namespace {

struct NormConstCase {
  double kappa;
  int d;
  double expected;
};

// log C_d(kappa) from an arbitrary-precision Bessel evaluation (60 digits).
constexpr NormConstCase kOracle[] = {
    {0, 3, -2.531024246969290793},        {1, 3, -2.6924636085404864266},
    {700, 512, 550.20656271764954873},    {1, 512, 867.96712659974964904},
    {50, 512, 865.53814936874644242},     {1e4, 512, -8113.084401543781383},
    {1e6, 512, -996939.68213051663571},   {0.1, 16, -1.326137400864611224},
    {10, 16, -4.0572990472682166443},     {1000, 16, -961.95152630531812959},
    {1e5, 16, -99927.436893259574715},    {1e6, 1024, -993873.30990863221477},
    {5, 2, -5.1425588422318789174},       {300, 64, -176.62148613122014811},
    {30, 64, 34.333725134227130769},      {1e6, 2, -999994.0111833792226},
    {2000, 100, -1714.1299354763972864},  {80, 100, 60.596860006916923142},
    {1e-6, 8, -3.4803072547295535052},    {40, 20, -21.39767027143715748},
    {199.5, 3, -196.04206283007942734},   {200.5, 3, -197.03706281966272161},
    {4801, 100, -4472.1341792057870269},  {4803, 100, -4474.1136669270804578},
    {0.5, 3, -2.572349101582208902},      {2, 3, -3.1262444390235136136},
    {10, 3, -9.535291971354146175},       {3000, 99, -2697.351908628836881},
    {1e6, 3, -999988.02236650844507},     {250, 30, -196.19585132608638247},
};

double closed_form_d3(double kappa) { return std::log(kappa / (4.0 * std::numbers::pi * std::sinh(kappa))); }

}  // namespace

TEST(LogNormConst, MatchesHighPrecisionOracle) {
  for (const auto& c : kOracle) {
    const double got = log_norm_const(c.kappa, c.d);
    EXPECT_NEAR(got, c.expected, 1e-12 * std::max(1.0, std::abs(c.expected))) << "kappa=" << c.kappa << " d=" << c.d;
  }
}

TEST(LogNormConst, UniformSphere) {
  EXPECT_NEAR(log_norm_const(0.0, 3), std::log(1.0 / (4.0 * std::numbers::pi)), 1e-15);
  // Circle: 1 / (2 pi).
  EXPECT_NEAR(log_norm_const(0.0, 2), -std::log(2.0 * std::numbers::pi), 1e-15);
}

TEST(LogNormConst, ClosedFormThreeDims) {
  for (double k : {0.01, 0.5, 1.0, 2.0, 10.0, 50.0, 150.0, 199.0, 201.0, 500.0})
    EXPECT_NEAR(log_norm_const(k, 3), closed_form_d3(k), 1e-9) << "kappa=" << k;
}

TEST(LogNormConst, DecreasingAndFiniteAcrossRange) {
  for (int d : {2, 3, 8, 64, 99, 100, 101, 512, 1024}) {
    double prev = log_norm_const(0.0, d);
    for (double k = 0.01; k <= 1e6; k *= 1.07) {
      const double v = log_norm_const(k, d);
      ASSERT_TRUE(std::isfinite(v)) << "d=" << d << " kappa=" << k;
      EXPECT_LT(v, prev) << "d=" << d << " kappa=" << k;
      prev = v;
    }
  }
}

TEST(LogNormConst, Errors) {
  try {
    log_norm_const(-1.0, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OutOfRange);
  }
  EXPECT_THROW(log_norm_const(1.0, 1), Error);
}

TEST(LogDensity, Examples) {
  const UnitVector mu = UnitVector::basis(3, 0);
  EXPECT_NEAR(log_density(UnitVector::basis(3, 1), VmfParams(mu, 0.0)), -2.53102, 1e-5);
  const double at_mode = log_density(mu, VmfParams(mu, 1.0));
  EXPECT_NEAR(at_mode, -1.69246, 1e-5);
  EXPECT_NEAR(std::exp(at_mode), std::numbers::e / (4.0 * std::numbers::pi * std::sinh(1.0)), 1e-12);
  EXPECT_NEAR(std::exp(at_mode), 0.1841, 1e-4);
  try {
    log_density(UnitVector::basis(4, 0), VmfParams(mu, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimMismatch);
  }
}

TEST(LogDensity, MonteCarloIntegralOnSphere) {
  const VmfParams p(UnitVector::from_direction({1.0, 2.0, -0.5}), 0.0);
  const EmbeddingMatrix xs = sample_vmf(p, 1'000'000, 99);
  for (double kappa : {0.5, 2.0, 10.0}) {
    const VmfParams q(p.mu, kappa);
    const double log_c = log_norm_const(kappa, 3);
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.rows(); ++i) sum += std::exp(log_c + kappa * dot(q.mu.coords(), xs.row(i)));
    const double integral = 4.0 * std::numbers::pi * sum / static_cast<double>(xs.rows());
    EXPECT_NEAR(integral, 1.0, 0.01) << "kappa=" << kappa;
  }
}

TEST(LogDensity, RatioIsNormalizationFree) {
  for (std::size_t d : {5u, 64u, 700u}) {
    Rng rng(d);
    std::vector<double> a(d), b(d), m(d);
    for (std::size_t j = 0; j < d; ++j) {
      a[j] = rng.normal();
      b[j] = rng.normal();
      m[j] = rng.normal();
    }
    const UnitVector x1 = UnitVector::from_direction(a), x2 = UnitVector::from_direction(b);
    const VmfParams p(UnitVector::from_direction(m), 37.5);
    const double lhs = log_density(x1, p) - log_density(x2, p);
    const double rhs = p.kappa * (dot(p.mu.coords(), x1.coords()) - dot(p.mu.coords(), x2.coords()));
    EXPECT_NEAR(lhs, rhs, 1e-9);
  }
}

TEST(KappaEstimator, HandEvaluation) {
  EXPECT_NEAR(kappa_from_resultant(0.5, 3, 0.0), 0.5 * 2.75 / 0.75, 1e-15);
  EXPECT_NEAR(kappa_from_resultant(0.5, 3, 0.0), 1.8333333333333333, 1e-12);
}

TEST(KappaEstimator, StrictlyIncreasingInR) {
  for (std::size_t d : {2u, 3u, 16u, 512u}) {
    double prev = kappa_from_resultant(1e-4, d, 1e-8);
    for (double r = 2e-4; r < 1.0; r += 1e-4) {
      const double k = kappa_from_resultant(r, d, 1e-8);
      ASSERT_GT(k, prev) << "d=" << d << " R=" << r;
      prev = k;
    }
  }
}

TEST(EstimateVmf, IdenticalRowsHitUnitResultant) {
  std::vector<double> row(512, 0.0);
  row[7] = 1.0;
  const auto m = EmbeddingMatrix::from_rows({row, row, row}, true);
  const VmfFit fit = estimate_vmf(m, 1e-8);
  EXPECT_EQ(fit.resultant_length, 1.0);
  EXPECT_EQ(fit.params.mu[7], 1.0);
  EXPECT_NEAR(fit.params.kappa, 5.11e10, 1e-6 * 5.11e10);
  EXPECT_TRUE(std::isfinite(fit.params.kappa));
}

TEST(EstimateVmf, RecoversSampledField) {
  const std::size_t d = 16;
  const VmfParams truth(UnitVector::from_direction(std::vector<double>(d, 1.0)), 50.0);
  const VmfFit fit = estimate_vmf(sample_vmf(truth, 10'000, 5));
  EXPECT_GT(dot(fit.params.mu.coords(), truth.mu.coords()), 0.99);
  EXPECT_LT(std::abs(fit.params.kappa - 50.0) / 50.0, 0.1);
}

TEST(EstimateVmf, AntipodalPairIsDegenerate) {
  try {
    estimate_vmf(EmbeddingMatrix::from_rows({{0, 1}, {0, -1}}, true));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateMean);
  }
}

TEST(EstimateVmf, RotationEquivariant) {
  const std::size_t d = 12;
  const VmfParams truth(UnitVector::basis(d, 3), 20.0);
  const EmbeddingMatrix xs = sample_vmf(truth, 3000, 8);
  const Matrix q = test::random_rotation(d, 77);
  const EmbeddingMatrix rotated(test::apply_rows(q, xs.values()), true);
  const VmfFit a = estimate_vmf(xs), b = estimate_vmf(rotated);
  EXPECT_NEAR(a.params.kappa, b.params.kappa, 1e-9);
  const auto mu_rot = test::apply(q, a.params.mu.coords());
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(b.params.mu[j], mu_rot[j], 1e-9);
}

TEST(SampleVmf, UniformWhenKappaZero) {
  const VmfParams p(UnitVector::basis(5, 0), 0.0);
  EXPECT_LT(mean_resultant(sample_vmf(p, 100'000, 3)).length, 0.02);
}

TEST(SampleVmf, HighConcentration) {
  const VmfParams p(UnitVector::from_direction({1, -1, 2, 0, 0, 3, 1, 1}), 1e4);
  const EmbeddingMatrix xs = sample_vmf(p, 100, 4);
  for (std::size_t i = 0; i < xs.rows(); ++i) EXPECT_GT(dot(xs.row(i), p.mu.coords()), 0.99);
}

TEST(SampleVmf, DeterministicAndUnit) {
  const VmfParams p(UnitVector::basis(30, 2), 12.0);
  const EmbeddingMatrix a = sample_vmf(p, 500, 42), b = sample_vmf(p, 500, 42);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.normalized());
  EXPECT_NE(a, sample_vmf(p, 500, 43));
}

TEST(SampleVmf, CosineMarginalMatchesMeanResultant) {
  // E<x, mu> = I_{d/2}(kappa) / I_{d/2-1}(kappa).
  for (auto [d, kappa] : {std::pair{3, 2.0}, std::pair{10, 5.0}, std::pair{64, 100.0}}) {
    const double expected = std::exp(log_bessel_i(0.5 * d, kappa) - log_bessel_i(0.5 * d - 1.0, kappa));
    Rng rng(static_cast<std::uint64_t>(d));
    double sum = 0.0;
    const int n = 200'000;
    for (int i = 0; i < n; ++i) sum += sample_vmf_cosine(kappa, static_cast<std::size_t>(d), rng);
    EXPECT_NEAR(sum / n, expected, 5e-3) << "d=" << d;
  }
}

TEST(VmfParams, RejectsBadKappa) {
  EXPECT_THROW(VmfParams(UnitVector::basis(3, 0), -0.1), Error);
  EXPECT_THROW(VmfParams(UnitVector::basis(3, 0), INFINITY), Error);
}
