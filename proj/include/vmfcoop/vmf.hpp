#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "vmfcoop/error.hpp"
#include "vmfcoop/manifold.hpp"
#include "vmfcoop/random.hpp"

namespace vmfcoop {

namespace detail {

// Power series sum_k (x^2/4)^k / (k! (nu+1)_k), returned as a log. Every term
// is positive so there is no cancellation; the running sum is rescaled to
// stay below overflow.
inline double log_bessel_series_sum(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  double log_scale = 0.0;
  for (int k = 1; k < 10'000'000; ++k) {
    term *= q / (static_cast<double>(k) * (nu + k));
    sum += term;
    if (sum > 1e250) {
      sum *= 1e-250;
      term *= 1e-250;
      log_scale += 250.0 * std::numbers::ln10;
    }
    if (term < sum * 1e-17 && k > 0.5 * x) break;
  }
  return std::log(sum) + log_scale;
}

// Large-argument (Hankel) expansion, the exp(-x) branch dropped.
inline double log_bessel_hankel(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(next) > std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

// Debye uniform asymptotic expansion in 1/nu, terms u_0 .. u_4.
inline double log_bessel_debye(double nu, double x) {
  const double z = x / nu;
  const double sq = std::sqrt(1.0 + z * z);
  const double t = 1.0 / sq;
  const double eta = sq + std::log(z / (1.0 + sq));
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
  const double u3 = t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - 425425.0 * t2))) / 414720.0;
  const double u4 =
      t2 * t2 *
      (4465125.0 + t2 * (-94121676.0 + t2 * (349922430.0 + t2 * (-446185740.0 + 185910725.0 * t2))))
      / 39813120.0;
  const double inv = 1.0 / nu;
  const double series = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
  return nu * eta - 0.5 * std::log(2.0 * std::numbers::pi * nu) - 0.5 * std::log(sq) + std::log(series);
}

inline constexpr double kDebyeOrder = 50.0;

inline bool use_series(double nu, double x) { return nu < kDebyeOrder && x < std::max(200.0, 2.0 * nu * nu); }

}  // namespace detail

/// log I_nu(x) for nu >= 0, x >= 0, without overflow for x up to ~1e300.
inline double log_bessel_i(double nu, double x) {
  require(nu >= 0.0 && x >= 0.0 && std::isfinite(nu) && std::isfinite(x), ErrorKind::OutOfRange,
          "log_bessel_i needs finite nu >= 0 and x >= 0");
  if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (nu >= detail::kDebyeOrder) return detail::log_bessel_debye(nu, x);
  if (detail::use_series(nu, x))
    return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + detail::log_bessel_series_sum(nu, x);
  return detail::log_bessel_hankel(nu, x);
}

/// log C_d(kappa), where C_d(kappa) = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa)).
/// At kappa = 0 this is minus the log surface area of S^{d-1}.
inline double log_norm_const(double kappa, int d) {
  require(d >= 2, ErrorKind::InvalidSpec, "vMF needs d >= 2");
  require(std::isfinite(kappa) && kappa >= 0.0, ErrorKind::OutOfRange,
          "concentration must be finite and >= 0, got " + std::to_string(kappa));
  const double half_d = 0.5 * d;
  const double nu = half_d - 1.0;
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  if (kappa == 0.0) return std::lgamma(half_d) - std::numbers::ln2 - half_d * std::log(std::numbers::pi);
  if (detail::use_series(nu, kappa)) {
    // kappa^nu cancels against the (kappa/2)^nu prefactor of the series.
    return nu * std::numbers::ln2 + std::lgamma(nu + 1.0) - detail::log_bessel_series_sum(nu, kappa) - half_d * log_2pi;
  }
  return nu * std::log(kappa) - half_d * log_2pi - log_bessel_i(nu, kappa);
}

struct VmfParams {
  UnitVector mu;
  double kappa;

  VmfParams(UnitVector mean, double concentration) : mu(std::move(mean)), kappa(concentration) {
    require(std::isfinite(kappa) && kappa >= 0.0, ErrorKind::OutOfRange,
            "concentration must be finite and >= 0, got " + std::to_string(kappa));
  }

  std::size_t dims() const noexcept { return mu.dims(); }
};

inline double log_density(const UnitVector& x, const VmfParams& p) {
  require(x.dims() == p.dims(), ErrorKind::DimMismatch, "log_density: point and field dims differ");
  return log_norm_const(p.kappa, static_cast<int>(p.dims())) + p.kappa * dot(p.mu.coords(), x.coords());
}

/// Closed-form approximate MLE of kappa from the mean resultant length.
inline double kappa_from_resultant(double r, std::size_t d, double eps) {
  const double r2 = r * r;
  return r * (static_cast<double>(d) - r2) / (1.0 - r2 + eps);
}

struct VmfFit {
  VmfParams params;
  double resultant_length;
};

inline VmfFit estimate_vmf(const EmbeddingMatrix& m, double eps = kFieldEps) {
  require(eps >= 0.0, ErrorKind::OutOfRange, "eps must be >= 0");
  MeanResultant mr = mean_resultant(m);
  const double kappa = kappa_from_resultant(mr.length, m.dims(), eps);
  return {VmfParams(std::move(mr.direction), kappa), mr.length};
}

/// Draws the cosine w = <x, mu> of a vMF sample (Wood's rejection scheme).
inline double sample_vmf_cosine(double kappa, std::size_t d, Rng& rng) {
  const double dm1 = static_cast<double>(d) - 1.0;
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double one_minus_x0_sq = 4.0 * b / ((1.0 + b) * (1.0 + b));
  const double c = kappa * x0 + dm1 * std::log(one_minus_x0_sq);
  for (;;) {
    const double z = rng.beta(0.5 * dm1, 0.5 * dm1);
    const double w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = rng.uniform_pos();
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) return w;
  }
}

/// n i.i.d. draws from vMF(mu, kappa), deterministic in seed.
inline EmbeddingMatrix sample_vmf(const VmfParams& p, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::InvalidSpec, "sample count must be >= 1");
  const std::size_t d = p.dims();
  Rng rng(seed);
  Matrix out(n, d);
  std::vector<double> v(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = sample_vmf_cosine(p.kappa, d, rng);
    double vn = 0.0;
    do {
      for (double& x : v) x = rng.normal();
      const double proj = dot(v, p.mu.coords());
      for (std::size_t j = 0; j < d; ++j) v[j] -= proj * p.mu[j];
      vn = norm(v);
    } while (vn < 1e-8);
    const double s = std::sqrt(std::max(0.0, 1.0 - w * w)) / vn;
    auto r = out.row(i);
    for (std::size_t j = 0; j < d; ++j) r[j] = w * p.mu[j] + s * v[j];
    const double rn = norm(r);
    for (double& x : r) x /= rn;
  }
  return EmbeddingMatrix(std::move(out), true);
}

}  // namespace vmfcoop
