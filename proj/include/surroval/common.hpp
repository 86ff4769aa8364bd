// Shared error types, RNG streams and small numeric helpers used across the
// library.  Everything downstream assumes the determinism contract set up
// here: a stream is identified by (seed, purpose, index) and always yields
// the same values regardless of evaluation order or thread count.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace surroval {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SURROVAL_ERROR(NAME)                                 \
  struct NAME : Error {                                      \
    explicit NAME(const std::string& msg) : Error(msg) {}    \
  }

// data
SURROVAL_ERROR(MissingColumn);
SURROVAL_ERROR(NonNumericCell);
SURROVAL_ERROR(InvariantViolation);
SURROVAL_ERROR(OrphanMeasurement);
SURROVAL_ERROR(DuplicateSurvivalRow);
// splines
SURROVAL_ERROR(KnotRangeError);
SURROVAL_ERROR(DegenerateData);
SURROVAL_ERROR(OutOfSupport);
SURROVAL_ERROR(OrderTooLow);
// integrate
SURROVAL_ERROR(NodeCountError);
SURROVAL_ERROR(BadCurvature);
SURROVAL_ERROR(NotPositiveDefinite);
// models
SURROVAL_ERROR(NumericalUnderflow);
SURROVAL_ERROR(NonFiniteContribution);
SURROVAL_ERROR(MediationPresent);
SURROVAL_ERROR(MediationLinkError);
SURROVAL_ERROR(LinkNotAllowed);
// optimizer
SURROVAL_ERROR(SingularHessian);
SURROVAL_ERROR(NonFiniteObjective);
// surrogacy / simulate
SURROVAL_ERROR(TooManyRejections);
SURROVAL_ERROR(RootFindingFailure);
// cli
SURROVAL_ERROR(ConfigError);

#undef SURROVAL_ERROR

// ---------------------------------------------------------------------------
// RNG: explicit-state xoshiro256++ with splitmix64 seeding and a hand-rolled
// Box-Muller transform.  std::normal_distribution is avoided on purpose so
// sample streams are identical on every platform and standard library.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  // Stream identity is the full (seed, purpose, index) triple.  `purpose`
  // separates independent uses (trial MC, bootstrap, simulation, ...) so a
  // new consumer can never collide with an existing stream.
  Rng(std::uint64_t seed, std::uint64_t purpose = 0, std::uint64_t index = 0) {
    std::uint64_t sm = seed ^ (purpose * 0x9e3779b97f4a7c15ULL) ^
                       (index * 0xd1b54a32d192ed03ULL);
    for (auto& s : s_) s = splitmix64(sm);
    has_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    auto rotl = [](std::uint64_t x, int k) {
      return (x << k) | (x >> (64 - k));
    };
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on (0,1), never exactly 0 or 1.
  double uniform() {
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  // Standard normal via Box-Muller; caches the second value of each pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double exponential() { return -std::log(uniform()); }

 private:
  std::uint64_t s_[4];
  bool has_spare_;
  double spare_;
};

// Purpose tags for derived streams.  Values are part of the reproducibility
// contract: changing them changes every seeded result.
namespace streams {
constexpr std::uint64_t kTrialMC = 1;
constexpr std::uint64_t kKendall = 2;
constexpr std::uint64_t kPte = 3;
constexpr std::uint64_t kBootstrap = 4;
constexpr std::uint64_t kSimulate = 5;
constexpr std::uint64_t kGeneric = 6;
}  // namespace streams

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum(exp(v))) with max-shift; -inf in, -inf out.
inline double log_sum_exp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v)
    if (x > m) m = x;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double sq(double x) { return x * x; }

// Standard normal cdf / quantile (Acklam's rational approximation refined by
// one Halley step; good to ~1e-13 which is ample for Wald p-values and CIs).
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("norm_quantile: p outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r, x;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    q = p - 0.5;
    r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // one Halley refinement against erfc
  double e = norm_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1 + x * u / 2);
  return x;
}

inline double two_sided_p(double z) { return 2.0 * norm_cdf(-std::fabs(z)); }

// Empirical quantile, linear interpolation between order statistics
// (the same rule as R's default type-7 definition).
inline double quantile_type7(std::vector<double> x, double p) {
  if (x.empty()) throw Error("quantile of empty sample");
  std::sort(x.begin(), x.end());
  if (p <= 0.0) return x.front();
  if (p >= 1.0) return x.back();
  double h = (static_cast<double>(x.size()) - 1.0) * p;
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = lo + 1 < x.size() ? lo + 1 : lo;
  double w = h - std::floor(h);
  return x[lo] * (1.0 - w) + x[hi] * w;
}

}  // namespace surroval
