// M-spline / I-spline bases for baseline hazards, B-splines for the direct
// surrogate-effect function, and the curvature penalty matrix
//   P[j,k] = integral of M_j''(t) * M_k''(t) dt
// so that coef' P coef penalizes the squared second derivative of the fitted
// hazard.  Conventions follow Ramsay (1988): boundary knots are replicated
// `order` times, interior knots must be distinct, each M-spline integrates
// to one over its support and I-splines are their running integrals.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "surroval/common.hpp"

namespace surroval {

enum class SplineKind { M, I, B };
enum class KnotPlacement { Equidistant, Percentile };

// Smoothing weights for the squared-second-derivative penalties of the two
// baseline hazards.
struct PenaltySpec {
  double kappa_s = 0.0;
  double kappa_t = 0.0;

  void validate() const {
    if (!(kappa_s >= 0.0) || !std::isfinite(kappa_s) || !(kappa_t >= 0.0) ||
        !std::isfinite(kappa_t))
      throw Error("smoothing parameters must be finite and nonnegative");
  }
};

// Gauss-Legendre nodes/weights on [0,1].  Newton iteration on P_n; used for
// penalty integrals, cumulative hazards under time-varying links and the
// surrogate-time integrals of the mediation measures.
struct GaussLegendre {
  std::vector<double> nodes;    // in (0,1)
  std::vector<double> weights;  // sum to 1
};

inline GaussLegendre gauss_legendre_01(int n) {
  if (n < 1) throw Error("gauss_legendre_01: need n >= 1");
  GaussLegendre rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // root of P_n in (-1,1)
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / pp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    rule.nodes[i] = 0.5 * (1.0 - x);  // x descending -> node ascending later
    rule.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    rule.weights[i] = 0.5 * w;
    rule.weights[n - 1 - i] = 0.5 * w;
  }
  return rule;
}

class SplineBasis {
 public:
  // placeholder basis; scenario and fit aggregates overwrite it
  SplineBasis() : SplineBasis(SplineKind::M, 1, {0.0, 1.0}) {}

  // `knots` holds the two boundary knots plus interior knots, strictly
  // increasing.  order 4 = cubic.
  SplineBasis(SplineKind kind, int order, std::vector<double> knots)
      : kind_(kind), order_(order), knots_(std::move(knots)) {
    if (order_ < 1) throw Error("spline order must be >= 1");
    if (knots_.size() < 2) throw Error("need at least the two boundary knots");
    std::sort(knots_.begin(), knots_.end());
    for (std::size_t i = 1; i < knots_.size(); ++i)
      if (!(knots_[i] > knots_[i - 1]))
        throw DegenerateData("duplicated knot at " + std::to_string(knots_[i]));
    build_extended();
  }

  SplineKind kind() const { return kind_; }
  int order() const { return order_; }
  int n_basis() const { return n_basis_; }
  double lower() const { return knots_.front(); }
  double upper() const { return knots_.back(); }
  const std::vector<double>& knots() const { return knots_; }
  int n_inner() const { return static_cast<int>(knots_.size()) - 2; }

  // Basis values at t.  M: nonnegative, each integrating to 1; B: partition
  // of unity; I: running integrals of M, nondecreasing 0 -> 1.
  std::vector<double> eval(double t) const {
    double x = clamp_in_support(t);
    switch (kind_) {
      case SplineKind::B:
        return bspline_all(ext_, order_, x);
      case SplineKind::M:
        return mspline_all(x);
      case SplineKind::I:
        return ispline_all(x);
    }
    throw Error("unreachable");
  }

  // d-th derivative of the basis functions at t.
  std::vector<double> eval_deriv(double t, int d) const {
    if (d == 0) return eval(t);
    double x = clamp_in_support(t);
    if (kind_ == SplineKind::I) {
      // d/dt I_k = M_k
      SplineBasis m(SplineKind::M, order_, knots_);
      return m.eval_deriv(t, d - 1);
    }
    std::vector<double> v = bspline_deriv_all(ext_, order_, x, d);
    if (kind_ == SplineKind::M) scale_to_mspline(v);
    return v;
  }

  // Integral of each basis function from the lower boundary to t.  Only
  // defined for the M kind (cumulative hazard building block).
  std::vector<double> integral(double t) const {
    if (kind_ != SplineKind::M)
      throw Error("integral() requires an M-spline basis");
    double x = clamp_in_support(t);
    return ispline_all(x);
  }

  // P with coef' P coef = integral of (sum_k coef_k M_k)''(t)^2 dt.
  Eigen::MatrixXd curvature_penalty() const {
    if (kind_ != SplineKind::M)
      throw Error("curvature penalty is defined for M-spline hazards");
    if (order_ < 3)
      throw OrderTooLow("curvature penalty needs order >= 3, got " +
                        std::to_string(order_));
    int n = n_basis_;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    // M'' is piecewise degree order-3; 6-point GL per span is exact for
    // any order we allow.
    GaussLegendre gl = gauss_legendre_01(6);
    for (std::size_t s = 0; s + 1 < knots_.size(); ++s) {
      double a = knots_[s], b = knots_[s + 1];
      double w_span = b - a;
      for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
        double t = a + gl.nodes[q] * w_span;
        std::vector<double> dd = eval_deriv(t, 2);
        double w = gl.weights[q] * w_span;
        for (int i = 0; i < n; ++i) {
          if (dd[i] == 0.0) continue;
          for (int j = i; j < n; ++j) P(i, j) += w * dd[i] * dd[j];
        }
      }
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) P(i, j) = P(j, i);
    return P;
  }

  bool in_support(double t) const {
    double tol = support_tol();
    return t >= lower() - tol && t <= upper() + tol;
  }

 private:
  double support_tol() const { return 1e-9 * (upper() - lower()); }

  double clamp_in_support(double t) const {
    if (!in_support(t))
      throw OutOfSupport("t = " + std::to_string(t) + " outside spline support [" +
                         std::to_string(lower()) + ", " + std::to_string(upper()) + "]");
    return std::min(std::max(t, lower()), upper());
  }

  void build_extended() {
    ext_.clear();
    ext_.insert(ext_.end(), static_cast<std::size_t>(order_), knots_.front());
    ext_.insert(ext_.end(), knots_.begin() + 1, knots_.end() - 1);
    ext_.insert(ext_.end(), static_cast<std::size_t>(order_), knots_.back());
    ext_up_.clear();
    ext_up_.insert(ext_up_.end(), static_cast<std::size_t>(order_) + 1,
                   knots_.front());
    ext_up_.insert(ext_up_.end(), knots_.begin() + 1, knots_.end() - 1);
    ext_up_.insert(ext_up_.end(), static_cast<std::size_t>(order_) + 1,
                   knots_.back());
    n_basis_ = static_cast<int>(ext_.size()) - order_;
  }

  // All order-`ord` B-splines on extended knots `ext` at x (dense vector of
  // ext.size()-ord values).  Cox-de Boor, in-place triangular update; the
  // right boundary uses the closed-interval convention so partition of unity
  // holds at x = upper().
  static std::vector<double> bspline_all(const std::vector<double>& ext, int ord,
                                         double x) {
    int m = static_cast<int>(ext.size());
    std::vector<double> b(static_cast<std::size_t>(m) - 1, 0.0);
    int hot = -1;
    for (int i = 0; i < m - 1; ++i) {
      if (ext[i] <= x && x < ext[i + 1]) {
        hot = i;
        break;
      }
    }
    if (hot < 0) {
      // x at (or clamped to) the right boundary: rightmost nonempty span
      for (int i = m - 2; i >= 0; --i) {
        if (ext[i] < ext[i + 1]) {
          hot = i;
          break;
        }
      }
    }
    if (hot >= 0) b[static_cast<std::size_t>(hot)] = 1.0;
    for (int k = 2; k <= ord; ++k) {
      for (int i = 0; i + k < m; ++i) {
        double left = 0.0, right = 0.0;
        double d1 = ext[i + k - 1] - ext[i];
        if (d1 > 0.0) left = (x - ext[i]) / d1 * b[i];
        double d2 = ext[i + k] - ext[i + 1];
        if (d2 > 0.0) right = (ext[i + k] - x) / d2 * b[i + 1];
        b[i] = left + right;
      }
    }
    b.resize(static_cast<std::size_t>(m - ord));
    return b;
  }

  // d-th derivative of all order-`ord` B-splines via the derivative
  // recursion applied to lower-order values.
  static std::vector<double> bspline_deriv_all(const std::vector<double>& ext,
                                               int ord, double x, int d) {
    int m = static_cast<int>(ext.size());
    if (d >= ord) return std::vector<double>(static_cast<std::size_t>(m - ord), 0.0);
    std::vector<double> v = bspline_all(ext, ord - d, x);
    for (int k = ord - d + 1; k <= ord; ++k) {
      std::vector<double> nv(static_cast<std::size_t>(m - k), 0.0);
      for (int i = 0; i + k < m; ++i) {
        double a = 0.0, b2 = 0.0;
        double d1 = ext[i + k - 1] - ext[i];
        if (d1 > 0.0) a = v[i] / d1;
        double d2 = ext[i + k] - ext[i + 1];
        if (d2 > 0.0 && i + 1 < static_cast<int>(v.size())) b2 = v[i + 1] / d2;
        nv[i] = (k - 1.0) * (a - b2);
      }
      v = std::move(nv);
    }
    return v;
  }

  void scale_to_mspline(std::vector<double>& v) const {
    for (int i = 0; i < n_basis_; ++i) {
      double w = ext_[i + order_] - ext_[i];
      v[i] = w > 0.0 ? v[i] * order_ / w : 0.0;
    }
  }

  std::vector<double> mspline_all(double x) const {
    std::vector<double> v = bspline_all(ext_, order_, x);
    scale_to_mspline(v);
    return v;
  }

  // I_k(x) = sum_{j >= k+1} B_j^{(order+1)}(x) on the same knot sequence.
  std::vector<double> ispline_all(double x) const {
    std::vector<double> up = bspline_all(ext_up_, order_ + 1, x);
    std::vector<double> out(static_cast<std::size_t>(n_basis_), 0.0);
    double tail = 0.0;
    for (int k = static_cast<int>(up.size()) - 1; k >= 1; --k) {
      tail += up[k];
      if (k - 1 < n_basis_) out[k - 1] = tail;
    }
    return out;
  }

  SplineKind kind_;
  int order_;
  std::vector<double> knots_;
  std::vector<double> ext_;
  std::vector<double> ext_up_;
  int n_basis_ = 0;
};

// Builds a basis from observed follow-up times.  `n_knots` counts boundary
// plus interior knots (so n_knots = 6 places 4 interior knots); allowed
// range 4..20.  Boundary knots sit at [0, max(data_times)].
inline SplineBasis make_basis(SplineKind kind, int n_knots,
                              KnotPlacement placement,
                              const std::vector<double>& data_times,
                              int order = 4) {
  if (n_knots < 4 || n_knots > 20)
    throw KnotRangeError("n_knots must be in [4, 20], got " +
                         std::to_string(n_knots));
  if (data_times.empty()) throw DegenerateData("no observation times");
  double tmax = *std::max_element(data_times.begin(), data_times.end());
  if (!(tmax > 0.0)) throw DegenerateData("all observation times are <= 0");
  double tmin = *std::min_element(data_times.begin(), data_times.end());
  if (tmax == tmin && placement == KnotPlacement::Percentile)
    throw DegenerateData("all observation times equal");
  int m = n_knots - 2;
  std::vector<double> knots;
  knots.push_back(0.0);
  for (int j = 1; j <= m; ++j) {
    double p = static_cast<double>(j) / (m + 1);
    double k = placement == KnotPlacement::Equidistant
                   ? p * tmax
                   : quantile_type7(data_times, p);
    knots.push_back(k);
  }
  knots.push_back(tmax);
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i] > knots[i - 1]))
      throw DegenerateData(
          "knot placement produced duplicate knots (too many ties in the data)");
  return SplineBasis(kind, order, std::move(knots));
}

inline std::vector<double> eval_basis(const SplineBasis& basis, double t) {
  return basis.eval(t);
}

// Dense monotone grid over a cumulative hazard for O(1) evaluation and
// O(log n) inversion; exact linear continuation beyond the last knot.
// Prediction-time machinery (simulation, counterfactual survival) runs on
// this grid; likelihood evaluation always uses the exact splines.
class CumulativeHazardGrid {
 public:
  CumulativeHazardGrid() = default;
  CumulativeHazardGrid(const SplineBasis& basis, const Eigen::VectorXd& coef,
                       int n_points = 4096);

  double hazard(double t) const {
    if (t >= upper_) return tail_rate_;
    if (t <= 0.0) return haz_.front();
    double x = t / step_;
    std::size_t i = static_cast<std::size_t>(x);
    double w = x - static_cast<double>(i);
    return haz_[i] * (1.0 - w) + haz_[i + 1] * w;
  }

  double cumulative(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= upper_) return cum_.back() + (t - upper_) * tail_rate_;
    double x = t / step_;
    std::size_t i = static_cast<std::size_t>(x);
    double w = x - static_cast<double>(i);
    return cum_[i] * (1.0 - w) + cum_[i + 1] * w;
  }

  double invert(double v) const {
    if (v <= 0.0) return 0.0;
    if (v >= cum_.back()) {
      if (!(tail_rate_ > 0.0)) return std::numeric_limits<double>::infinity();
      return upper_ + (v - cum_.back()) / tail_rate_;
    }
    std::size_t lo =
        static_cast<std::size_t>(std::lower_bound(cum_.begin(), cum_.end(), v) -
                                 cum_.begin());
    if (lo == 0) lo = 1;
    double c0 = cum_[lo - 1], c1 = cum_[lo];
    double w = c1 > c0 ? (v - c0) / (c1 - c0) : 0.0;
    return step_ * (static_cast<double>(lo - 1) + w);
  }

 private:
  std::vector<double> cum_, haz_;
  double step_ = 1.0, upper_ = 1.0, tail_rate_ = 0.0;
};

// Linear combination helpers for hazards lambda0(t) = coef . M(t) with
// constant extrapolation of the hazard beyond the upper boundary knot
// (prediction-time queries only; likelihood code stays inside the support).
struct HazardCurve {
  const SplineBasis* basis;  // kind M
  Eigen::VectorXd coef;

  double hazard(double t) const {
    double u = basis->upper();
    double x = t > u ? u : t;
    std::vector<double> m = basis->eval(x);
    double s = 0.0;
    for (int i = 0; i < coef.size(); ++i) s += coef[i] * m[i];
    return s;
  }

  double cumulative(double t) const {
    double u = basis->upper();
    if (t <= u) {
      std::vector<double> iv = basis->integral(t);
      double s = 0.0;
      for (int i = 0; i < coef.size(); ++i) s += coef[i] * iv[i];
      return s;
    }
    return cumulative(u) + (t - u) * hazard(u);
  }
};

// Coefficients reproducing a constant hazard `rate` exactly: each
// M-spline integrates to one, so scaling by knot spacing over order turns
// the partition of unity into a flat curve.
inline Eigen::VectorXd marginal_rate_coef(const SplineBasis& basis, double rate) {
  std::vector<double> ext;
  ext.insert(ext.end(), static_cast<std::size_t>(basis.order()), basis.knots().front());
  ext.insert(ext.end(), basis.knots().begin() + 1, basis.knots().end() - 1);
  ext.insert(ext.end(), static_cast<std::size_t>(basis.order()), basis.knots().back());
  Eigen::VectorXd coef(basis.n_basis());
  for (int i = 0; i < basis.n_basis(); ++i)
    coef[i] = rate * (ext[static_cast<std::size_t>(i + basis.order())] -
                      ext[static_cast<std::size_t>(i)]) /
              basis.order();
  return coef;
}

inline CumulativeHazardGrid::CumulativeHazardGrid(const SplineBasis& basis,
                                                  const Eigen::VectorXd& coef,
                                                  int n_points) {
  HazardCurve curve{&basis, coef};
  upper_ = basis.upper();
  step_ = upper_ / n_points;
  cum_.resize(static_cast<std::size_t>(n_points) + 1);
  haz_.resize(cum_.size());
  for (std::size_t i = 0; i < cum_.size(); ++i) {
    double t = step_ * static_cast<double>(i);
    cum_[i] = curve.cumulative(t);
    haz_[i] = curve.hazard(t);
  }
  tail_rate_ = haz_.back();
}

}  // namespace surroval
