// Numerical integration over random-effect distributions.
//
// Gauss-Hermite rules are stored in "expectation form": for X ~ N(0,1),
// E[f(X)] ~= sum_k weights[k] * f(nodes[k]) and the weights sum to one.
// The pseudo-adaptive variant recentres the rule on the mode of an
// integrand and rescales by its curvature while staying exact for the
// N(0,1) reference, which is what makes a handful of nodes enough for
// sharply peaked subject-level posteriors.
//
// Monte-Carlo integration over trial-level effects uses one independent,
// reproducible stream per trial so the marginal likelihood is a fixed
// deterministic function of the parameters for a given seed.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "surroval/common.hpp"

namespace surroval {

enum class QuadKind { StandardGH, PseudoAdaptiveGH };

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;     // positive, sum to 1 for standard rules
  std::vector<double> log_weights;
  QuadKind kind = QuadKind::StandardGH;

  int size() const { return static_cast<int>(nodes.size()); }

  void refresh_log_weights() {
    log_weights.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
      log_weights[i] = std::log(weights[i]);
  }
};

// Golub-Welsch nodes/weights for weight function exp(-x^2), rescaled so the
// rule approximates expectations under N(0,1).
inline QuadratureRule gh_rule(int n_nodes) {
  if (n_nodes < 1 || n_nodes > 128)
    throw NodeCountError("gh_rule: n_nodes must be in [1, 128], got " +
                         std::to_string(n_nodes));
  QuadratureRule rule;
  rule.kind = QuadKind::StandardGH;
  if (n_nodes == 1) {
    rule.nodes = {0.0};
    rule.weights = {1.0};
    rule.refresh_log_weights();
    return rule;
  }
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n_nodes);
  Eigen::VectorXd sub(n_nodes - 1);
  for (int i = 1; i < n_nodes; ++i) sub[i - 1] = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  // orthonormal Hermite polynomials for exp(-x^2): value of h_0..h_n at x
  auto hermite_upto = [n_nodes](double x, std::vector<double>& h) {
    h[0] = std::pow(M_PI, -0.25);
    if (n_nodes >= 1) h[1] = std::sqrt(2.0) * x * h[0];
    for (int k = 1; k < n_nodes; ++k)
      h[k + 1] =
          (x * h[k] - std::sqrt(k / 2.0) * h[k - 1]) / std::sqrt((k + 1) / 2.0);
  };
  rule.nodes.resize(n_nodes);
  rule.weights.resize(n_nodes);
  std::vector<double> h(static_cast<std::size_t>(n_nodes) + 1);
  for (int i = 0; i < n_nodes; ++i) {
    // eigenvalue as the initial guess, polished by Newton on h_n; the
    // weight is the Christoffel function 1 / sum_{k<n} h_k(x)^2, which is
    // far better conditioned than the eigenvector formula at the tails
    double x = es.eigenvalues()[i];
    for (int it = 0; it < 50; ++it) {
      hermite_upto(x, h);
      double deriv = std::sqrt(2.0 * n_nodes) * h[static_cast<std::size_t>(n_nodes) - 1];
      double dx = h[static_cast<std::size_t>(n_nodes)] / deriv;
      x -= dx;
      if (std::fabs(dx) < 1e-15 * std::max(1.0, std::fabs(x))) break;
    }
    hermite_upto(x, h);
    double chris = 0.0;
    for (int k = 0; k < n_nodes; ++k) chris += sq(h[static_cast<std::size_t>(k)]);
    // change of variables xi = sqrt(2) x and division by sqrt(pi) turn the
    // e^{-x^2} rule into E[f(X)], X ~ N(0,1)
    rule.nodes[i] = std::sqrt(2.0) * x;
    rule.weights[i] = 1.0 / (chris * std::sqrt(M_PI));
  }
  // enforce exact symmetry about 0 (the eigensolver is symmetric only to
  // rounding): average mirrored pairs
  for (int i = 0; i < n_nodes / 2; ++i) {
    int j = n_nodes - 1 - i;
    double mag = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    rule.nodes[i] = -mag;
    rule.nodes[j] = mag;
    double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n_nodes % 2 == 1) rule.nodes[n_nodes / 2] = 0.0;
  double wsum = 0.0;
  for (double w : rule.weights) wsum += w;
  for (double& w : rule.weights) w /= wsum;
  rule.refresh_log_weights();
  return rule;
}

// Pseudo-adaptive recentring: nodes move to mode + curvature^{-1/2} * xi and
// weights pick up the importance ratio against N(mode, 1/curvature), so the
// rule still integrates exactly against the N(0,1) reference.  mode = 0,
// curvature = 1 returns the input rule unchanged.
inline QuadratureRule adapt_rule(const QuadratureRule& rule, double mode,
                                 double curvature) {
  if (!(curvature > 0.0) || !std::isfinite(curvature))
    throw BadCurvature("adapt_rule: curvature must be positive and finite");
  QuadratureRule out;
  out.kind = QuadKind::PseudoAdaptiveGH;
  int n = rule.size();
  out.nodes.resize(n);
  out.weights.resize(n);
  double s = 1.0 / std::sqrt(curvature);
  for (int i = 0; i < n; ++i) {
    double xi = rule.nodes[i];
    double b = mode + s * xi;
    out.nodes[i] = b;
    // w * s * exp(xi^2/2 - b^2/2)
    out.weights[i] = rule.weights[i] * s * std::exp(0.5 * (xi * xi - b * b));
  }
  out.refresh_log_weights();
  return out;
}

// E[f(X)] for X ~ N(0,1) under any rule in expectation form.
inline double quad_expectation(const QuadratureRule& rule,
                               const std::function<double(double)>& f) {
  double s = 0.0;
  for (int i = 0; i < rule.size(); ++i) s += rule.weights[i] * f(rule.nodes[i]);
  return s;
}

// integral of g over the real line: divide out the N(0,1) reference.
inline double quad_density_integral(const QuadratureRule& rule,
                                    const std::function<double(double)>& g) {
  double s = 0.0;
  const double c = std::sqrt(2.0 * M_PI);
  for (int i = 0; i < rule.size(); ++i) {
    double x = rule.nodes[i];
    s += rule.weights[i] * g(x) * c * std::exp(0.5 * x * x);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Monte Carlo over correlated Gaussian effects
// ---------------------------------------------------------------------------

struct MCSampler {
  int n_points = 300;
  std::uint64_t seed = 0;
  bool antithetic = false;

  Rng stream(std::uint64_t purpose, std::uint64_t index) const {
    return Rng(seed, purpose, index);
  }
};

struct MCEstimate {
  double estimate = 0.0;
  double mc_se = 0.0;
};

inline Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("covariance matrix is not positive definite");
  return llt.matrixL();
}

// Mean of f over n_points draws from N(0, cov).  Never regularizes: a
// non-PD covariance is the caller's problem to fix.
inline MCEstimate mc_gaussian(const MCSampler& sampler, const Eigen::MatrixXd& cov,
                              const std::function<double(const Eigen::VectorXd&)>& f) {
  const Eigen::MatrixXd L = cholesky_lower(cov);
  const int d = static_cast<int>(cov.rows());
  Rng rng = sampler.stream(streams::kGeneric, 0);
  double sum = 0.0, sumsq = 0.0;
  Eigen::VectorXd z(d), x(d);
  const int n = sampler.n_points;
  for (int i = 0; i < n; ++i) {
    if (sampler.antithetic && (i % 2 == 1)) {
      z = -z;
    } else {
      for (int k = 0; k < d; ++k) z[k] = rng.normal();
    }
    x.noalias() = L * z;
    double v = f(x);
    sum += v;
    sumsq += v * v;
  }
  MCEstimate out;
  out.estimate = sum / n;
  double var = (sumsq - n * out.estimate * out.estimate) / std::max(1, n - 1);
  out.mc_se = std::sqrt(std::max(0.0, var) / n);
  return out;
}

}  // namespace surroval
