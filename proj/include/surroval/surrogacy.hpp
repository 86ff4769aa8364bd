// Surrogacy measures from a fitted joint model.
//
// Individual level: Kendall's tau, by Monte-Carlo integration over the
// random effects; under mediation the concordance probability needs an
// extra double integral over the two surrogate times, taken here over
// quantile space so the full mass of S is covered, with the time ordering
// of the final endpoints reduced to a closed form per (s1, s2).
//
// Trial level: R^2_trial with a delta-method standard error, the surrogate
// threshold effect, and the counterfactual survival functions S^{zz'}(t)
// feeding NIE/NDE/TTE/PTE curves.  All four S^{zz'} evaluations share one
// draw matrix (common random numbers), which makes TTE = NIE + NDE an
// algebraic identity and kills the z/z'-independent noise.
//
// Uncertainty: parametric bootstrap on the working scale, one reproducible
// stream per replicate.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "surroval/common.hpp"
#include "surroval/fit_tte.hpp"
#include "surroval/integrate.hpp"
#include "surroval/model_long.hpp"
#include "surroval/model_tte.hpp"
#include "surroval/threading.hpp"

namespace surroval {

// ---------------------------------------------------------------------------
// Kendall's tau
// ---------------------------------------------------------------------------

struct KendallTau {
  double tau = 0.0;
  double mc_se = 0.0;
};

// tau = 4 E[P(S1 > S2 | xi) P(T1 > T2 | xi)] - 1 for the model without a
// direct surrogate effect; both probabilities are logistic in the random
// effects.
inline KendallTau kendall_tau_no_mediation(const Model1Params& p,
                                           const MCSampler& mc) {
  if (p.gamma_fn_coef.size() > 0 && p.gamma_fn_coef.cwiseAbs().maxCoeff() > 0.0)
    throw MediationPresent(
        "the model carries a direct surrogate effect; use the mediation form "
        "of Kendall's tau");
  double sd_t = std::sqrt(p.theta2);
  double sd_u = std::sqrt(p.gamma2);
  Rng rng = mc.stream(streams::kKendall, 0);
  double sum = 0.0, sumsq = 0.0;
  const int n = mc.n_points;
  for (int i = 0; i < n; ++i) {
    double w1 = sd_t * rng.normal(), u1 = sd_u * rng.normal();
    double w2 = sd_t * rng.normal(), u2 = sd_u * rng.normal();
    double ps = 1.0 / (1.0 + std::exp((w1 + u1) - (w2 + u2)));
    double pt = 1.0 / (1.0 + std::exp(p.zeta * (w1 - w2) + p.alpha * (u1 - u2)));
    double v = 4.0 * ps * pt - 1.0;
    sum += v;
    sumsq += v * v;
  }
  KendallTau out;
  out.tau = sum / n;
  double var = (sumsq - n * out.tau * out.tau) / std::max(1, n - 1);
  out.mc_se = std::sqrt(std::max(0.0, var) / n);
  return out;
}

// General tau under mediation: Monte Carlo over the random effects of the
// two subjects, double Gauss-Legendre over the quantiles of (S2, S1 | S1 >
// S2), and a closed form for P(T1 > T2 | s1, s2) exploiting that both
// hazards are proportional to the same baseline with switch points at s1
// and s2.
inline KendallTau kendall_tau_mediation(const Model1Params& p,
                                        const Model1Bases& bases,
                                        const MCSampler& mc, int n_s_nodes = 64) {
  CumulativeHazardGrid lam_s(bases.basis_s, p.coef_s);
  CumulativeHazardGrid lam_t(bases.basis_t, p.coef_t);
  GaussLegendre gl = gauss_legendre_01(n_s_nodes);
  double sd_t = std::sqrt(p.theta2);
  double sd_u = std::sqrt(p.gamma2);
  Rng rng = mc.stream(streams::kKendall, 1);

  auto gamma_at = [&](double s) { return gamma_fn_value(p, bases, s); };

  // P(T1 > T2 | s1, s2, a_t1, a_t2): both hazards are proportional to the
  // same baseline with switch points at s1, s2, so each segment between
  // breakpoints contributes k2/(k1+k2) times the joint-survival mass
  // crossed on that segment.
  auto p_t1_gt_t2 = [&](double s1, double s2, double at1, double at2) {
    double g1 = gamma_at(s1), g2 = gamma_at(s2);
    double bstart[3] = {0.0, std::min(s1, s2), std::max(s1, s2)};
    double H = 0.0;  // H1 + H2 at the segment start
    double prob = 0.0;
    double lam_prev = 0.0;
    for (int seg = 0; seg < 3; ++seg) {
      // subject i's switch is active on a segment that starts at or past s_i
      double k1 = std::exp(at1 + (seg > 0 && s1 <= bstart[seg] ? g1 : 0.0));
      double k2 = std::exp(at2 + (seg > 0 && s2 <= bstart[seg] ? g2 : 0.0));
      double e_start = std::exp(-H);
      double e_end;
      if (seg < 2) {
        double lam_next = lam_t.cumulative(bstart[seg + 1]);
        H += (k1 + k2) * (lam_next - lam_prev);
        lam_prev = lam_next;
        e_end = std::exp(-H);
      } else {
        e_end = 0.0;  // Lambda0T grows without bound under extrapolation
      }
      prob += k2 / (k1 + k2) * (e_start - e_end);
    }
    return prob;
  };

  double sum = 0.0, sumsq = 0.0;
  const int n = mc.n_points;
  for (int i = 0; i < n; ++i) {
    double w1 = sd_t * rng.normal(), u1 = sd_u * rng.normal();
    double w2 = sd_t * rng.normal(), u2 = sd_u * rng.normal();
    double as1 = w1 + u1, as2 = w2 + u2;
    double at1 = p.zeta * w1 + p.alpha * u1, at2 = p.zeta * w2 + p.alpha * u2;
    // P(S1 > S2, T1 > T2 | xi) over the quantiles of S2 and of S1 above s2
    double prob = 0.0;
    for (int a = 0; a < n_s_nodes; ++a) {
      double q2 = gl.nodes[static_cast<std::size_t>(a)];
      double s2 = lam_s.invert(-std::log1p(-q2) * std::exp(-as2));
      double f1_at_s2 = -std::expm1(-lam_s.cumulative(s2) * std::exp(as1));
      double tail1 = 1.0 - f1_at_s2;  // P(S1 > s2)
      if (tail1 <= 0.0) continue;
      double inner = 0.0;
      for (int c = 0; c < n_s_nodes; ++c) {
        double q1 = f1_at_s2 + gl.nodes[static_cast<std::size_t>(c)] * tail1;
        double s1 = lam_s.invert(-std::log1p(-q1) * std::exp(-as1));
        inner += gl.weights[static_cast<std::size_t>(c)] *
                 p_t1_gt_t2(s1, s2, at1, at2);
      }
      prob += gl.weights[static_cast<std::size_t>(a)] * tail1 * inner;
    }
    double v = 4.0 * prob - 1.0;
    sum += v;
    sumsq += v * v;
  }
  KendallTau out;
  out.tau = sum / n;
  double var = (sumsq - n * out.tau * out.tau) / std::max(1, n - 1);
  out.mc_se = std::sqrt(std::max(0.0, var) / n);
  return out;
}

// ---------------------------------------------------------------------------
// Trial-level measures
// ---------------------------------------------------------------------------

inline std::string strength_label(double r2) {
  // printed rule: <= 0.49 'Low'; ]0.49 - 0.72[ 'Medium'; >= 0.72 'High'
  if (r2 <= 0.49) return "Low";
  if (r2 < 0.72) return "Medium";
  return "High";
}

struct R2Result {
  double r2 = 0.0;          // raw ratio, may exceed 1 by estimation noise
  double r2_clamped = 0.0;  // reported value, in [0, 1]
  double se_delta = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // normal CI, may exceed [0, 1]
  std::string strength;
};

// R^2_trial = sigma_ST^2 / (sigma2_S sigma2_T); vcov_sigma is the
// delta-method covariance of (sigma2_S, sigma2_T, sigma_ST).
inline R2Result r2_trial(const Eigen::Matrix2d& sigma_nu,
                         const Eigen::Matrix3d& vcov_sigma,
                         double level = 0.05) {
  double s1 = sigma_nu(0, 0), s2 = sigma_nu(1, 1), s12 = sigma_nu(0, 1);
  if (!(s1 > 0.0) || !(s2 > 0.0))
    throw NotPositiveDefinite("sigma_nu has a nonpositive diagonal");
  R2Result out;
  out.r2 = s12 * s12 / (s1 * s2);
  out.r2_clamped = std::min(1.0, std::max(0.0, out.r2));
  Eigen::Vector3d grad(-out.r2 / s1, -out.r2 / s2, 2.0 * s12 / (s1 * s2));
  out.se_delta = std::sqrt(std::max(0.0, grad.dot(vcov_sigma * grad)));
  double z = norm_quantile(1.0 - level / 2.0);
  out.ci_lo = out.r2 - z * out.se_delta;
  out.ci_hi = out.r2 + z * out.se_delta;
  out.strength = strength_label(out.r2_clamped);
  return out;
}

enum class SteDirection { Lower, Upper };

struct SteOptions {
  double level = 0.05;
  SteDirection direction = SteDirection::Upper;
  bool include_var_beta_zt = true;
};

// Surrogate threshold effect: the nu_S at which the chosen bound of the
// prediction interval for beta_zt + nu_T given nu_S crosses zero.  The
// conditional mean is linear and the prediction variance constant, so
// isolating the square root and squaring gives a quadratic whose admissible
// root is returned; with no dependence (sigma_ST = 0) there is no threshold.
inline std::optional<double> ste_root(double beta_zt, const Eigen::Matrix2d& sigma_nu,
                                      double var_beta_zt, const SteOptions& opt = {}) {
  double s1 = sigma_nu(0, 0), s2 = sigma_nu(1, 1), s12 = sigma_nu(0, 1);
  if (!(s1 > 0.0)) throw NotPositiveDefinite("sigma2_S must be positive");
  double slope = s12 / s1;
  if (std::fabs(slope) < 1e-12) return std::nullopt;  // flat conditional mean
  double v = std::max(0.0, s2 - s12 * s12 / s1);
  if (opt.include_var_beta_zt) v += std::max(0.0, var_beta_zt);
  double z = norm_quantile(1.0 - opt.level / 2.0);
  // (beta_zt + slope nu)^2 = z^2 v  ->  beta_zt + slope nu = -+ z sqrt(v)
  double root_minus = (-z * std::sqrt(v) - beta_zt) / slope;  // upper bound = 0
  double root_plus = (z * std::sqrt(v) - beta_zt) / slope;    // lower bound = 0
  return opt.direction == SteDirection::Upper ? root_minus : root_plus;
}

// ---------------------------------------------------------------------------
// Counterfactual survival and the mediation curves (Model 1)
// ---------------------------------------------------------------------------

struct MediationOptions {
  int n_mc = 500;       // pte.nmc
  int n_s_nodes = 64;   // Gauss-Legendre nodes over the surrogate time
  double tte_floor = 1e-3;
  std::uint64_t seed = 0;
};

struct MediationBand {
  std::vector<double> lo, hi;
};

struct MediationCurves {
  std::vector<double> times;
  std::vector<double> s11, s10, s00;
  std::vector<double> nie, nde, tte, pte;
  std::vector<bool> tte_unstable;
  std::optional<MediationBand> nie_band, nde_band, tte_band, pte_band;
};

class Model1Mediation {
 public:
  Model1Mediation(const Model1Params& p, const Model1Bases& bases,
                  const std::vector<Eigen::VectorXd>& covariate_rows,
                  MediationOptions opt)
      : p_(p),
        bases_(bases),
        opt_(opt),
        lam_s_(bases.basis_s, p.coef_s),
        lam_t_(bases.basis_t, p.coef_t),
        gl_(gauss_legendre_01(opt.n_s_nodes)) {
    if (covariate_rows.empty())
      x_rows_.push_back(Eigen::VectorXd::Zero(p.beta_s_cov.size()));
    else
      x_rows_ = covariate_rows;
    // one draw matrix, shared by every (z, z', t): common random numbers
    Rng rng(opt_.seed, streams::kPte, 0);
    draws_.resize(static_cast<std::size_t>(opt_.n_mc));
    Eigen::Matrix2d L = cholesky_lower(p_.sigma_nu);
    double sd_t = std::sqrt(p_.theta2), sd_u = std::sqrt(p_.gamma2);
    for (auto& d : draws_) {
      double n0 = rng.normal(), n1 = rng.normal(), n2 = rng.normal(),
             n3 = rng.normal();
      d.omega = sd_t * n0;
      d.u = sd_u * n1;
      d.nu_s = L(0, 0) * n2;
      d.nu_t = L(1, 0) * n2 + L(1, 1) * n3;
    }
  }

  // S^{zz'}(t): expectation over the random effects and the observed
  // covariate rows of  integral_0^t S_T(t|s, z) f_S(s|z') ds
  //                    + P(S > t | z') S_T(t | no switch, z).
  double counterfactual_survival(int z, int z_prime, double t) const {
    if (t <= 0.0) return 1.0;
    // surrogate-time grid on (0, t], shared across draws
    const int ns = opt_.n_s_nodes;
    std::vector<double> s_node(static_cast<std::size_t>(ns)),
        w_node(static_cast<std::size_t>(ns)), lamS_s(static_cast<std::size_t>(ns)),
        LamS_s(static_cast<std::size_t>(ns)), LamT_s(static_cast<std::size_t>(ns)),
        eg_s(static_cast<std::size_t>(ns));
    for (int g = 0; g < ns; ++g) {
      double s = gl_.nodes[static_cast<std::size_t>(g)] * t;
      s_node[static_cast<std::size_t>(g)] = s;
      w_node[static_cast<std::size_t>(g)] = gl_.weights[static_cast<std::size_t>(g)] * t;
      lamS_s[static_cast<std::size_t>(g)] = lam_s_.hazard(s);
      LamS_s[static_cast<std::size_t>(g)] = lam_s_.cumulative(s);
      LamT_s[static_cast<std::size_t>(g)] = lam_t_.cumulative(s);
      eg_s[static_cast<std::size_t>(g)] = std::exp(gamma_fn_value(p_, bases_, s));
    }
    double LamS_t = lam_s_.cumulative(t);
    double LamT_t = lam_t_.cumulative(t);

    double acc = 0.0;
    for (const auto& x : x_rows_) {
      double bsx = x.size() > 0 ? p_.beta_s_cov.dot(x) : 0.0;
      double btx = x.size() > 0 ? p_.beta_t_cov.dot(x) : 0.0;
      for (const auto& d : draws_) {
        double as = d.omega + d.u + z_prime * (d.nu_s + p_.beta_zs) + bsx;
        double at = p_.zeta * d.omega + p_.alpha * d.u +
                    z * (d.nu_t + p_.beta_zt) + btx;
        double eas = std::exp(as), eat = std::exp(at);
        double inner = 0.0;
        for (int g = 0; g < ns; ++g) {
          std::size_t gi = static_cast<std::size_t>(g);
          double f_s = lamS_s[gi] * eas * std::exp(-LamS_s[gi] * eas);
          double surv_t =
              std::exp(-eat * (LamT_s[gi] + eg_s[gi] * (LamT_t - LamT_s[gi])));
          inner += w_node[gi] * f_s * surv_t;
        }
        inner += std::exp(-LamS_t * eas) * std::exp(-eat * LamT_t);
        acc += inner;
      }
    }
    return acc / (static_cast<double>(x_rows_.size()) * draws_.size());
  }

  MediationCurves curves(const std::vector<double>& times) const {
    MediationCurves out;
    out.times = times;
    const std::size_t nt = times.size();
    out.s11.resize(nt);
    out.s10.resize(nt);
    out.s00.resize(nt);
    out.nie.resize(nt);
    out.nde.resize(nt);
    out.tte.resize(nt);
    out.pte.resize(nt);
    out.tte_unstable.resize(nt);
    parallel_for(nt, [&](std::size_t i) {
      double t = times[i];
      double s11 = counterfactual_survival(1, 1, t);
      double s10 = counterfactual_survival(1, 0, t);
      double s00 = counterfactual_survival(0, 0, t);
      out.s11[i] = s11;
      out.s10[i] = s10;
      out.s00[i] = s00;
      out.nie[i] = s11 - s10;
      out.nde[i] = s10 - s00;
      out.tte[i] = out.nie[i] + out.nde[i];
      out.pte[i] = out.tte[i] != 0.0 ? out.nie[i] / out.tte[i] : 0.0;
      out.tte_unstable[i] = std::fabs(out.tte[i]) < opt_.tte_floor;
    });
    return out;
  }

 private:
  struct Draw {
    double omega, u, nu_s, nu_t;
  };
  Model1Params p_;
  Model1Bases bases_;
  MediationOptions opt_;
  CumulativeHazardGrid lam_s_, lam_t_;
  GaussLegendre gl_;
  std::vector<Eigen::VectorXd> x_rows_;
  std::vector<Draw> draws_;
};

// ---------------------------------------------------------------------------
// Counterfactual survival and curves (Model 2)
// ---------------------------------------------------------------------------

struct Model2CovariateRow {
  Eigen::VectorXd x_meas;  // marker covariates (held constant)
  Eigen::VectorXd x_surv;
};

class Model2Mediation {
 public:
  Model2Mediation(const Model2Params& p, const Model2Config& cfg,
                  std::optional<SplineBasis> hazard_basis,
                  std::vector<Model2CovariateRow> rows, MediationOptions opt)
      : p_(p), cfg_(cfg), basis_t_(std::move(hazard_basis)), opt_(opt) {
    require_mediation_compatible(cfg_.link);
    if (rows.empty())
      rows.push_back({Eigen::VectorXd::Zero(p.beta_m_cov.size()),
                      Eigen::VectorXd::Zero(p.beta_t_cov.size())});
    rows_ = std::move(rows);
    if (cfg_.hazard == HazardKind::Splines)
      lam_t_ = CumulativeHazardGrid(*basis_t_, p_.coef_t);
    Rng rng(opt_.seed, streams::kPte, 1);
    Eigen::MatrixXd Ld = cholesky_lower(p_.D);
    std::optional<Eigen::Matrix2d> Lnu;
    if (cfg_.use_centers) Lnu = cholesky_lower(p_.sigma_nu);
    draws_.resize(static_cast<std::size_t>(opt_.n_mc));
    for (auto& d : draws_) {
      Eigen::VectorXd zv(p_.random_dim());
      for (int k = 0; k < p_.random_dim(); ++k) zv[k] = rng.normal();
      d.omega = Ld * zv;
      double z1 = rng.normal(), z2 = rng.normal();
      if (cfg_.use_centers) {
        d.nu_m = (*Lnu)(0, 0) * z1;
        d.nu_t = (*Lnu)(1, 0) * z1 + (*Lnu)(1, 1) * z2;
      } else {
        d.nu_m = d.nu_t = 0.0;
      }
    }
    gl_ = gauss_legendre_01(24);
  }

  // S^{zz'}(t) = E[ exp(-int_0^t lambda0 e^{(beta_zt+nuT) z + bT'x
  //                    + eta' h(M^{z'})(v)} dv) ]
  double counterfactual_survival(int z, int z_prime, double t) const {
    if (t <= 0.0) return 1.0;
    const std::size_t ng = gl_.nodes.size();
    std::vector<double> v_node(ng), w_lam0(ng);
    for (std::size_t g = 0; g < ng; ++g) {
      double v = gl_.nodes[g] * t;
      v_node[g] = v;
      double l0 = cfg_.hazard == HazardKind::Splines
                      ? lam_t_.hazard(v)
                      : p_.weibull_shape / p_.weibull_scale *
                            std::pow(v / p_.weibull_scale, p_.weibull_shape - 1.0);
      w_lam0[g] = gl_.weights[g] * t * l0;
    }
    double acc = 0.0;
    for (const auto& row : rows_) {
      double btx = row.x_surv.size() > 0 ? p_.beta_t_cov.dot(row.x_surv) : 0.0;
      for (const auto& d : draws_) {
        double c = (p_.beta_zt + d.nu_t) * z + btx;
        double Lam = 0.0;
        for (std::size_t g = 0; g < ng; ++g) {
          Eigen::VectorXd h = link_value(p_, cfg_.link, v_node[g], z_prime,
                                         row.x_meas, d.omega, d.nu_m);
          Lam += w_lam0[g] * std::exp(c + p_.eta.dot(h));
        }
        acc += std::exp(-Lam);
      }
    }
    return acc / (static_cast<double>(rows_.size()) * draws_.size());
  }

  MediationCurves curves(const std::vector<double>& times) const {
    MediationCurves out;
    out.times = times;
    const std::size_t nt = times.size();
    out.s11.resize(nt);
    out.s10.resize(nt);
    out.s00.resize(nt);
    out.nie.resize(nt);
    out.nde.resize(nt);
    out.tte.resize(nt);
    out.pte.resize(nt);
    out.tte_unstable.resize(nt);
    parallel_for(nt, [&](std::size_t i) {
      double t = times[i];
      double s11 = counterfactual_survival(1, 1, t);
      double s10 = counterfactual_survival(1, 0, t);
      double s00 = counterfactual_survival(0, 0, t);
      out.s11[i] = s11;
      out.s10[i] = s10;
      out.s00[i] = s00;
      out.nie[i] = s11 - s10;
      out.nde[i] = s10 - s00;
      out.tte[i] = out.nie[i] + out.nde[i];
      out.pte[i] = out.tte[i] != 0.0 ? out.nie[i] / out.tte[i] : 0.0;
      out.tte_unstable[i] = std::fabs(out.tte[i]) < opt_.tte_floor;
    });
    return out;
  }

 private:
  struct Draw {
    Eigen::VectorXd omega;
    double nu_m = 0.0, nu_t = 0.0;
  };
  Model2Params p_;
  Model2Config cfg_;
  std::optional<SplineBasis> basis_t_;
  MediationOptions opt_;
  CumulativeHazardGrid lam_t_;
  std::vector<Model2CovariateRow> rows_;
  std::vector<Draw> draws_;
  GaussLegendre gl_;
};

// ---------------------------------------------------------------------------
// Parametric bootstrap
// ---------------------------------------------------------------------------

struct BootstrapOptions {
  int n_boot = 1000;
  std::uint64_t seed = 0;
  int boot_nmc = 500;   // per-replicate Monte-Carlo size
  double level = 0.05;
};

struct BootstrapCI {
  double lo = 0.0, hi = 0.0;
  double median = 0.0;
  int n_rejected = 0;
};

// Draws working-scale parameter vectors from N(what, vcov); the PSD square
// root tolerates the near-singular covariances that penalized fits produce.
class WorkingSampler {
 public:
  WorkingSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& vcov)
      : mean_(std::move(mean)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(vcov);
    if (es.info() != Eigen::Success)
      throw SingularHessian("cannot factor the parameter covariance");
    Eigen::VectorXd rooted = es.eigenvalues();
    for (int i = 0; i < rooted.size(); ++i)
      rooted[i] = std::sqrt(std::max(0.0, rooted[i]));
    sqrt_ = es.eigenvectors() * rooted.asDiagonal();
  }

  Eigen::VectorXd draw(Rng& rng) const {
    Eigen::VectorXd z(mean_.size());
    for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return mean_ + sqrt_ * z;
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd sqrt_;
};

// Generic percentile bootstrap over a scalar recomputed per parameter draw.
// Replicates whose recomputation throws are rejected and redrawn once each;
// more than 50% rejections aborts.
inline BootstrapCI parametric_bootstrap_scalar(
    const WorkingSampler& sampler, const BootstrapOptions& opt,
    const std::function<double(const Eigen::VectorXd&, std::uint64_t)>& recompute) {
  std::vector<double> values(static_cast<std::size_t>(opt.n_boot));
  std::vector<int> rejected(static_cast<std::size_t>(opt.n_boot), 0);
  parallel_for(static_cast<std::size_t>(opt.n_boot), [&](std::size_t b) {
    Rng rng(opt.seed, streams::kBootstrap, b);
    for (int attempt = 0;; ++attempt) {
      Eigen::VectorXd w = sampler.draw(rng);
      try {
        double v = recompute(w, b);
        if (std::isfinite(v)) {
          values[b] = v;
          return;
        }
      } catch (const Error&) {
      }
      ++rejected[b];
      if (attempt >= 1) {
        values[b] = std::numeric_limits<double>::quiet_NaN();
        return;
      }
    }
  });
  std::vector<double> clean;
  int n_rej = 0;
  for (std::size_t b = 0; b < values.size(); ++b) {
    n_rej += rejected[b];
    if (std::isfinite(values[b])) clean.push_back(values[b]);
  }
  if (clean.size() * 2 < values.size())
    throw TooManyRejections("more than half of the bootstrap replicates failed");
  BootstrapCI ci;
  ci.n_rejected = n_rej;
  ci.lo = quantile_type7(clean, opt.level / 2.0);
  ci.hi = quantile_type7(clean, 1.0 - opt.level / 2.0);
  ci.median = quantile_type7(clean, 0.5);
  return ci;
}

// Percentile bands for the mediation curves, one full curve per replicate.
struct CurveBootstrap {
  MediationBand nie, nde, tte, pte;
  int n_rejected = 0;
};

inline CurveBootstrap parametric_bootstrap_curves(
    const WorkingSampler& sampler, const BootstrapOptions& opt,
    std::size_t n_times,
    const std::function<MediationCurves(const Eigen::VectorXd&, std::uint64_t)>&
        recompute) {
  std::vector<MediationCurves> reps(static_cast<std::size_t>(opt.n_boot));
  std::vector<int> ok(static_cast<std::size_t>(opt.n_boot), 0);
  parallel_for(static_cast<std::size_t>(opt.n_boot), [&](std::size_t b) {
    Rng rng(opt.seed, streams::kBootstrap, b);
    for (int attempt = 0; attempt < 2; ++attempt) {
      Eigen::VectorXd w = sampler.draw(rng);
      try {
        reps[b] = recompute(w, b);
        ok[b] = 1;
        return;
      } catch (const Error&) {
      }
    }
  });
  int n_ok = 0;
  for (int v : ok) n_ok += v;
  if (n_ok * 2 < opt.n_boot)
    throw TooManyRejections("more than half of the bootstrap replicates failed");
  CurveBootstrap out;
  out.n_rejected = opt.n_boot - n_ok;
  auto band = [&](auto accessor) {
    MediationBand bd;
    bd.lo.resize(n_times);
    bd.hi.resize(n_times);
    for (std::size_t i = 0; i < n_times; ++i) {
      std::vector<double> v;
      v.reserve(static_cast<std::size_t>(n_ok));
      for (std::size_t b = 0; b < reps.size(); ++b)
        if (ok[b]) v.push_back(accessor(reps[b], i));
      bd.lo[i] = quantile_type7(v, opt.level / 2.0);
      bd.hi[i] = quantile_type7(v, 1.0 - opt.level / 2.0);
    }
    return bd;
  };
  out.nie = band([](const MediationCurves& c, std::size_t i) { return c.nie[i]; });
  out.nde = band([](const MediationCurves& c, std::size_t i) { return c.nde[i]; });
  out.tte = band([](const MediationCurves& c, std::size_t i) { return c.tte[i]; });
  out.pte = band([](const MediationCurves& c, std::size_t i) { return c.pte[i]; });
  return out;
}

}  // namespace surroval
