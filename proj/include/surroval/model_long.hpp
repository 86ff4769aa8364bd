// Joint model for a longitudinal biomarker surrogate and a time-to-event
// final endpoint:
//
//   Mtilde(t) = (beta + omega)' f(t) + bM' x(t) + (beta_zm + nuM) z
//               + beta_zm_time z t + eps,   eps ~ N(0, sigma_eps2)
//   lambda(t) = lambda0(t) exp((beta_zt + nuT) z + bT' x + eta' h(M)(t))
//
// with f(t) = (1, t), omega ~ N(0, D) per subject and (nuM, nuT) ~
// N(0, sigma_nu) per center when the data carry centers.  The link h is the
// current level, the current slope, or the shared random effects.
//
// The cumulative hazard under the time-varying links has no closed form and
// is integrated by Gauss-Legendre inside each spline inter-knot segment
// (geometric subdivision for the Weibull baseline).  Subject-level
// integration over omega uses tensor Gauss-Hermite, optionally recentred
// per subject on the closed-form posterior of the linear mixed submodel
// (pseudo-adaptive); everything downstream of the conditional contribution
// is carried in log space.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "surroval/common.hpp"
#include "surroval/data.hpp"
#include "surroval/integrate.hpp"
#include "surroval/splines.hpp"
#include "surroval/threading.hpp"

namespace surroval {

enum class LinkKind { CurrentLevel, CurrentSlope, SharedRandomEffects };
enum class HazardKind { Splines, Weibull };

struct Model2Params {
  Eigen::VectorXd beta_fixed = Eigen::VectorXd::Zero(2);  // (intercept, slope)
  Eigen::VectorXd beta_m_cov;
  double beta_zm = 0.0;
  double beta_zm_time = 0.0;  // treatment x time interaction
  double sigma_eps2 = 1.0;
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(2, 2);  // 1x1 or 2x2
  Eigen::Matrix2d sigma_nu = Eigen::Matrix2d::Identity();
  Eigen::VectorXd coef_t;  // spline hazard coefficients
  double weibull_shape = 1.0;
  double weibull_scale = 1.0;
  double beta_zt = 0.0;
  Eigen::VectorXd beta_t_cov;
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(1);

  int random_dim() const { return static_cast<int>(D.rows()); }

  void validate() const {
    if (!(sigma_eps2 > 0.0)) throw Error("sigma_eps2 must be positive");
    if (D.rows() < 1 || D.rows() > 2 || D.rows() != D.cols())
      throw Error("D must be 1x1 (random intercept) or 2x2 (intercept+slope)");
  }
};

struct Model2Config {
  LinkKind link = LinkKind::CurrentLevel;
  HazardKind hazard = HazardKind::Splines;
  bool use_centers = false;
  bool pseudo_adaptive = true;
  double kappa_t = 0.0;
  int gl_points = 15;  // Gauss-Legendre nodes per hazard segment
};

// Error-free marker level and slope at time t.  x holds the measurement
// covariates in effect at t; nu_m is the center-level treatment effect on
// the marker (0 without centers).
inline std::pair<double, double> marker_trajectory(const Model2Params& p, double t,
                                                   int z, const Eigen::VectorXd& x,
                                                   const Eigen::VectorXd& omega,
                                                   double nu_m = 0.0) {
  double om0 = omega.size() > 0 ? omega[0] : 0.0;
  double om1 = omega.size() > 1 ? omega[1] : 0.0;
  double bmx = x.size() > 0 ? p.beta_m_cov.dot(x) : 0.0;
  double level = (p.beta_fixed[0] + om0) + (p.beta_fixed[1] + om1) * t + bmx +
                 (p.beta_zm + nu_m) * z + p.beta_zm_time * z * t;
  double slope = (p.beta_fixed[1] + om1) + p.beta_zm_time * z;
  return {level, slope};
}

// h(M)(t) per link kind: level, slope, or the random effects themselves.
inline Eigen::VectorXd link_value(const Model2Params& p, LinkKind link, double t,
                                  int z, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& omega, double nu_m = 0.0) {
  Eigen::VectorXd out;
  switch (link) {
    case LinkKind::CurrentLevel: {
      out.resize(1);
      out[0] = marker_trajectory(p, t, z, x, omega, nu_m).first;
      break;
    }
    case LinkKind::CurrentSlope: {
      out.resize(1);
      out[0] = marker_trajectory(p, t, z, x, omega, nu_m).second;
      break;
    }
    case LinkKind::SharedRandomEffects:
      out = omega;
      break;
  }
  return out;
}

// Throws when a link cannot be used for mediation analysis: the shared
// random effects carry no treatment pathway by construction.
inline void require_mediation_compatible(LinkKind link) {
  if (link == LinkKind::SharedRandomEffects)
    throw MediationLinkError(
        "the shared random-effects link has no treatment-to-marker pathway and "
        "cannot be used in a mediation analysis");
}

// ---------------------------------------------------------------------------
// Likelihood engine
// ---------------------------------------------------------------------------

class Model2Likelihood {
 public:
  Model2Likelihood(const LongitudinalDataset& ds, Model2Config cfg,
                   std::optional<SplineBasis> hazard_basis, QuadratureRule gh,
                   MCSampler mc)
      : cfg_(cfg), basis_t_(std::move(hazard_basis)), gh_(std::move(gh)), mc_(mc) {
    if (cfg_.hazard == HazardKind::Splines && !basis_t_)
      throw Error("spline hazard requested without a basis");
    n_centers_ = cfg_.use_centers ? ds.n_centers : 1;
    const std::size_t n = ds.survival.size();
    subj_.resize(n);
    for (const auto& row : ds.survival) {
      Subject& s = subj_[static_cast<std::size_t>(row.id - 1)];
      s.time_t = row.time_t;
      s.status_t = row.status_t;
      s.z = row.trt;
      s.center = cfg_.use_centers ? row.center_id : 1;
      s.x_surv.resize(static_cast<Eigen::Index>(row.covariates.size()));
      for (std::size_t c = 0; c < row.covariates.size(); ++c)
        s.x_surv[static_cast<Eigen::Index>(c)] = row.covariates[c];
    }
    for (const auto& m : ds.measurements) {
      Subject& s = subj_[static_cast<std::size_t>(m.id - 1)];
      s.t_meas.push_back(m.timevar);
      s.value.push_back(m.value);
      Eigen::VectorXd x(m.covariates.size());
      for (std::size_t c = 0; c < m.covariates.size(); ++c)
        x[static_cast<Eigen::Index>(c)] = m.covariates[c];
      s.x_meas.push_back(std::move(x));
    }
    // quadrature grid of the cumulative hazard, fixed per subject
    GaussLegendre gl = gauss_legendre_01(cfg_.gl_points);
    for (auto& s : subj_) {
      std::vector<std::pair<double, double>> segments;  // [a,b] covering (0, t*]
      if (cfg_.hazard == HazardKind::Splines) {
        const auto& knots = basis_t_->knots();
        double a = 0.0;
        for (std::size_t k = 1; k < knots.size() && a < s.time_t; ++k) {
          double b = std::min(knots[k], s.time_t);
          if (b > a) segments.emplace_back(a, b);
          a = knots[k];
        }
        if (a < s.time_t) segments.emplace_back(a, s.time_t);  // extrapolated tail
      } else {
        // geometric subdivision toward 0 tames the Weibull t^{shape-1} end
        double b = s.time_t;
        for (int k = 0; k < 8; ++k) {
          double a = k == 7 ? 0.0 : b / 2.0;
          segments.emplace_back(a, b);
          b = a;
        }
        std::reverse(segments.begin(), segments.end());
      }
      for (auto [a, b] : segments) {
        for (int q = 0; q < cfg_.gl_points; ++q) {
          double v = a + gl.nodes[static_cast<std::size_t>(q)] * (b - a);
          s.gl_t.push_back(v);
          s.gl_w.push_back(gl.weights[static_cast<std::size_t>(q)] * (b - a));
          if (cfg_.hazard == HazardKind::Splines)
            s.gl_lam0_row.push_back(eval_hazard_row(v));
          // covariates in effect at v: last measurement at or before v
          s.gl_x.push_back(meas_covariates_at(s, v));
        }
      }
      if (cfg_.hazard == HazardKind::Splines) {
        s.lam0_row_t = eval_hazard_row(s.time_t);
      }
      s.x_at_t = meas_covariates_at(s, s.time_t);
    }
    center_subjects_.resize(static_cast<std::size_t>(n_centers_));
    for (std::size_t j = 0; j < subj_.size(); ++j)
      center_subjects_[static_cast<std::size_t>(subj_[j].center - 1)].push_back(j);
    if (basis_t_) penalty_t_ = basis_t_->curvature_penalty();
  }

  const std::optional<SplineBasis>& hazard_basis() const { return basis_t_; }
  const Eigen::MatrixXd& penalty_matrix_t() const { return penalty_t_; }
  int n_subjects() const { return static_cast<int>(subj_.size()); }

  // Pseudo-adaptive recentring: per-subject posterior mode/covariance of
  // omega under the linear mixed submodel alone, at preliminary parameter
  // values, frozen for all later evaluations.
  void set_adaptive(const Model2Params& prelim) {
    if (!cfg_.pseudo_adaptive) return;
    const int dim = prelim.random_dim();
    const Eigen::MatrixXd Dinv = prelim.D.inverse();
    for (auto& s : subj_) {
      Eigen::MatrixXd Q = Dinv;
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
      for (std::size_t k = 0; k < s.t_meas.size(); ++k) {
        Eigen::VectorXd f(dim);
        f[0] = 1.0;
        if (dim > 1) f[1] = s.t_meas[k];
        double fixed = marker_trajectory(prelim, s.t_meas[k], s.z, s.x_meas[k],
                                         Eigen::VectorXd::Zero(dim), 0.0)
                           .first;
        double r = s.value[k] - fixed;
        Q += f * f.transpose() / prelim.sigma_eps2;
        rhs += f * r / prelim.sigma_eps2;
      }
      Eigen::LLT<Eigen::MatrixXd> llt(Q);
      s.adapt_mode = llt.solve(rhs);
      Eigen::MatrixXd post_cov = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
      s.adapt_chol = Eigen::LLT<Eigen::MatrixXd>(post_cov).matrixL();
      s.adapt_set = true;
    }
  }

  double penalized(const Model2Params& p) const {
    double pen = 0.0;
    if (cfg_.hazard == HazardKind::Splines)
      pen = cfg_.kappa_t * p.coef_t.dot(penalty_t_ * p.coef_t);
    return unpenalized(p) - pen;
  }

  double unpenalized(const Model2Params& p) const {
    p.validate();
    const int dim = p.random_dim();
    const Eigen::MatrixXd Ld = cholesky_lower(p.D);
    std::optional<Eigen::Matrix2d> Lnu;
    if (cfg_.use_centers) Lnu = cholesky_lower(p.sigma_nu);

    // tensor Gauss-Hermite grid over the random effects
    const int ngh = gh_.size();
    const int n_nodes = dim == 1 ? ngh : ngh * ngh;

    std::vector<double> center_ll(static_cast<std::size_t>(n_centers_), 0.0);
    parallel_for(static_cast<std::size_t>(n_centers_), [&](std::size_t ci) {
      Rng rng = mc_.stream(streams::kTrialMC, ci + 1);
      const int nmc = cfg_.use_centers ? mc_.n_points : 1;
      std::vector<double> draw_ll(static_cast<std::size_t>(nmc));
      std::vector<double> terms(static_cast<std::size_t>(n_nodes));
      for (int m = 0; m < nmc; ++m) {
        double nu_m = 0.0, nu_t = 0.0;
        if (cfg_.use_centers) {
          double z1 = rng.normal(), z2 = rng.normal();
          nu_m = (*Lnu)(0, 0) * z1;
          nu_t = (*Lnu)(1, 0) * z1 + (*Lnu)(1, 1) * z2;
        }
        double acc = 0.0;
        for (std::size_t j : center_subjects_[ci]) {
          const Subject& s = subj_[j];
          for (int node = 0; node < n_nodes; ++node) {
            int i0 = dim == 1 ? node : node / ngh;
            int i1 = dim == 1 ? 0 : node % ngh;
            Eigen::VectorXd zeta(dim);
            zeta[0] = gh_.nodes[static_cast<std::size_t>(i0)];
            if (dim > 1) zeta[1] = gh_.nodes[static_cast<std::size_t>(i1)];
            double lw = gh_.log_weights[static_cast<std::size_t>(i0)] +
                        (dim > 1 ? gh_.log_weights[static_cast<std::size_t>(i1)] : 0.0);
            Eigen::VectorXd omega;
            if (cfg_.pseudo_adaptive && s.adapt_set) {
              omega = s.adapt_mode + s.adapt_chol * zeta;
              lw += log_mvn(omega, p.D, Ld) - log_mvn_shift(omega, s);
            } else {
              omega = Ld * zeta;
            }
            terms[static_cast<std::size_t>(node)] =
                lw + conditional_loglik(p, s, omega, nu_m, nu_t);
          }
          double mx = kNegInf;
          for (int node = 0; node < n_nodes; ++node)
            mx = std::max(mx, terms[static_cast<std::size_t>(node)]);
          double inner;
          if (!std::isfinite(mx)) {
            inner = mx;
          } else {
            double sum = 0.0;
            for (int node = 0; node < n_nodes; ++node)
              sum += std::exp(terms[static_cast<std::size_t>(node)] - mx);
            inner = mx + std::log(sum);
          }
          acc += inner;
        }
        draw_ll[static_cast<std::size_t>(m)] = acc;
      }
      center_ll[ci] = cfg_.use_centers
                          ? log_sum_exp(draw_ll) - std::log(static_cast<double>(nmc))
                          : draw_ll[0];
    });

    double total = 0.0;
    for (double v : center_ll) total += v;
    if (std::isnan(total))
      throw NumericalUnderflow("longitudinal joint likelihood is NaN");
    return total;
  }

  // Conditional on all random effects; public so oracle tests can integrate
  // it independently.
  double conditional_loglik(const Model2Params& p, std::size_t subject_index,
                            const Eigen::VectorXd& omega, double nu_m,
                            double nu_t) const {
    return conditional_loglik(p, subj_.at(subject_index), omega, nu_m, nu_t);
  }

 private:
  struct Subject {
    double time_t = 0.0;
    int status_t = 0;
    int z = 0;
    int center = 1;
    Eigen::VectorXd x_surv;
    std::vector<double> t_meas;
    std::vector<double> value;
    std::vector<Eigen::VectorXd> x_meas;
    // cumulative-hazard quadrature grid
    std::vector<double> gl_t, gl_w;
    std::vector<std::vector<double>> gl_lam0_row;
    std::vector<Eigen::VectorXd> gl_x;
    std::vector<double> lam0_row_t;
    Eigen::VectorXd x_at_t;
    // pseudo-adaptive recentring
    bool adapt_set = false;
    Eigen::VectorXd adapt_mode;
    Eigen::MatrixXd adapt_chol;
  };

  std::vector<double> eval_hazard_row(double t) const {
    const SplineBasis& b = *basis_t_;
    double x = std::min(std::max(t, b.lower()), b.upper());
    return b.eval(x);
  }

  static Eigen::VectorXd meas_covariates_at(const Subject& s, double t) {
    // piecewise-constant from the last observation at or before t
    Eigen::VectorXd x;
    for (std::size_t k = 0; k < s.t_meas.size(); ++k)
      if (s.t_meas[k] <= t) x = s.x_meas[k];
    if (x.size() == 0 && !s.x_meas.empty()) x = s.x_meas.front();
    return x;
  }

  static double log_mvn(const Eigen::VectorXd& v, const Eigen::MatrixXd& cov,
                        const Eigen::MatrixXd& L) {
    // log N(v; 0, cov) with L = chol(cov)
    Eigen::VectorXd w = L.template triangularView<Eigen::Lower>().solve(v);
    double logdet = 0.0;
    for (int i = 0; i < L.rows(); ++i) logdet += std::log(L(i, i));
    return -0.5 * w.squaredNorm() - logdet -
           0.5 * v.size() * std::log(2.0 * M_PI);
  }

  static double log_mvn_shift(const Eigen::VectorXd& v, const Subject& s) {
    Eigen::VectorXd c = v - s.adapt_mode;
    Eigen::VectorXd w = s.adapt_chol.template triangularView<Eigen::Lower>().solve(c);
    double logdet = 0.0;
    for (int i = 0; i < s.adapt_chol.rows(); ++i)
      logdet += std::log(s.adapt_chol(i, i));
    return -0.5 * w.squaredNorm() - logdet -
           0.5 * v.size() * std::log(2.0 * M_PI);
  }

  double lam0(const Subject& s, std::size_t gl_index, const Model2Params& p) const {
    if (cfg_.hazard == HazardKind::Splines) {
      const auto& row = s.gl_lam0_row[gl_index];
      double v = 0.0;
      for (int i = 0; i < p.coef_t.size(); ++i)
        v += p.coef_t[i] * row[static_cast<std::size_t>(i)];
      return v;
    }
    double t = s.gl_t[gl_index];
    return p.weibull_shape / p.weibull_scale *
           std::pow(t / p.weibull_scale, p.weibull_shape - 1.0);
  }

  double conditional_loglik(const Model2Params& p, const Subject& s,
                            const Eigen::VectorXd& omega, double nu_m,
                            double nu_t) const {
    double ll = 0.0;
    // measurement part
    const double log_norm = -0.5 * std::log(2.0 * M_PI * p.sigma_eps2);
    for (std::size_t k = 0; k < s.t_meas.size(); ++k) {
      double level =
          marker_trajectory(p, s.t_meas[k], s.z, s.x_meas[k], omega, nu_m).first;
      double r = s.value[k] - level;
      ll += log_norm - 0.5 * r * r / p.sigma_eps2;
    }
    // survival part
    double btx = s.x_surv.size() > 0 ? p.beta_t_cov.dot(s.x_surv) : 0.0;
    double c = (p.beta_zt + nu_t) * s.z + btx;
    double Lam = 0.0;
    for (std::size_t g = 0; g < s.gl_t.size(); ++g) {
      Eigen::VectorXd h =
          link_value(p, cfg_.link, s.gl_t[g], s.z, s.gl_x[g], omega, nu_m);
      Lam += s.gl_w[g] * lam0(s, g, p) * std::exp(c + p.eta.dot(h));
    }
    ll -= Lam;
    if (s.status_t == 1) {
      double l0;
      if (cfg_.hazard == HazardKind::Splines) {
        l0 = 0.0;
        for (int i = 0; i < p.coef_t.size(); ++i)
          l0 += p.coef_t[i] * s.lam0_row_t[static_cast<std::size_t>(i)];
      } else {
        l0 = p.weibull_shape / p.weibull_scale *
             std::pow(s.time_t / p.weibull_scale, p.weibull_shape - 1.0);
      }
      Eigen::VectorXd h = link_value(p, cfg_.link, s.time_t, s.z, s.x_at_t, omega, nu_m);
      ll += std::log(l0) + c + p.eta.dot(h);
    }
    return ll;
  }

  Model2Config cfg_;
  std::optional<SplineBasis> basis_t_;
  QuadratureRule gh_;
  MCSampler mc_;
  int n_centers_ = 1;
  std::vector<Subject> subj_;
  std::vector<std::vector<std::size_t>> center_subjects_;
  Eigen::MatrixXd penalty_t_;
};

inline double penalized_loglik2(const Model2Params& p, const LongitudinalDataset& ds,
                                const Model2Config& cfg,
                                std::optional<SplineBasis> hazard_basis,
                                const QuadratureRule& gh, const MCSampler& mc) {
  Model2Likelihood lik(ds, cfg, std::move(hazard_basis), gh, mc);
  return lik.penalized(p);
}

}  // namespace surroval
