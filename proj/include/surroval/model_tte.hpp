// Joint semi-competing-risks model for a time-to-event surrogate S and a
// final endpoint T:
//
//   lambda_S(t) = lambda0S(t) exp(omega + u + z (nuS + beta_zs) + bS'x)
//   lambda_T(t) = lambda0T(t) exp(zeta omega + alpha u + z (nuT + beta_zt)
//                                 + bT'x + g(S) 1{S <= t})
//
// with omega ~ N(0, theta2) per subject, u ~ N(0, gamma2) and
// (nuS, nuT) ~ N(0, sigma_nu) per trial.  The direct-effect function g(.)
// is a B-spline expansion and turns the meta-analytic model into the
// mediation model.
//
// The marginal likelihood integrates omega by Gauss-Hermite inside a
// Monte-Carlo integral over the trial effects; all products over subjects
// and averages over draws are carried in log space with max shifts, so a
// trial of hundreds of small subject contributions cannot underflow.
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

struct Model1Params {
  Eigen::VectorXd coef_s;  // M-spline coefficients of lambda0S, >= 0
  Eigen::VectorXd coef_t;  // M-spline coefficients of lambda0T, >= 0
  double theta2 = 1.0;     // Var(omega)
  double gamma2 = 0.0;     // Var(u), ignored without the trial frailty
  Eigen::Matrix2d sigma_nu = Eigen::Matrix2d::Identity();
  double zeta = 1.0;
  double alpha = 1.0;
  double beta_zs = 0.0;
  double beta_zt = 0.0;
  Eigen::VectorXd beta_s_cov;
  Eigen::VectorXd beta_t_cov;
  Eigen::VectorXd gamma_fn_coef;  // B-spline coefficients of g(.), empty = off

  void validate() const {
    if (!(theta2 >= 0.0)) throw Error("theta2 must be >= 0");
    if (!(gamma2 >= 0.0)) throw Error("gamma2 must be >= 0");
    if ((coef_s.array() < 0.0).any() || (coef_t.array() < 0.0).any())
      throw Error("hazard spline coefficients must be nonnegative");
  }
};

struct Model1Config {
  bool estimate_zeta = true;   // indicator.zeta
  bool estimate_alpha = true;  // indicator.alpha
  bool include_trial_frailty = true;  // frail.base
  bool mediation = false;
  int g_nknots = 1;  // interior knots of the B-spline basis of g(.)
  PenaltySpec penalty;

  void validate() const {
    if (mediation && (g_nknots < 1 || g_nknots > 5))
      throw Error("g_nknots must be in [1, 5]");
    penalty.validate();
  }
};

struct Model1Bases {
  SplineBasis basis_s;                  // kind M
  SplineBasis basis_t;                  // kind M
  std::optional<SplineBasis> basis_g;   // kind B, present under mediation
};

// Builds the spline bases from the observed follow-up times: hazard bases on
// [0, max follow-up], and under mediation a cubic B-spline for g(.) on the
// surrogate time range with interior knots at percentiles of the observed
// surrogate events.
inline Model1Bases make_model1_bases(const SurrogacyDataset& ds,
                                     const Model1Config& cfg, int n_knots,
                                     KnotPlacement placement = KnotPlacement::Equidistant) {
  std::vector<double> times_s, times_t, s_events;
  for (const auto& subj : ds.subjects) {
    times_s.push_back(subj.time_s);
    times_t.push_back(subj.time_t);
    if (subj.status_s == 1) s_events.push_back(subj.time_s);
  }
  SplineBasis bs = make_basis(SplineKind::M, n_knots, placement, times_s);
  SplineBasis bt = make_basis(SplineKind::M, n_knots, placement, times_t);
  std::optional<SplineBasis> bg;
  if (cfg.mediation) {
    if (s_events.empty())
      throw DegenerateData("mediation requested but no surrogate events observed");
    double smax = *std::max_element(times_s.begin(), times_s.end());
    std::vector<double> knots{0.0, smax};
    int m = cfg.g_nknots;
    for (int j = 1; j <= m; ++j) {
      double q = quantile_type7(s_events, static_cast<double>(j) / (m + 1));
      knots.push_back(q);
    }
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    bg.emplace(SplineKind::B, 4, knots);
  }
  return Model1Bases{std::move(bs), std::move(bt), std::move(bg)};
}

struct REffects {
  double omega = 0.0;
  double u = 0.0;
  double nu_s = 0.0;
  double nu_t = 0.0;
};

// g(s) with constant extrapolation beyond the basis support (prediction-time
// queries can ask slightly past the largest observed surrogate time).
inline double gamma_fn_value(const Model1Params& p, const Model1Bases& bases,
                             double s) {
  if (!bases.basis_g || p.gamma_fn_coef.size() == 0) return 0.0;
  const SplineBasis& bg = *bases.basis_g;
  double x = std::min(std::max(s, bg.lower()), bg.upper());
  std::vector<double> row = bg.eval(x);
  double g = 0.0;
  for (int i = 0; i < p.gamma_fn_coef.size(); ++i) g += p.gamma_fn_coef[i] * row[i];
  return g;
}

// Hazard pair (lambda_S, lambda_T) at time t given random effects.  s_event
// carries the surrogate time when it has occurred.
inline std::pair<double, double> hazards(
    const Model1Params& p, const Model1Bases& bases, double t,
    std::optional<double> s_event, int z, const Eigen::VectorXd& x,
    const REffects& re) {
  std::vector<double> ms = bases.basis_s.eval(t);
  std::vector<double> mt = bases.basis_t.eval(t);
  double lam0s = 0.0, lam0t = 0.0;
  for (int i = 0; i < p.coef_s.size(); ++i) lam0s += p.coef_s[i] * ms[i];
  for (int i = 0; i < p.coef_t.size(); ++i) lam0t += p.coef_t[i] * mt[i];
  double bsx = x.size() > 0 ? p.beta_s_cov.dot(x) : 0.0;
  double btx = x.size() > 0 ? p.beta_t_cov.dot(x) : 0.0;
  double lin_s = re.omega + re.u + z * (re.nu_s + p.beta_zs) + bsx;
  double lin_t = p.zeta * re.omega + p.alpha * re.u + z * (re.nu_t + p.beta_zt) + btx;
  if (s_event && *s_event <= t)
    lin_t += gamma_fn_value(p, bases, *s_event);
  return {lam0s * std::exp(lin_s), lam0t * std::exp(lin_t)};
}

// Log-likelihood contribution of one subject conditional on the random
// effects:
//   d log lambda_S(s*) + delta log lambda_T(t*)
//   - Lambda_S(s*) - Lambda_T,pre(s* ^ t*) - Lambda_T,post(s*, t*)
// where the T cumulative splits at the surrogate time when it occurred.
inline double subject_loglik(const Model1Params& p, const Model1Bases& bases,
                             const SubjectRecord& subj, const REffects& re) {
  const double s = subj.time_s, t = subj.time_t;
  const int d = subj.status_s, del = subj.status_t, z = subj.trt;
  Eigen::VectorXd x(subj.covariates.size());
  for (std::size_t i = 0; i < subj.covariates.size(); ++i) x[i] = subj.covariates[i];

  std::vector<double> is = bases.basis_s.integral(s);
  std::vector<double> it_s = bases.basis_t.integral(s);
  std::vector<double> it_t = bases.basis_t.integral(t);
  double Lam0S_s = 0.0, Lam0T_s = 0.0, Lam0T_t = 0.0;
  for (int i = 0; i < p.coef_s.size(); ++i) Lam0S_s += p.coef_s[i] * is[i];
  for (int i = 0; i < p.coef_t.size(); ++i) {
    Lam0T_s += p.coef_t[i] * it_s[i];
    Lam0T_t += p.coef_t[i] * it_t[i];
  }
  double bsx = x.size() > 0 ? p.beta_s_cov.dot(x) : 0.0;
  double btx = x.size() > 0 ? p.beta_t_cov.dot(x) : 0.0;
  double lin_s = re.omega + re.u + z * (re.nu_s + p.beta_zs) + bsx;
  double lin_t = p.zeta * re.omega + p.alpha * re.u + z * (re.nu_t + p.beta_zt) + btx;
  double g = d == 1 ? gamma_fn_value(p, bases, s) : 0.0;

  double ll = 0.0;
  if (d == 1) {
    std::vector<double> ms = bases.basis_s.eval(s);
    double lam0s = 0.0;
    for (int i = 0; i < p.coef_s.size(); ++i) lam0s += p.coef_s[i] * ms[i];
    ll += std::log(lam0s) + lin_s;
  }
  if (del == 1) {
    std::vector<double> mt = bases.basis_t.eval(t);
    double lam0t = 0.0;
    for (int i = 0; i < p.coef_t.size(); ++i) lam0t += p.coef_t[i] * mt[i];
    ll += std::log(lam0t) + lin_t + d * g;
  }
  ll -= std::exp(lin_s) * Lam0S_s;
  double post = d == 1 ? std::exp(g) * (Lam0T_t - Lam0T_s) : (Lam0T_t - Lam0T_s);
  // without a surrogate event there is no hazard switch, so pre + post is
  // just Lambda0T(t*)
  ll -= std::exp(lin_t) * (Lam0T_s + post);
  if (std::isnan(ll))
    throw NonFiniteContribution("subject " + std::to_string(subj.patient_id) +
                                " produced a NaN likelihood contribution");
  return ll;
}

// ---------------------------------------------------------------------------
// Marginal penalized log-likelihood
// ---------------------------------------------------------------------------

class Model1Likelihood {
 public:
  Model1Likelihood(const SurrogacyDataset& ds, Model1Config cfg,
                   Model1Bases bases, QuadratureRule gh, MCSampler mc)
      : cfg_(std::move(cfg)),
        bases_(std::move(bases)),
        gh_(std::move(gh)),
        mc_(mc),
        n_trials_(ds.n_trials) {
    cfg_.validate();
    const std::size_t n = ds.subjects.size();
    z_.resize(n);
    d_.resize(n);
    del_.resize(n);
    lam0s_row_.resize(n);
    is_row_.resize(n);
    lam0t_row_.resize(n);
    it_t_row_.resize(n);
    it_s_row_.resize(n);
    g_row_.resize(n);
    X_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                               static_cast<Eigen::Index>(ds.covariate_names.size()));
    // subjects grouped by trial, original order within trial
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ds.subjects[a].trial_id < ds.subjects[b].trial_id;
    });
    trial_begin_.assign(static_cast<std::size_t>(n_trials_) + 1, 0);
    for (std::size_t slot = 0; slot < n; ++slot) {
      const SubjectRecord& subj = ds.subjects[order[slot]];
      z_[slot] = subj.trt;
      d_[slot] = subj.status_s;
      del_[slot] = subj.status_t;
      lam0s_row_[slot] = bases_.basis_s.eval(subj.time_s);
      is_row_[slot] = bases_.basis_s.integral(subj.time_s);
      lam0t_row_[slot] = bases_.basis_t.eval(subj.time_t);
      it_t_row_[slot] = bases_.basis_t.integral(subj.time_t);
      it_s_row_[slot] = bases_.basis_t.integral(subj.time_s);
      if (bases_.basis_g) {
        const SplineBasis& bg = *bases_.basis_g;
        double s = std::min(std::max(subj.time_s, bg.lower()), bg.upper());
        g_row_[slot] = bg.eval(s);
      }
      for (std::size_t c = 0; c < subj.covariates.size(); ++c)
        X_(static_cast<Eigen::Index>(slot), static_cast<Eigen::Index>(c)) =
            subj.covariates[c];
      trial_begin_[static_cast<std::size_t>(subj.trial_id)] = slot + 1;
    }
    for (std::size_t i = 1; i < trial_begin_.size(); ++i)
      trial_begin_[i] = std::max(trial_begin_[i], trial_begin_[i - 1]);
    penalty_s_ = bases_.basis_s.curvature_penalty();
    penalty_t_ = bases_.basis_t.curvature_penalty();
    n_subjects_ = n;
  }

  int n_subjects() const { return static_cast<int>(n_subjects_); }
  int n_trials() const { return n_trials_; }
  const Model1Bases& bases() const { return bases_; }
  const Model1Config& config() const { return cfg_; }
  const Eigen::MatrixXd& penalty_matrix_s() const { return penalty_s_; }
  const Eigen::MatrixXd& penalty_matrix_t() const { return penalty_t_; }
  const QuadratureRule& gh() const { return gh_; }
  const MCSampler& mc() const { return mc_; }

  double penalized(const Model1Params& p) const {
    double pen = cfg_.penalty.kappa_s * p.coef_s.dot(penalty_s_ * p.coef_s) +
                 cfg_.penalty.kappa_t * p.coef_t.dot(penalty_t_ * p.coef_t);
    return unpenalized(p) - pen;
  }

  // Marginal log-likelihood: per trial, log of the Monte-Carlo average over
  // (u, nuS, nuT) of the product over subjects of the Gauss-Hermite integral
  // over omega.  Deterministic for fixed seed, any thread count.
  double unpenalized(const Model1Params& p) const {
    p.validate();
    const Eigen::Matrix2d L = cholesky_lower(p.sigma_nu);
    const double sd_theta = std::sqrt(p.theta2);
    const double sd_gamma = cfg_.include_trial_frailty ? std::sqrt(p.gamma2) : 0.0;
    const double alpha = cfg_.include_trial_frailty ? p.alpha : 0.0;
    const int ngh = gh_.size();

    // node-level tables shared by every subject and draw
    std::vector<double> eS(ngh), eT(ngh), cc00(ngh), cc10(ngh), cc01(ngh), cc11(ngh);
    for (int k = 0; k < ngh; ++k) {
      double sxi = sd_theta * gh_.nodes[k];
      double zsxi = p.zeta * sxi;
      eS[k] = std::exp(sxi);
      eT[k] = std::exp(zsxi);
      cc00[k] = gh_.log_weights[k];
      cc10[k] = gh_.log_weights[k] + sxi;
      cc01[k] = gh_.log_weights[k] + zsxi;
      cc11[k] = gh_.log_weights[k] + sxi + zsxi;
    }

    // per-subject parameter-dependent scalars
    const std::size_t n = n_subjects_;
    std::vector<double> A0(n), LamS(n), BT0(n), ecs(n), ect(n);
    Eigen::VectorXd covs = X_.cols() > 0 && p.beta_s_cov.size() > 0
                               ? Eigen::VectorXd(X_ * p.beta_s_cov)
                               : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd covt = X_.cols() > 0 && p.beta_t_cov.size() > 0
                               ? Eigen::VectorXd(X_ * p.beta_t_cov)
                               : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
      double lam0s = dot(p.coef_s, lam0s_row_[j]);
      double Lam0S = dot(p.coef_s, is_row_[j]);
      double lam0t = dot(p.coef_t, lam0t_row_[j]);
      double Lam0T_t = dot(p.coef_t, it_t_row_[j]);
      double Lam0T_s = dot(p.coef_t, it_s_row_[j]);
      double g = 0.0;
      if (bases_.basis_g && p.gamma_fn_coef.size() > 0 && d_[j] == 1)
        g = dot(p.gamma_fn_coef, g_row_[j]);
      double a = 0.0;
      if (d_[j] == 1) a += std::log(lam0s) + covs[static_cast<Eigen::Index>(j)];
      if (del_[j] == 1)
        a += std::log(lam0t) + covt[static_cast<Eigen::Index>(j)] + d_[j] * g;
      A0[j] = a;
      ecs[j] = std::exp(covs[static_cast<Eigen::Index>(j)]);
      ect[j] = std::exp(covt[static_cast<Eigen::Index>(j)]);
      LamS[j] = Lam0S * ecs[j];
      double post = d_[j] == 1 ? std::exp(g) * (Lam0T_t - Lam0T_s)
                               : (Lam0T_t - Lam0T_s);
      BT0[j] = (Lam0T_s + post) * ect[j];
    }

    // per-trial contributions, evaluated independently and reduced in trial
    // order so the result does not depend on the thread count
    std::vector<double> trial_ll(static_cast<std::size_t>(n_trials_), 0.0);
    parallel_for(static_cast<std::size_t>(n_trials_), [&](std::size_t ti) {
      Rng rng = mc_.stream(streams::kTrialMC, ti + 1);
      const std::size_t lo = trial_begin_[ti], hi = trial_begin_[ti + 1];
      const int nmc = mc_.n_points;
      std::vector<double> draw_ll(static_cast<std::size_t>(nmc));
      std::vector<double> tk(static_cast<std::size_t>(ngh));
      for (int m = 0; m < nmc; ++m) {
        // three normals are always consumed so the (nuS, nuT) stream does
        // not shift when the trial frailty is switched off
        double zu = rng.normal(), z1 = rng.normal(), z2 = rng.normal();
        double u = sd_gamma * zu;
        double nu_s = L(0, 0) * z1;
        double nu_t = L(1, 0) * z1 + L(1, 1) * z2;
        double gS[2] = {u, u + nu_s + p.beta_zs};
        double gT[2] = {alpha * u, alpha * u + nu_t + p.beta_zt};
        double egS[2] = {std::exp(gS[0]), std::exp(gS[1])};
        double egT[2] = {std::exp(gT[0]), std::exp(gT[1])};
        double acc = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
          const int zj = z_[j];
          const double BS = egS[zj] * LamS[j];
          const double BT = egT[zj] * BT0[j];
          const double* cc = d_[j] == 1 ? (del_[j] == 1 ? cc11.data() : cc10.data())
                                        : (del_[j] == 1 ? cc01.data() : cc00.data());
          double mx = kNegInf;
          for (int k = 0; k < ngh; ++k) {
            double t1 = BS != 0.0 ? BS * eS[k] : 0.0;
            double t2 = BT != 0.0 ? BT * eT[k] : 0.0;
            double v = cc[k] - t1 - t2;
            tk[static_cast<std::size_t>(k)] = v;
            if (v > mx) mx = v;
          }
          double inner;
          if (!std::isfinite(mx)) {
            inner = mx;
          } else {
            double s = 0.0;
            for (int k = 0; k < ngh; ++k)
              s += std::exp(tk[static_cast<std::size_t>(k)] - mx);
            inner = mx + std::log(s);
          }
          acc += A0[j] + d_[j] * gS[zj] + del_[j] * gT[zj] + inner;
        }
        draw_ll[static_cast<std::size_t>(m)] = acc;
      }
      trial_ll[ti] = log_sum_exp(draw_ll) - std::log(static_cast<double>(nmc));
    });

    double total = 0.0;
    for (double v : trial_ll) total += v;
    if (std::isnan(total))
      throw NumericalUnderflow(
          "marginal log-likelihood is NaN after the log-space safeguard");
    return total;
  }

 private:
  static double dot(const Eigen::VectorXd& a, const std::vector<double>& b) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a[i] * b[static_cast<std::size_t>(i)];
    return s;
  }

  Model1Config cfg_;
  Model1Bases bases_;
  QuadratureRule gh_;
  MCSampler mc_;
  int n_trials_;
  std::size_t n_subjects_ = 0;
  std::vector<int> z_, d_, del_;
  std::vector<std::vector<double>> lam0s_row_, is_row_, lam0t_row_, it_t_row_,
      it_s_row_, g_row_;
  Eigen::MatrixXd X_;
  std::vector<std::size_t> trial_begin_;
  Eigen::MatrixXd penalty_s_, penalty_t_;
};

// One-shot evaluation, mirroring the likelihood of the fitted model.
inline double penalized_loglik(const Model1Params& p, const SurrogacyDataset& ds,
                               const Model1Config& cfg, const Model1Bases& bases,
                               const QuadratureRule& gh, const MCSampler& mc) {
  Model1Likelihood lik(ds, cfg, bases, gh, mc);
  return lik.penalized(p);
}

}  // namespace surroval
