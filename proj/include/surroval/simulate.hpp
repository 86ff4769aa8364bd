// Data generators for both joint models, used as the ground-truth oracle for
// every estimator and surrogacy measure.  Event times are drawn by inverting
// the cumulative hazard on an exponential deviate (bracketing + bisection to
// 1e-10); the hazard switch of the mediation model is honoured by splitting
// the inversion at the surrogate time.  Streams are per subject and per
// trial, so generation order and thread count never change a dataset.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "surroval/common.hpp"
#include "surroval/data.hpp"
#include "surroval/model_long.hpp"
#include "surroval/model_tte.hpp"

namespace surroval {

// Inverts Lambda(t) = target for a monotone cumulative hazard built on an
// M-spline curve with constant extrapolation beyond the last knot.
inline double invert_cumulative(const HazardCurve& curve, double target,
                                double tol = 1e-10) {
  if (target <= 0.0) return 0.0;
  double u = curve.basis->upper();
  double cap = curve.cumulative(u);
  if (target > cap) {
    double tail_rate = curve.hazard(u);
    if (!(tail_rate > 0.0)) return std::numeric_limits<double>::infinity();
    return u + (target - cap) / tail_rate;
  }
  double lo = 0.0, hi = u;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (curve.cumulative(mid) < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < tol * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

struct Censoring {
  double admin_time = std::numeric_limits<double>::infinity();
  double exp_rate = 0.0;  // 0 = no random censoring
};

struct Scenario1 {
  int k_trials = 1;
  int n_per_trial = 100;
  Model1Params params;
  Model1Bases bases;
  Censoring censoring;
  std::uint64_t seed = 0;
  bool with_covariate = false;  // one standard-normal covariate
};

// Latent (S, T) pair given the linear predictors, exercising the hazard
// switch g(S) when the surrogate comes first.
inline std::pair<double, double> draw_latent_pair(const Model1Params& p,
                                                  const Model1Bases& bases,
                                                  double lin_s, double lin_t,
                                                  Rng& rng) {
  HazardCurve cs{&bases.basis_s, p.coef_s};
  HazardCurve ct{&bases.basis_t, p.coef_t};
  double e1 = rng.exponential();
  double s = invert_cumulative(cs, e1 * std::exp(-lin_s));
  double e2 = rng.exponential();
  double pre_cum_at_s = std::exp(lin_t) * ct.cumulative(s);
  double t;
  if (e2 <= pre_cum_at_s) {
    // T falls before the surrogate; no switch experienced
    t = invert_cumulative(ct, e2 * std::exp(-lin_t));
  } else {
    double g = gamma_fn_value(p, bases, s);
    double target =
        ct.cumulative(s) + (e2 - pre_cum_at_s) * std::exp(-lin_t - g);
    t = invert_cumulative(ct, target);
  }
  return {s, t};
}

inline SurrogacyDataset simulate_model1(const Scenario1& sc) {
  sc.params.validate();
  SurrogacyDataset ds;
  ds.n_trials = sc.k_trials;
  ds.time_scale = 1.0;
  if (sc.with_covariate) ds.covariate_names.push_back("x1");
  int pid = 0;
  for (int trial = 1; trial <= sc.k_trials; ++trial) {
    Rng trial_rng(sc.seed, streams::kSimulate,
                  static_cast<std::uint64_t>(trial) << 32);
    double zu = trial_rng.normal(), z1 = trial_rng.normal(), z2 = trial_rng.normal();
    double u = std::sqrt(sc.params.gamma2) * zu;
    Eigen::Matrix2d L = cholesky_lower(sc.params.sigma_nu);
    double nu_s = L(0, 0) * z1;
    double nu_t = L(1, 0) * z1 + L(1, 1) * z2;
    for (int j = 1; j <= sc.n_per_trial; ++j) {
      Rng rng(sc.seed, streams::kSimulate,
              (static_cast<std::uint64_t>(trial) << 32) |
                  static_cast<std::uint64_t>(j));
      SubjectRecord rec;
      rec.patient_id = ++pid;
      rec.trial_id = trial;
      rec.trt = rng.uniform() < 0.5 ? 0 : 1;
      double xv = 0.0;
      if (sc.with_covariate) {
        xv = rng.normal();
        rec.covariates.push_back(xv);
      }
      double omega = std::sqrt(sc.params.theta2) * rng.normal();
      double bsx = sc.with_covariate && sc.params.beta_s_cov.size() > 0
                       ? sc.params.beta_s_cov[0] * xv
                       : 0.0;
      double btx = sc.with_covariate && sc.params.beta_t_cov.size() > 0
                       ? sc.params.beta_t_cov[0] * xv
                       : 0.0;
      double lin_s = omega + u + rec.trt * (nu_s + sc.params.beta_zs) + bsx;
      double lin_t = sc.params.zeta * omega + sc.params.alpha * u +
                     rec.trt * (nu_t + sc.params.beta_zt) + btx;
      auto [s, t] = draw_latent_pair(sc.params, sc.bases, lin_s, lin_t, rng);
      double c = sc.censoring.admin_time;
      if (sc.censoring.exp_rate > 0.0)
        c = std::min(c, rng.exponential() / sc.censoring.exp_rate);
      double t_obs = std::min(t, c);
      rec.status_t = t <= c ? 1 : 0;
      rec.time_t = t_obs;
      rec.status_s = s <= t_obs ? 1 : 0;
      rec.time_s = std::min(s, t_obs);
      ds.subjects.push_back(rec);
    }
  }
  for (int i = 1; i <= pid; ++i) ds.original_patient_ids.push_back(i);
  for (int k = 1; k <= sc.k_trials; ++k) ds.original_trial_ids.push_back(k);
  return ds;
}

// ---------------------------------------------------------------------------
// Longitudinal model generator
// ---------------------------------------------------------------------------

struct Scenario2 {
  int k_centers = 1;
  int n_per_center = 100;
  Model2Params params;
  Model2Config cfg;  // link + hazard kind; use_centers toggles (nuM, nuT)
  std::optional<SplineBasis> hazard_basis;
  double measurement_dt = 0.1;
  Censoring censoring;
  std::uint64_t seed = 0;
};

inline LongitudinalDataset simulate_model2(const Scenario2& sc) {
  sc.params.validate();
  const Model2Params& p = sc.params;
  LongitudinalDataset ds;
  ds.has_centers = sc.cfg.use_centers;
  ds.n_centers = sc.cfg.use_centers ? sc.k_centers : 1;

  std::optional<CumulativeHazardGrid> spline_grid;
  if (sc.cfg.hazard == HazardKind::Splines)
    spline_grid.emplace(*sc.hazard_basis, p.coef_t);
  auto lam0 = [&](double t) {
    if (sc.cfg.hazard == HazardKind::Weibull)
      return p.weibull_shape / p.weibull_scale *
             std::pow(t / p.weibull_scale, p.weibull_shape - 1.0);
    return spline_grid->hazard(t);
  };

  Eigen::MatrixXd Ld = cholesky_lower(p.D);
  int id = 0;
  for (int center = 1; center <= sc.k_centers; ++center) {
    double nu_m = 0.0, nu_t = 0.0;
    if (sc.cfg.use_centers) {
      Rng crng(sc.seed, streams::kSimulate, static_cast<std::uint64_t>(center) << 32);
      Eigen::Matrix2d L = cholesky_lower(p.sigma_nu);
      double z1 = crng.normal(), z2 = crng.normal();
      nu_m = L(0, 0) * z1;
      nu_t = L(1, 0) * z1 + L(1, 1) * z2;
    }
    for (int j = 1; j <= sc.n_per_center; ++j) {
      Rng rng(sc.seed, streams::kSimulate,
              (static_cast<std::uint64_t>(center) << 32) |
                  static_cast<std::uint64_t>(j));
      LongiSurvivalRow row;
      row.id = ++id;
      row.center_id = center;
      row.trt = rng.uniform() < 0.5 ? 0 : 1;
      Eigen::VectorXd omega(p.random_dim());
      for (int k = 0; k < p.random_dim(); ++k) omega[k] = rng.normal();
      omega = Ld * omega;

      // Event time by bracketing + bisection on the time-varying cumulative
      // hazard.  The exponent is linear in time for every link (level,
      // slope, shared effects), so the integrand is tabulated once per
      // subject on a dense grid and the monotone interpolant inverted.
      double c_lin = (p.beta_zt + nu_t) * row.trt;
      auto exp_coef = [&](double& a, double& b) {
        auto [lvl0, slp] = marker_trajectory(p, 0.0, row.trt, Eigen::VectorXd(),
                                             omega, nu_m);
        switch (sc.cfg.link) {
          case LinkKind::CurrentLevel:
            a = p.eta[0] * lvl0;
            b = p.eta[0] * slp;
            break;
          case LinkKind::CurrentSlope:
            a = p.eta[0] * slp;
            b = 0.0;
            break;
          case LinkKind::SharedRandomEffects:
            a = p.eta.dot(omega);
            b = 0.0;
            break;
        }
      };
      double ea = 0.0, eb = 0.0;
      exp_coef(ea, eb);
      double e = rng.exponential();
      const int n_grid = 512;
      double cap = std::isfinite(sc.censoring.admin_time)
                       ? sc.censoring.admin_time
                       : 1.0;
      double t_event = -1.0;
      double prev_cum = -1.0;
      for (int expand = 0; expand < 64 && t_event < 0.0; ++expand) {
        double h = cap / n_grid;
        double cum = 0.0;
        double prev = lam0(0.0) * std::exp(c_lin + ea);
        if (!std::isfinite(prev)) prev = 0.0;  // Weibull shape < 1 endpoint
        for (int g = 1; g <= n_grid; ++g) {
          double t = h * g;
          double val = lam0(t) * std::exp(c_lin + ea + eb * t);
          double next = cum + 0.5 * h * (prev + val);
          if (next >= e) {
            // bisection on the linear interpolant of the integrand
            double lo = t - h, hi = t, clo = cum;
            for (int it = 0; it < 80; ++it) {
              double mid = 0.5 * (lo + hi);
              double vmid = lam0(mid) * std::exp(c_lin + ea + eb * mid);
              double cmid = clo + 0.5 * (mid - lo) *
                                      (lam0(lo) * std::exp(c_lin + ea + eb * lo) + vmid);
              if (cmid < e) {
                lo = mid;
                clo = cmid;
              } else {
                hi = mid;
              }
              if (hi - lo < 1e-10 * std::max(1.0, hi)) break;
            }
            t_event = 0.5 * (lo + hi);
            break;
          }
          cum = next;
          prev = val;
        }
        if (t_event < 0.0) {
          if (std::isfinite(sc.censoring.admin_time)) {
            t_event = std::numeric_limits<double>::infinity();  // censored anyway
          } else {
            // a decaying exponent can make the cumulative hazard converge
            // below the exponential deviate; detect the stall instead of
            // doubling forever
            if (cum <= prev_cum * (1.0 + 1e-9) + 1e-300 || expand == 63)
              throw RootFindingFailure(
                  "event time is not reachable: the cumulative hazard "
                  "plateaus below the drawn deviate (subject id " +
                  std::to_string(row.id) + ")");
            prev_cum = cum;
            cap *= 2.0;
          }
        }
      }
      double cens = sc.censoring.admin_time;
      if (sc.censoring.exp_rate > 0.0)
        cens = std::min(cens, rng.exponential() / sc.censoring.exp_rate);
      row.status_t = t_event <= cens ? 1 : 0;
      row.time_t = std::min(t_event, cens);

      ds.survival.push_back(row);
      for (double tm = 0.0; tm <= row.time_t; tm += sc.measurement_dt) {
        LongiMeasurementRow m;
        m.id = row.id;
        m.timevar = tm;
        double level =
            marker_trajectory(p, tm, row.trt, Eigen::VectorXd(), omega, nu_m).first;
        m.value = level + std::sqrt(p.sigma_eps2) * rng.normal();
        ds.measurements.push_back(m);
      }
    }
  }
  for (int i = 1; i <= id; ++i) ds.original_ids.push_back(i);
  for (int k = 1; k <= ds.n_centers; ++k) ds.original_center_ids.push_back(k);
  return ds;
}

}  // namespace surroval
