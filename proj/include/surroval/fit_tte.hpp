// Fitting driver for the time-to-event surrogate model: maps the model onto
// an unconstrained working vector (square-root scale for the hazard spline
// coefficients, log scale for variances, Cholesky factors for sigma_nu),
// runs the Levenberg-Marquardt maximization, and converts the inverse
// penalized Hessian into natural-scale standard errors by the delta method.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "surroval/model_tte.hpp"
#include "surroval/optimize.hpp"

namespace surroval {

class Model1Transform {
 public:
  Model1Transform(const Model1Config& cfg, int nbs, int nbt, int nbg, int ncov)
      : cfg_(cfg), nbs_(nbs), nbt_(nbt), nbg_(cfg.mediation ? nbg : 0), ncov_(ncov) {
    int at = 0;
    coef_s0_ = at;
    at += nbs_;
    coef_t0_ = at;
    at += nbt_;
    ltheta_ = at++;
    lgamma_ = cfg_.include_trial_frailty ? at++ : -1;
    chol0_ = at;
    at += 3;
    zeta_ = cfg_.estimate_zeta ? at++ : -1;
    alpha_ = (cfg_.include_trial_frailty && cfg_.estimate_alpha) ? at++ : -1;
    beta_zs_ = at++;
    beta_zt_ = at++;
    bs_cov0_ = at;
    at += ncov_;
    bt_cov0_ = at;
    at += ncov_;
    g0_ = at;
    at += nbg_;
    dim_ = at;
  }

  int dim() const { return dim_; }
  int idx_beta_zs() const { return beta_zs_; }
  int idx_beta_zt() const { return beta_zt_; }

  Model1Params unpack(const Eigen::VectorXd& w) const {
    Model1Params p;
    p.coef_s.resize(nbs_);
    for (int i = 0; i < nbs_; ++i) p.coef_s[i] = sq(w[coef_s0_ + i]);
    p.coef_t.resize(nbt_);
    for (int i = 0; i < nbt_; ++i) p.coef_t[i] = sq(w[coef_t0_ + i]);
    p.theta2 = std::exp(w[ltheta_]);
    p.gamma2 = lgamma_ >= 0 ? std::exp(w[lgamma_]) : 0.0;
    double l11 = std::exp(w[chol0_]);
    double l21 = w[chol0_ + 1];
    double l22 = std::exp(w[chol0_ + 2]);
    p.sigma_nu << l11 * l11, l11 * l21, l11 * l21, l21 * l21 + l22 * l22;
    p.zeta = zeta_ >= 0 ? w[zeta_] : 1.0;
    p.alpha = alpha_ >= 0 ? w[alpha_] : 1.0;
    p.beta_zs = w[beta_zs_];
    p.beta_zt = w[beta_zt_];
    p.beta_s_cov.resize(ncov_);
    p.beta_t_cov.resize(ncov_);
    for (int i = 0; i < ncov_; ++i) {
      p.beta_s_cov[i] = w[bs_cov0_ + i];
      p.beta_t_cov[i] = w[bt_cov0_ + i];
    }
    p.gamma_fn_coef.resize(nbg_);
    for (int i = 0; i < nbg_; ++i) p.gamma_fn_coef[i] = w[g0_ + i];
    return p;
  }

  Eigen::VectorXd pack(const Model1Params& p) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim_);
    for (int i = 0; i < nbs_; ++i) w[coef_s0_ + i] = std::sqrt(p.coef_s[i]);
    for (int i = 0; i < nbt_; ++i) w[coef_t0_ + i] = std::sqrt(p.coef_t[i]);
    w[ltheta_] = std::log(p.theta2);
    if (lgamma_ >= 0) w[lgamma_] = std::log(p.gamma2);
    Eigen::Matrix2d L = cholesky_lower(p.sigma_nu);
    w[chol0_] = std::log(L(0, 0));
    w[chol0_ + 1] = L(1, 0);
    w[chol0_ + 2] = std::log(L(1, 1));
    if (zeta_ >= 0) w[zeta_] = p.zeta;
    if (alpha_ >= 0) w[alpha_] = p.alpha;
    w[beta_zs_] = p.beta_zs;
    w[beta_zt_] = p.beta_zt;
    for (int i = 0; i < ncov_; ++i) {
      w[bs_cov0_ + i] = p.beta_s_cov.size() > i ? p.beta_s_cov[i] : 0.0;
      w[bt_cov0_ + i] = p.beta_t_cov.size() > i ? p.beta_t_cov[i] : 0.0;
    }
    for (int i = 0; i < nbg_; ++i)
      w[g0_ + i] = p.gamma_fn_coef.size() > i ? p.gamma_fn_coef[i] : 0.0;
    return w;
  }

  // Natural-scale estimate table (variance parameters, power parameters and
  // treatment effects) with delta-method standard errors.
  struct NaturalParam {
    std::string name;
    double estimate;
    double se;
  };

  std::vector<NaturalParam> natural_table(const Eigen::VectorXd& w,
                                          const Eigen::MatrixXd& vcov,
                                          const std::vector<std::string>& cov_names) const {
    std::vector<NaturalParam> out;
    auto push1 = [&](const std::string& name, double est, int idx, double jac) {
      double var = jac * vcov(idx, idx) * jac;
      out.push_back({name, est, std::sqrt(std::max(0.0, var))});
    };
    double theta2 = std::exp(w[ltheta_]);
    push1("theta", theta2, ltheta_, theta2);
    if (zeta_ >= 0) push1("zeta", w[zeta_], zeta_, 1.0);
    if (lgamma_ >= 0) {
      double gamma2 = std::exp(w[lgamma_]);
      push1("gamma", gamma2, lgamma_, gamma2);
    }
    if (alpha_ >= 0) push1("alpha", w[alpha_], alpha_, 1.0);
    // sigma_nu block via its 3x3 Jacobian
    Eigen::Matrix3d Js = sigma_jacobian(w);
    Eigen::Matrix3d Vw = vcov.block(chol0_, chol0_, 3, 3);
    Eigen::Matrix3d Vn = Js * Vw * Js.transpose();
    Eigen::Vector3d est = sigma_natural(w);
    out.push_back({"sigma2_S", est[0], std::sqrt(std::max(0.0, Vn(0, 0)))});
    out.push_back({"sigma2_T", est[1], std::sqrt(std::max(0.0, Vn(1, 1)))});
    out.push_back({"sigma_ST", est[2], std::sqrt(std::max(0.0, Vn(2, 2)))});
    push1("beta_S", w[beta_zs_], beta_zs_, 1.0);
    push1("beta_T", w[beta_zt_], beta_zt_, 1.0);
    for (int i = 0; i < ncov_; ++i) {
      push1("beta_S:" + cov_names[static_cast<std::size_t>(i)], w[bs_cov0_ + i],
            bs_cov0_ + i, 1.0);
      push1("beta_T:" + cov_names[static_cast<std::size_t>(i)], w[bt_cov0_ + i],
            bt_cov0_ + i, 1.0);
    }
    for (int i = 0; i < nbg_; ++i)
      push1("g_coef_" + std::to_string(i + 1), w[g0_ + i], g0_ + i, 1.0);
    return out;
  }

  // (sigma2_S, sigma2_T, sigma_ST) and their covariance on the natural scale
  Eigen::Vector3d sigma_natural(const Eigen::VectorXd& w) const {
    double l11 = std::exp(w[chol0_]), l21 = w[chol0_ + 1], l22 = std::exp(w[chol0_ + 2]);
    return {l11 * l11, l21 * l21 + l22 * l22, l11 * l21};
  }

  Eigen::Matrix3d sigma_jacobian(const Eigen::VectorXd& w) const {
    double l11 = std::exp(w[chol0_]), l21 = w[chol0_ + 1], l22 = std::exp(w[chol0_ + 2]);
    // rows: d(sigma2_S, sigma2_T, sigma_ST) / d(a = log l11, b = l21, c = log l22)
    Eigen::Matrix3d J;
    J << 2.0 * l11 * l11, 0.0, 0.0,
         0.0, 2.0 * l21, 2.0 * l22 * l22,
         l11 * l21, l11, 0.0;
    return J;
  }

  Eigen::Matrix3d sigma_block_cov(const Eigen::VectorXd& w,
                                  const Eigen::MatrixXd& vcov) const {
    Eigen::Matrix3d J = sigma_jacobian(w);
    Eigen::Matrix3d Vw = vcov.block(chol0_, chol0_, 3, 3);
    return J * Vw * J.transpose();
  }

  int idx_gamma_coef0() const { return g0_; }
  int n_gamma_coef() const { return nbg_; }

 private:
  Model1Config cfg_;
  int nbs_, nbt_, nbg_, ncov_;
  int coef_s0_ = 0, coef_t0_ = 0, ltheta_ = 0, lgamma_ = -1, chol0_ = 0,
      zeta_ = -1, alpha_ = -1, beta_zs_ = 0, beta_zt_ = 0, bs_cov0_ = 0,
      bt_cov0_ = 0, g0_ = 0;
  int dim_ = 0;
};

// Initial values following the package defaults; the hazard splines start
// at the marginal exponential rate of each endpoint.
struct Model1Init {
  double theta = 1.0;
  double gamma = 0.5;
  double sigma_ss = 0.5;
  double sigma_tt = 0.5;
  double sigma_st = 0.48;
  double zeta = 1.0;
  double alpha = 1.0;
  double betas = 0.5;
  double betat = 0.5;
};


inline Model1Params initial_model1_params(const SurrogacyDataset& ds,
                                          const Model1Bases& bases,
                                          const Model1Config& cfg,
                                          const Model1Init& init = {}) {
  double events_s = 0.0, events_t = 0.0, time_s = 0.0, time_t = 0.0;
  for (const auto& s : ds.subjects) {
    events_s += s.status_s;
    events_t += s.status_t;
    time_s += s.time_s;
    time_t += s.time_t;
  }
  double rate_s = std::max(events_s, 0.5) / std::max(time_s, 1e-12);
  double rate_t = std::max(events_t, 0.5) / std::max(time_t, 1e-12);
  Model1Params p;
  p.coef_s = marginal_rate_coef(bases.basis_s, rate_s);
  p.coef_t = marginal_rate_coef(bases.basis_t, rate_t);
  p.theta2 = init.theta;
  p.gamma2 = cfg.include_trial_frailty ? init.gamma : 0.0;
  p.sigma_nu << init.sigma_ss, init.sigma_st, init.sigma_st, init.sigma_tt;
  p.zeta = init.zeta;
  p.alpha = init.alpha;
  p.beta_zs = init.betas;
  p.beta_zt = init.betat;
  p.beta_s_cov = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.covariate_names.size()));
  p.beta_t_cov = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.covariate_names.size()));
  if (cfg.mediation && bases.basis_g)
    p.gamma_fn_coef = Eigen::VectorXd::Zero(bases.basis_g->n_basis());
  return p;
}

struct Model1FitOptions {
  int n_knots = 6;
  KnotPlacement placement = KnotPlacement::Equidistant;
  Model1Config cfg;
  ConvergenceLimits limits;
  int maxit = 50;
  int nb_mc = 300;
  int nb_gh = 32;
  int nb_gh2 = 20;  // retry rule size on non-convergence
  std::uint64_t seed = 0;
  Model1Init init;
};

struct Model1Fit {
  Model1Fit(Model1Config c, Model1Bases b, Model1Transform t)
      : cfg(std::move(c)), bases(std::move(b)), transform(std::move(t)) {}

  Model1Config cfg;
  Model1Bases bases;
  Model1Transform transform;
  Eigen::VectorXd working;
  Eigen::MatrixXd vcov_working;
  Model1Params params;
  double loglik_pen = 0.0;
  double loglik_unpen = 0.0;
  double lcv = 0.0;
  int n_iter = 0;
  bool converged = false;
  double crit_param = 0.0, crit_loglik = 0.0, crit_gradient = 0.0;
  double gradient_check_rel = 0.0;
  PenaltySpec kappa_used;
  MCSampler mc;
  int nb_gh = 32;
  std::vector<std::string> covariate_names;
  double t_max = 0.0;  // upper boundary of the final-endpoint basis

  Eigen::Matrix3d sigma_block_cov() const {
    return transform.sigma_block_cov(working, vcov_working);
  }
  double var_beta_zt() const {
    int i = transform.idx_beta_zt();
    return vcov_working(i, i);
  }
  double var_beta_zs() const {
    int i = transform.idx_beta_zs();
    return vcov_working(i, i);
  }
};

inline Model1Fit fit_model1(const SurrogacyDataset& ds, const Model1FitOptions& opt) {
  Model1Config cfg = opt.cfg;
  cfg.validate();
  Model1Bases bases = make_model1_bases(ds, cfg, opt.n_knots, opt.placement);
  MCSampler mc{opt.nb_mc, opt.seed, false};
  Model1Likelihood lik(ds, cfg, bases, gh_rule(opt.nb_gh), mc);
  Model1Transform tr(cfg, bases.basis_s.n_basis(), bases.basis_t.n_basis(),
                     bases.basis_g ? bases.basis_g->n_basis() : 0,
                     static_cast<int>(ds.covariate_names.size()));
  Eigen::VectorXd w0 = tr.pack(initial_model1_params(ds, bases, cfg, opt.init));

  Objective obj = [&](const Eigen::VectorXd& w) { return lik.penalized(tr.unpack(w)); };
  OptimResult res = maximize(obj, w0, opt.limits, opt.maxit);
  int gh_used = opt.nb_gh;
  if (!res.converged && opt.nb_gh2 > 0 && opt.nb_gh2 != opt.nb_gh) {
    // second attempt with the fallback quadrature size, warm started
    Model1Likelihood lik2(ds, cfg, bases, gh_rule(opt.nb_gh2), mc);
    Objective obj2 = [&](const Eigen::VectorXd& w) {
      return lik2.penalized(tr.unpack(w));
    };
    OptimResult res2 = maximize(obj2, res.x, opt.limits, opt.maxit);
    if (res2.converged) {
      res = res2;
      gh_used = opt.nb_gh2;
    }
  }

  Model1Fit fit(cfg, bases, tr);
  fit.working = res.x;
  fit.vcov_working = invert_neg_hessian(res.neg_hessian);
  fit.params = tr.unpack(res.x);
  fit.loglik_pen = res.value;
  fit.n_iter = res.n_iter;
  fit.converged = res.converged;
  fit.crit_param = res.crit_param;
  fit.crit_loglik = res.crit_loglik;
  fit.crit_gradient = res.crit_gradient;
  fit.gradient_check_rel = res.gradient_check_rel;
  fit.kappa_used = cfg.penalty;
  fit.mc = mc;
  fit.nb_gh = gh_used;
  fit.covariate_names = ds.covariate_names;
  fit.t_max = bases.basis_t.upper();

  // LCV needs the unpenalized curvature at the optimum
  Model1Likelihood lik_used(ds, cfg, bases, gh_rule(gh_used), mc);
  fit.loglik_unpen = lik_used.unpenalized(fit.params);
  Objective obj_unpen = [&](const Eigen::VectorXd& w) {
    return lik_used.unpenalized(tr.unpack(w));
  };
  Eigen::VectorXd g_unpen;
  Eigen::MatrixXd h_unpen;
  fd::gradient_hessian([&](const Eigen::VectorXd& w) { return -obj_unpen(w); },
                       res.x, -fit.loglik_unpen, g_unpen, h_unpen);
  fit.lcv = lcv_criterion(res.neg_hessian, h_unpen, fit.loglik_unpen,
                          lik.n_subjects());
  return fit;
}

// LCV grid search over kappa_s = kappa_t in {10^k : k = -2..8}; returns the
// fit with the smallest criterion.
inline Model1Fit fit_model1_auto_kappa(const SurrogacyDataset& ds,
                                       Model1FitOptions opt,
                                       std::vector<std::pair<double, double>>* trace = nullptr) {
  std::optional<Model1Fit> best;
  for (int k = -2; k <= 8; ++k) {
    double kappa = std::pow(10.0, k);
    opt.cfg.penalty.kappa_s = kappa;
    opt.cfg.penalty.kappa_t = kappa;
    try {
      Model1Fit fit = fit_model1(ds, opt);
      if (trace) trace->emplace_back(kappa, fit.lcv);
      if (!best || fit.lcv < best->lcv) best = std::move(fit);
    } catch (const Error&) {
      // a candidate that fails to converge or has a singular Hessian is
      // skipped rather than aborting the search
    }
  }
  if (!best) throw Error("no kappa candidate produced a usable fit");
  return *best;
}

}  // namespace surroval
