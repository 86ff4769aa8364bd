// Fitting driver for the longitudinal-surrogate model: working-scale
// transform (log variances, Cholesky factors, square-root hazard spline
// coefficients), least-squares initial values for the mixed submodel, and
// the pseudo-adaptive recentring frozen at those initial values.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "surroval/model_long.hpp"
#include "surroval/optimize.hpp"

namespace surroval {

class Model2Transform {
 public:
  Model2Transform(const Model2Config& cfg, int random_dim, int ncov_m, int ncov_t,
                  int nbt)
      : cfg_(cfg), rdim_(random_dim), ncov_m_(ncov_m), ncov_t_(ncov_t), nbt_(nbt) {
    int at = 0;
    bfix0_ = at;
    at += 2;
    bmcov0_ = at;
    at += ncov_m_;
    bzm_ = at++;
    bzmt_ = at++;
    leps_ = at++;
    d0_ = at;
    at += rdim_ == 1 ? 1 : 3;
    nu0_ = cfg_.use_centers ? at : -1;
    if (cfg_.use_centers) at += 3;
    if (cfg_.hazard == HazardKind::Splines) {
      coef_t0_ = at;
      at += nbt_;
    } else {
      wb0_ = at;
      at += 2;
    }
    bzt_ = at++;
    btcov0_ = at;
    at += ncov_t_;
    eta0_ = at;
    n_eta_ = cfg_.link == LinkKind::SharedRandomEffects ? rdim_ : 1;
    at += n_eta_;
    dim_ = at;
  }

  int dim() const { return dim_; }
  int idx_beta_zt() const { return bzt_; }
  int idx_eta0() const { return eta0_; }
  int n_eta() const { return n_eta_; }

  Model2Params unpack(const Eigen::VectorXd& w) const {
    Model2Params p;
    p.beta_fixed.resize(2);
    p.beta_fixed[0] = w[bfix0_];
    p.beta_fixed[1] = w[bfix0_ + 1];
    p.beta_m_cov.resize(ncov_m_);
    for (int i = 0; i < ncov_m_; ++i) p.beta_m_cov[i] = w[bmcov0_ + i];
    p.beta_zm = w[bzm_];
    p.beta_zm_time = w[bzmt_];
    p.sigma_eps2 = std::exp(w[leps_]);
    if (rdim_ == 1) {
      p.D = Eigen::MatrixXd::Constant(1, 1, sq(std::exp(w[d0_])));
    } else {
      double l11 = std::exp(w[d0_]), l21 = w[d0_ + 1], l22 = std::exp(w[d0_ + 2]);
      p.D.resize(2, 2);
      p.D << l11 * l11, l11 * l21, l11 * l21, l21 * l21 + l22 * l22;
    }
    if (nu0_ >= 0) {
      double l11 = std::exp(w[nu0_]), l21 = w[nu0_ + 1], l22 = std::exp(w[nu0_ + 2]);
      p.sigma_nu << l11 * l11, l11 * l21, l11 * l21, l21 * l21 + l22 * l22;
    }
    if (cfg_.hazard == HazardKind::Splines) {
      p.coef_t.resize(nbt_);
      for (int i = 0; i < nbt_; ++i) p.coef_t[i] = sq(w[coef_t0_ + i]);
    } else {
      p.weibull_shape = std::exp(w[wb0_]);
      p.weibull_scale = std::exp(w[wb0_ + 1]);
    }
    p.beta_zt = w[bzt_];
    p.beta_t_cov.resize(ncov_t_);
    for (int i = 0; i < ncov_t_; ++i) p.beta_t_cov[i] = w[btcov0_ + i];
    p.eta.resize(n_eta_);
    for (int i = 0; i < n_eta_; ++i) p.eta[i] = w[eta0_ + i];
    return p;
  }

  Eigen::VectorXd pack(const Model2Params& p) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim_);
    w[bfix0_] = p.beta_fixed[0];
    w[bfix0_ + 1] = p.beta_fixed[1];
    for (int i = 0; i < ncov_m_; ++i)
      w[bmcov0_ + i] = p.beta_m_cov.size() > i ? p.beta_m_cov[i] : 0.0;
    w[bzm_] = p.beta_zm;
    w[bzmt_] = p.beta_zm_time;
    w[leps_] = std::log(p.sigma_eps2);
    if (rdim_ == 1) {
      w[d0_] = 0.5 * std::log(p.D(0, 0));
    } else {
      Eigen::MatrixXd L = cholesky_lower(p.D);
      w[d0_] = std::log(L(0, 0));
      w[d0_ + 1] = L(1, 0);
      w[d0_ + 2] = std::log(L(1, 1));
    }
    if (nu0_ >= 0) {
      Eigen::Matrix2d L = cholesky_lower(p.sigma_nu);
      w[nu0_] = std::log(L(0, 0));
      w[nu0_ + 1] = L(1, 0);
      w[nu0_ + 2] = std::log(L(1, 1));
    }
    if (cfg_.hazard == HazardKind::Splines) {
      for (int i = 0; i < nbt_; ++i) w[coef_t0_ + i] = std::sqrt(p.coef_t[i]);
    } else {
      w[wb0_] = std::log(p.weibull_shape);
      w[wb0_ + 1] = std::log(p.weibull_scale);
    }
    w[bzt_] = p.beta_zt;
    for (int i = 0; i < ncov_t_; ++i)
      w[btcov0_ + i] = p.beta_t_cov.size() > i ? p.beta_t_cov[i] : 0.0;
    for (int i = 0; i < n_eta_; ++i)
      w[eta0_ + i] = p.eta.size() > i ? p.eta[i] : 0.0;
    return w;
  }

  struct NaturalParam {
    std::string name;
    double estimate;
    double se;
    bool is_marker;  // rendering hint: longitudinal vs terminal block
  };

  std::vector<NaturalParam> natural_table(
      const Eigen::VectorXd& w, const Eigen::MatrixXd& vcov,
      const std::vector<std::string>& mcov_names,
      const std::vector<std::string>& tcov_names) const {
    std::vector<NaturalParam> out;
    auto push1 = [&](const std::string& name, double est, int idx, double jac,
                     bool marker) {
      double var = jac * vcov(idx, idx) * jac;
      out.push_back({name, est, std::sqrt(std::max(0.0, var)), marker});
    };
    push1("Intercept", w[bfix0_], bfix0_, 1.0, true);
    push1("year", w[bfix0_ + 1], bfix0_ + 1, 1.0, true);
    for (int i = 0; i < ncov_m_; ++i)
      push1(mcov_names[static_cast<std::size_t>(i)], w[bmcov0_ + i], bmcov0_ + i,
            1.0, true);
    push1("treatment", w[bzm_], bzm_, 1.0, true);
    push1("year:treatment", w[bzmt_], bzmt_, 1.0, true);
    push1("beta_T:treatment", w[bzt_], bzt_, 1.0, false);
    for (int i = 0; i < ncov_t_; ++i)
      push1("beta_T:" + tcov_names[static_cast<std::size_t>(i)], w[btcov0_ + i],
            btcov0_ + i, 1.0, false);
    for (int i = 0; i < n_eta_; ++i)
      push1(n_eta_ == 1 ? std::string("association") : "association_" + std::to_string(i + 1),
            w[eta0_ + i], eta0_ + i, 1.0, false);
    double eps2 = std::exp(w[leps_]);
    // residual standard error: d sqrt(e^x) / dx = sqrt(e^x)/2
    push1("residual_se", std::sqrt(eps2), leps_, 0.5 * std::sqrt(eps2), true);
    if (cfg_.hazard == HazardKind::Weibull) {
      double shp = std::exp(w[wb0_]), scl = std::exp(w[wb0_ + 1]);
      push1("weibull_shape", shp, wb0_, shp, false);
      push1("weibull_scale", scl, wb0_ + 1, scl, false);
    }
    return out;
  }

  Eigen::Matrix3d sigma_block_cov(const Eigen::VectorXd& w,
                                  const Eigen::MatrixXd& vcov) const {
    if (nu0_ < 0) throw Error("the fit has no trial-level effects");
    double l11 = std::exp(w[nu0_]), l21 = w[nu0_ + 1], l22 = std::exp(w[nu0_ + 2]);
    Eigen::Matrix3d J;
    J << 2.0 * l11 * l11, 0.0, 0.0,
         0.0, 2.0 * l21, 2.0 * l22 * l22,
         l11 * l21, l11, 0.0;
    Eigen::Matrix3d Vw = vcov.block(nu0_, nu0_, 3, 3);
    return J * Vw * J.transpose();
  }

 private:
  Model2Config cfg_;
  int rdim_, ncov_m_, ncov_t_, nbt_;
  int bfix0_ = 0, bmcov0_ = 0, bzm_ = 0, bzmt_ = 0, leps_ = 0, d0_ = 0,
      nu0_ = -1, coef_t0_ = -1, wb0_ = -1, bzt_ = 0, btcov0_ = 0, eta0_ = 0;
  int n_eta_ = 1;
  int dim_ = 0;
};

// Least-squares start for the marker submodel; marginal event rate for the
// hazard; zero association.
inline Model2Params initial_model2_params(const LongitudinalDataset& ds,
                                          const Model2Config& cfg,
                                          const std::optional<SplineBasis>& basis,
                                          int random_dim) {
  const std::size_t nm = ds.measurements.size();
  const int ncov_m = static_cast<int>(ds.longi_covariate_names.size());
  Eigen::MatrixXd A(nm, 4 + ncov_m);
  Eigen::VectorXd y(nm);
  std::vector<int> trt_of(ds.survival.size() + 1, 0);
  for (const auto& s : ds.survival) trt_of[static_cast<std::size_t>(s.id)] = s.trt;
  for (std::size_t k = 0; k < nm; ++k) {
    const auto& m = ds.measurements[k];
    int z = trt_of[static_cast<std::size_t>(m.id)];
    A(static_cast<Eigen::Index>(k), 0) = 1.0;
    A(static_cast<Eigen::Index>(k), 1) = m.timevar;
    A(static_cast<Eigen::Index>(k), 2) = z;
    A(static_cast<Eigen::Index>(k), 3) = z * m.timevar;
    for (int c = 0; c < ncov_m; ++c)
      A(static_cast<Eigen::Index>(k), 4 + c) = m.covariates[static_cast<std::size_t>(c)];
    y[static_cast<Eigen::Index>(k)] = m.value;
  }
  Eigen::VectorXd beta = (A.transpose() * A)
                             .ldlt()
                             .solve(A.transpose() * y);
  double rss = (y - A * beta).squaredNorm();
  double dof = std::max<double>(1.0, static_cast<double>(nm) - beta.size());

  Model2Params p;
  p.beta_fixed.resize(2);
  p.beta_fixed << beta[0], beta[1];
  p.beta_zm = beta[2];
  p.beta_zm_time = beta[3];
  p.beta_m_cov.resize(ncov_m);
  for (int c = 0; c < ncov_m; ++c) p.beta_m_cov[c] = beta[4 + c];
  p.sigma_eps2 = std::max(1e-4, rss / dof * 0.5);  // half to the residual
  p.D = Eigen::MatrixXd::Identity(random_dim, random_dim) * 0.5;
  p.sigma_nu << 0.5, 0.1, 0.1, 0.5;
  double events = 0.0, time = 0.0;
  for (const auto& s : ds.survival) {
    events += s.status_t;
    time += s.time_t;
  }
  double rate = std::max(events, 0.5) / std::max(time, 1e-12);
  if (cfg.hazard == HazardKind::Splines) {
    p.coef_t = marginal_rate_coef(*basis, rate);
  } else {
    p.weibull_shape = 1.0;
    p.weibull_scale = 1.0 / rate;
  }
  p.beta_zt = 0.0;
  p.beta_t_cov = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.surv_covariate_names.size()));
  p.eta = Eigen::VectorXd::Zero(cfg.link == LinkKind::SharedRandomEffects ? random_dim : 1);
  return p;
}

struct Model2FitOptions {
  int n_knots = 7;
  KnotPlacement placement = KnotPlacement::Equidistant;
  Model2Config cfg;
  int random_dim = 2;  // 1 = intercept, 2 = intercept + slope
  ConvergenceLimits limits;
  int maxit = 350;
  int nb_mc = 300;   // center-level Monte-Carlo points
  int n_nodes = 9;   // Gauss-Hermite nodes per random dimension
  std::uint64_t seed = 0;
};

struct Model2Fit {
  Model2Fit(Model2Config c, std::optional<SplineBasis> b, Model2Transform t)
      : cfg(std::move(c)), hazard_basis(std::move(b)), transform(std::move(t)) {}

  Model2Config cfg;
  std::optional<SplineBasis> hazard_basis;
  Model2Transform transform;
  Eigen::VectorXd working;
  Eigen::MatrixXd vcov_working;
  Model2Params params;
  double loglik_pen = 0.0;
  double loglik_unpen = 0.0;
  double lcv = 0.0;
  int n_iter = 0;
  bool converged = false;
  double crit_param = 0.0, crit_loglik = 0.0, crit_gradient = 0.0;
  double gradient_check_rel = 0.0;
  MCSampler mc;
  int n_nodes = 9;
  std::vector<std::string> mcov_names, tcov_names;
  double t_max = 0.0;

  Eigen::Matrix3d sigma_block_cov() const {
    return transform.sigma_block_cov(working, vcov_working);
  }
  double var_beta_zt() const {
    int i = transform.idx_beta_zt();
    return vcov_working(i, i);
  }
};

inline Model2Fit fit_model2(const LongitudinalDataset& ds, const Model2FitOptions& opt) {
  Model2Config cfg = opt.cfg;
  cfg.use_centers = cfg.use_centers && ds.n_centers > 1;
  std::optional<SplineBasis> basis;
  if (cfg.hazard == HazardKind::Splines) {
    std::vector<double> times;
    for (const auto& s : ds.survival) times.push_back(s.time_t);
    basis = make_basis(SplineKind::M, opt.n_knots, opt.placement, times);
  }
  MCSampler mc{opt.nb_mc, opt.seed, false};
  Model2Likelihood lik(ds, cfg, basis, gh_rule(opt.n_nodes), mc);
  Model2Params init = initial_model2_params(ds, cfg, basis, opt.random_dim);
  lik.set_adaptive(init);
  Model2Transform tr(cfg, opt.random_dim,
                     static_cast<int>(ds.longi_covariate_names.size()),
                     static_cast<int>(ds.surv_covariate_names.size()),
                     basis ? basis->n_basis() : 0);
  Eigen::VectorXd w0 = tr.pack(init);
  Objective obj = [&](const Eigen::VectorXd& w) { return lik.penalized(tr.unpack(w)); };
  OptimResult res = maximize(obj, w0, opt.limits, opt.maxit);

  Model2Fit fit(cfg, basis, tr);
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
  fit.mc = mc;
  fit.n_nodes = opt.n_nodes;
  fit.mcov_names = ds.longi_covariate_names;
  fit.tcov_names = ds.surv_covariate_names;
  fit.t_max = basis ? basis->upper() : 0.0;

  fit.loglik_unpen = lik.unpenalized(fit.params);
  Eigen::VectorXd g_unpen;
  Eigen::MatrixXd h_unpen;
  fd::gradient_hessian(
      [&](const Eigen::VectorXd& w) { return -lik.unpenalized(tr.unpack(w)); },
      res.x, -fit.loglik_unpen, g_unpen, h_unpen);
  fit.lcv = lcv_criterion(res.neg_hessian, h_unpen, fit.loglik_unpen,
                          lik.n_subjects());
  return fit;
}

}  // namespace surroval
