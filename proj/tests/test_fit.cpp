#include <catch2/catch_amalgamated.hpp>

#include "surroval/fit_long.hpp"
#include "surroval/fit_tte.hpp"
#include "surroval/simulate.hpp"
#include "surroval/surrogacy.hpp"
#include "helpers.hpp"

using namespace surroval;
using helpers::const_hazard_coef;
using helpers::flat_bases;

namespace {

Scenario1 small_scenario(std::uint64_t seed) {
  Scenario1 sc;
  sc.k_trials = 8;
  sc.n_per_trial = 60;
  sc.bases = flat_bases(10.0);
  sc.params.coef_s = const_hazard_coef(sc.bases.basis_s, 0.9);
  sc.params.coef_t = const_hazard_coef(sc.bases.basis_t, 0.45);
  sc.params.theta2 = 1.5;
  sc.params.gamma2 = 0.0;
  sc.params.sigma_nu << 0.3, 0.24, 0.24, 0.3;
  sc.params.beta_zs = -0.5;
  sc.params.beta_zt = -0.4;
  sc.censoring.admin_time = 9.0;
  sc.censoring.exp_rate = 0.02;
  sc.seed = seed;
  return sc;
}

Model1FitOptions small_fit_options() {
  Model1FitOptions opt;
  opt.n_knots = 5;
  opt.cfg.include_trial_frailty = false;
  opt.cfg.estimate_zeta = false;
  opt.cfg.estimate_alpha = false;
  opt.cfg.penalty = {1.0, 1.0};
  opt.nb_mc = 64;
  opt.nb_gh = 12;
  opt.nb_gh2 = 20;
  opt.maxit = 60;
  opt.seed = 1;
  return opt;
}

}  // namespace

TEST_CASE("transform round-trips the parameter vector", "[fit]") {
  Model1Config cfg;
  cfg.mediation = true;
  cfg.g_nknots = 2;
  Model1Transform tr(cfg, 7, 7, 6, 0);
  Eigen::VectorXd w = Eigen::VectorXd::Random(tr.dim()).cwiseAbs() + Eigen::VectorXd::Constant(tr.dim(), 0.05);
  Model1Params p = tr.unpack(w);
  Eigen::VectorXd w2 = tr.pack(p);
  Model1Params p2 = tr.unpack(w2);
  CHECK((p.coef_s - p2.coef_s).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.theta2 == Catch::Approx(p2.theta2));
  CHECK((p.sigma_nu - p2.sigma_nu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.beta_zs == Catch::Approx(p2.beta_zs));
  CHECK((p.gamma_fn_coef - p2.gamma_fn_coef).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("small meta-analysis fit recovers the generator", "[fit][slowish]") {
  SurrogacyDataset ds = simulate_model1(small_scenario(101));
  Model1FitOptions opt = small_fit_options();
  Model1Fit fit = fit_model1(ds, opt);
  REQUIRE(fit.converged);
  CHECK(fit.crit_param <= opt.limits.param);
  CHECK(fit.crit_loglik <= opt.limits.loglik);
  CHECK(fit.crit_gradient <= opt.limits.gradient);

  // loose recovery checks at this sample size
  Eigen::VectorXd se = standard_errors_from_vcov(fit.vcov_working);
  double se_bzs = std::sqrt(fit.var_beta_zs());
  double se_bzt = std::sqrt(fit.var_beta_zt());
  INFO("beta_zs " << fit.params.beta_zs << " (se " << se_bzs << ") beta_zt "
                  << fit.params.beta_zt << " (se " << se_bzt << ") theta2 "
                  << fit.params.theta2);
  CHECK(std::fabs(fit.params.beta_zs - (-0.5)) < 3.0 * se_bzs + 0.05);
  CHECK(std::fabs(fit.params.beta_zt - (-0.4)) < 3.0 * se_bzt + 0.05);
  CHECK(fit.params.theta2 > 0.5);
  CHECK(fit.params.theta2 < 4.0);

  SECTION("natural-scale table carries the headline names") {
    auto table = fit.transform.natural_table(fit.working, fit.vcov_working,
                                             fit.covariate_names);
    std::vector<std::string> names;
    for (const auto& row : table) names.push_back(row.name);
    CHECK(std::find(names.begin(), names.end(), "theta") != names.end());
    CHECK(std::find(names.begin(), names.end(), "sigma2_S") != names.end());
    CHECK(std::find(names.begin(), names.end(), "sigma_ST") != names.end());
    CHECK(std::find(names.begin(), names.end(), "beta_S") != names.end());
    CHECK(std::find(names.begin(), names.end(), "beta_T") != names.end());
    // fixed parameters carry no estimate row
    CHECK(std::find(names.begin(), names.end(), "zeta") == names.end());
    CHECK(std::find(names.begin(), names.end(), "alpha") == names.end());
    for (const auto& row : table) CHECK(row.se >= 0.0);
  }

  SECTION("fit is bit-identical across thread counts") {
    int saved = ThreadLimit::get();
    ThreadLimit::set(1);
    Model1Fit f1 = fit_model1(ds, opt);
    ThreadLimit::set(2);
    Model1Fit f2 = fit_model1(ds, opt);
    ThreadLimit::set(saved);
    REQUIRE(f1.working.size() == f2.working.size());
    for (int i = 0; i < f1.working.size(); ++i)
      REQUIRE(f1.working[i] == f2.working[i]);
    REQUIRE(f1.loglik_pen == f2.loglik_pen);
    REQUIRE(f1.lcv == f2.lcv);
  }
}

TEST_CASE("internal gradient agrees with Richardson extrapolation on the "
          "penalized likelihood", "[fit]") {
  SurrogacyDataset ds = simulate_model1([] {
    Scenario1 sc = small_scenario(7);
    sc.k_trials = 4;
    sc.n_per_trial = 25;
    return sc;
  }());
  Model1Config cfg;
  cfg.include_trial_frailty = false;
  cfg.estimate_zeta = false;
  cfg.estimate_alpha = false;
  cfg.penalty = {0.5, 0.5};
  Model1Bases bases = make_model1_bases(ds, cfg, 5);
  MCSampler mc{32, 3, false};
  Model1Likelihood lik(ds, cfg, bases, gh_rule(8), mc);
  Model1Transform tr(cfg, bases.basis_s.n_basis(), bases.basis_t.n_basis(), 0, 0);
  Eigen::VectorXd w0 = tr.pack(initial_model1_params(ds, bases, cfg));
  Objective obj = [&](const Eigen::VectorXd& w) { return lik.penalized(tr.unpack(w)); };

  Rng rng(5, streams::kGeneric, 77);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd w = w0;
    for (int i = 0; i < w.size(); ++i) w[i] += 0.15 * rng.normal();
    double f0 = obj(w);
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    fd::gradient_hessian(obj, w, f0, grad, hess);
    Eigen::VectorXd rich = fd::gradient_richardson(obj, w);
    double rel = (grad - rich).norm() / std::max(1.0, rich.norm());
    INFO("rep " << rep << " rel " << rel);
    REQUIRE(rel <= 1e-4);
  }
}

TEST_CASE("auto-kappa grid search picks the lowest LCV", "[fit][slowish]") {
  SurrogacyDataset ds = simulate_model1([] {
    Scenario1 sc = small_scenario(31);
    sc.k_trials = 4;
    sc.n_per_trial = 40;
    return sc;
  }());
  Model1FitOptions opt = small_fit_options();
  opt.nb_mc = 32;
  opt.nb_gh = 8;
  opt.nb_gh2 = 0;
  std::vector<std::pair<double, double>> trace;
  Model1Fit best = fit_model1_auto_kappa(ds, opt, &trace);
  REQUIRE(!trace.empty());
  for (const auto& [kappa, lcv] : trace) {
    INFO("kappa " << kappa << " lcv " << lcv);
    REQUIRE(best.lcv <= lcv + 1e-12);
  }
}

TEST_CASE("longitudinal fit on simulated data", "[fit][slowish]") {
  Scenario2 sc;
  sc.k_centers = 1;
  sc.n_per_center = 150;
  sc.cfg.link = LinkKind::CurrentLevel;
  sc.cfg.hazard = HazardKind::Weibull;
  sc.cfg.use_centers = false;
  sc.params.beta_fixed << 3.0, -0.8;
  sc.params.beta_zm = 0.0;
  sc.params.beta_zm_time = 0.5;
  sc.params.sigma_eps2 = 0.5;
  sc.params.D << 0.8, -0.2, -0.2, 0.5;
  sc.params.weibull_shape = 1.3;
  sc.params.weibull_scale = 2.5;
  sc.params.beta_zt = -0.2;
  sc.params.eta = Eigen::VectorXd::Constant(1, 0.3);
  sc.measurement_dt = 0.3;
  sc.censoring.admin_time = 3.5;
  sc.seed = 17;
  LongitudinalDataset ds = simulate_model2(sc);

  Model2FitOptions opt;
  opt.cfg.link = LinkKind::CurrentLevel;
  opt.cfg.hazard = HazardKind::Weibull;
  opt.cfg.pseudo_adaptive = true;
  opt.n_nodes = 9;
  opt.maxit = 200;
  opt.seed = 2;
  Model2Fit fit = fit_model2(ds, opt);
  REQUIRE(fit.converged);
  INFO("intercept " << fit.params.beta_fixed[0] << " slope "
                    << fit.params.beta_fixed[1] << " eta " << fit.params.eta[0]
                    << " sigma_eps2 " << fit.params.sigma_eps2);
  CHECK(std::fabs(fit.params.beta_fixed[0] - 3.0) < 0.3);
  CHECK(std::fabs(fit.params.beta_fixed[1] - (-0.8)) < 0.3);
  CHECK(std::fabs(fit.params.beta_zm_time - 0.5) < 0.3);
  CHECK(std::fabs(fit.params.eta[0] - 0.3) < 0.2);
  CHECK(std::fabs(fit.params.sigma_eps2 - 0.5) < 0.15);

  SECTION("association table names the link") {
    auto table = fit.transform.natural_table(fit.working, fit.vcov_working,
                                             fit.mcov_names, fit.tcov_names);
    bool found = false;
    for (const auto& row : table)
      if (row.name == "association") found = true;
    CHECK(found);
  }
}

TEST_CASE("bootstrap confidence interval covers the true R2", "[fit][slow]") {
  // desk-scale coverage study: simulate, fit, bootstrap R2, check coverage
  const double true_r2 = 0.24 * 0.24 / (0.3 * 0.3);  // 0.64
  int covered = 0;
  const int n_rep = 20;
  for (int rep = 0; rep < n_rep; ++rep) {
    Scenario1 sc = small_scenario(1000 + static_cast<std::uint64_t>(rep));
    sc.k_trials = 10;
    sc.n_per_trial = 40;
    SurrogacyDataset ds = simulate_model1(sc);
    Model1FitOptions opt = small_fit_options();
    opt.nb_mc = 32;
    opt.nb_gh = 8;
    opt.nb_gh2 = 0;
    opt.maxit = 80;
    try {
      Model1Fit fit = fit_model1(ds, opt);
      WorkingSampler sampler(fit.working, fit.vcov_working);
      BootstrapOptions bopt;
      bopt.n_boot = 400;
      bopt.seed = 9000 + static_cast<std::uint64_t>(rep);
      BootstrapCI ci = parametric_bootstrap_scalar(
          sampler, bopt, [&](const Eigen::VectorXd& w, std::uint64_t) {
            Model1Params p = fit.transform.unpack(w);
            return p.sigma_nu(0, 1) * p.sigma_nu(0, 1) /
                   (p.sigma_nu(0, 0) * p.sigma_nu(1, 1));
          });
      if (ci.lo <= true_r2 && true_r2 <= ci.hi) ++covered;
    } catch (const Error&) {
      // a non-converged replicate counts against coverage
    }
  }
  INFO("covered " << covered << " of " << n_rep);
  REQUIRE(covered >= 17);
}
