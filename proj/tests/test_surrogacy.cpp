#include <catch2/catch_amalgamated.hpp>

#include "surroval/simulate.hpp"
#include "surroval/surrogacy.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace surroval;
using helpers::const_hazard_coef;
using helpers::flat_bases;

namespace {

// latent (S, T) sample at z = 0, covariate-free, for the tau oracle
std::vector<std::pair<double, double>> simulate_latent_pairs(
    const Model1Params& p, const Model1Bases& bases, int n, std::uint64_t seed) {
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(n));
  Rng rng(seed, streams::kGeneric, 42);
  double sd_t = std::sqrt(p.theta2), sd_u = std::sqrt(p.gamma2);
  for (int i = 0; i < n; ++i) {
    double w = sd_t * rng.normal();
    double u = sd_u * rng.normal();
    out.push_back(draw_latent_pair(p, bases, w + u, p.zeta * w + p.alpha * u, rng));
  }
  return out;
}

double bisect_root(const std::function<double(double)>& f, double lo, double hi) {
  double flo = f(lo);
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double fm = f(mid);
    if ((fm <= 0.0) == (flo <= 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-12 * std::max(1.0, std::fabs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("Kendall tau without mediation", "[surrogacy]") {
  Model1Params p;
  Model1Bases bases = flat_bases(10.0);
  p.coef_s = const_hazard_coef(bases.basis_s, 1.0);
  p.coef_t = const_hazard_coef(bases.basis_t, 0.5);

  SECTION("independence gives exactly zero") {
    p.theta2 = 0.0;
    p.gamma2 = 0.0;
    MCSampler mc{2000, 3, false};
    KendallTau kt = kendall_tau_no_mediation(p, mc);
    CHECK(kt.tau == 0.0);
    CHECK(kt.mc_se == 0.0);
  }

  SECTION("matches the sample tau of simulated latent pairs") {
    for (double theta2 : {0.5, 2.0, 8.0}) {
      p.theta2 = theta2;
      p.gamma2 = 0.0;
      p.zeta = 1.0;
      MCSampler mc{100000, 11, false};
      KendallTau kt = kendall_tau_no_mediation(p, mc);
      auto pairs = simulate_latent_pairs(p, bases, 50000, 7);
      double sample = oracles::sample_kendall_tau(pairs);
      INFO("theta2 = " << theta2 << " analytic " << kt.tau << " sample " << sample);
      REQUIRE(std::fabs(kt.tau - sample) <= 0.02);
    }
  }

  SECTION("rejects a model with a direct effect") {
    Model1Params pm = p;
    pm.gamma_fn_coef = Eigen::VectorXd::Constant(3, 0.5);
    MCSampler mc{100, 0, false};
    REQUIRE_THROWS_AS(kendall_tau_no_mediation(pm, mc), MediationPresent);
  }
}

TEST_CASE("Kendall tau under mediation", "[surrogacy]") {
  Model1Bases bases = flat_bases(10.0, 10.0);
  Model1Params p;
  p.coef_s = const_hazard_coef(bases.basis_s, 1.0);
  p.coef_t = const_hazard_coef(bases.basis_t, 0.5);
  p.theta2 = 2.0;
  p.gamma2 = 0.0;

  SECTION("zero direct effect reduces to the product form") {
    p.gamma_fn_coef = Eigen::VectorXd::Zero(bases.basis_g->n_basis());
    MCSampler mc{20000, 4, false};
    KendallTau general = kendall_tau_mediation(p, bases, mc, 32);
    Model1Params p0 = p;
    p0.gamma_fn_coef = Eigen::VectorXd();
    KendallTau product = kendall_tau_no_mediation(p0, mc);
    REQUIRE(std::fabs(general.tau - product.tau) <=
            2.0 * (general.mc_se + product.mc_se) + 5e-3);
  }

  SECTION("constant positive direct effect raises tau and matches simulation") {
    p.gamma_fn_coef = Eigen::VectorXd::Constant(bases.basis_g->n_basis(), 1.0);
    MCSampler mc{20000, 4, false};
    KendallTau with = kendall_tau_mediation(p, bases, mc, 48);
    Model1Params p0 = p;
    p0.gamma_fn_coef = Eigen::VectorXd::Zero(bases.basis_g->n_basis());
    KendallTau without = kendall_tau_mediation(p0, bases, mc, 48);
    REQUIRE(with.tau > without.tau);

    auto pairs = simulate_latent_pairs(p, bases, 50000, 21);
    double sample = oracles::sample_kendall_tau(pairs);
    INFO("analytic " << with.tau << " sample " << sample);
    REQUIRE(std::fabs(with.tau - sample) <= 0.02);
  }
}

TEST_CASE("trial-level R2", "[surrogacy]") {
  Eigen::Matrix3d v0 = Eigen::Matrix3d::Zero();

  SECTION("Cauchy-Schwarz extremes") {
    Eigen::Matrix2d s;
    s << 1.0, 0.0, 0.0, 2.0;
    CHECK(r2_trial(s, v0).r2 == 0.0);
    s << 1.0, std::sqrt(2.0), std::sqrt(2.0), 2.0;
    CHECK(r2_trial(s, v0).r2 == Catch::Approx(1.0));
  }

  SECTION("printed application values") {
    Eigen::Matrix2d s;
    s << 0.551, 0.575, 0.575, 0.601;
    R2Result r = r2_trial(s, v0);
    CHECK(r.r2 == Catch::Approx(0.9984).margin(1e-3));
    CHECK(r.strength == "High");
    s << 0.514, 0.899, 0.899, 1.572;
    R2Result r2 = r2_trial(s, v0);
    CHECK(r2.r2 > 1.0);  // estimation noise pushes past one
    CHECK(r2.r2 == Catch::Approx(1.0002).margin(1e-3));
    CHECK(r2.r2_clamped == 1.0);
  }

  SECTION("delta-method SE matches finite differences of the ratio") {
    Eigen::Matrix2d s;
    s << 0.5, 0.3, 0.3, 0.8;
    Eigen::Matrix3d v;
    v << 0.02, 0.004, 0.003,
         0.004, 0.05, 0.006,
         0.003, 0.006, 0.01;
    R2Result r = r2_trial(s, v);
    auto ratio = [](double s1, double s2, double s12) {
      return s12 * s12 / (s1 * s2);
    };
    double h = 1e-6;
    Eigen::Vector3d g;
    g[0] = (ratio(0.5 + h, 0.8, 0.3) - ratio(0.5 - h, 0.8, 0.3)) / (2 * h);
    g[1] = (ratio(0.5, 0.8 + h, 0.3) - ratio(0.5, 0.8 - h, 0.3)) / (2 * h);
    g[2] = (ratio(0.5, 0.8, 0.3 + h) - ratio(0.5, 0.8, 0.3 - h)) / (2 * h);
    double want = std::sqrt(g.dot(v * g));
    CHECK(r.se_delta == Catch::Approx(want).epsilon(1e-6));
    CHECK(r.ci_lo == Catch::Approx(r.r2 - 1.959963985 * want).margin(1e-6));
  }

  SECTION("strength labels follow the printed rule") {
    CHECK(strength_label(0.49) == "Low");
    CHECK(strength_label(0.4901) == "Medium");
    CHECK(strength_label(0.7199) == "Medium");
    CHECK(strength_label(0.72) == "High");
  }

  SECTION("degenerate sigma rejected") {
    Eigen::Matrix2d s;
    s << 0.0, 0.0, 0.0, 1.0;
    REQUIRE_THROWS_AS(r2_trial(s, v0), NotPositiveDefinite);
  }
}

TEST_CASE("surrogate threshold effect", "[surrogacy]") {
  SECTION("no covariance means no threshold") {
    Eigen::Matrix2d s;
    s << 1.0, 0.0, 0.0, 1.0;
    CHECK_FALSE(ste_root(-1.0, s, 0.0).has_value());
  }

  SECTION("closed form equals the bisection root") {
    Eigen::Matrix2d s;
    s << 1.0, 0.9, 0.9, 1.0;
    SteOptions opt;
    opt.include_var_beta_zt = false;
    opt.direction = SteDirection::Upper;
    auto root = ste_root(-1.0, s, 0.0, opt);
    REQUIRE(root.has_value());
    double v = 1.0 - 0.81;
    double z = norm_quantile(0.975);
    auto upper = [&](double nu) { return -1.0 + 0.9 * nu + z * std::sqrt(v); };
    double want = bisect_root(upper, -100.0, 100.0);
    CHECK(*root == Catch::Approx(want).margin(1e-8));
    CHECK(upper(*root) == Catch::Approx(0.0).margin(1e-10));
  }

  SECTION("50 random admissible parameter sets, both directions") {
    Rng rng(4, streams::kGeneric, 9);
    for (int rep = 0; rep < 50; ++rep) {
      double s1 = 0.2 + rng.uniform() * 2.0;
      double s2 = 0.2 + rng.uniform() * 2.0;
      double rho = (rng.uniform() * 1.8 - 0.9);
      if (std::fabs(rho) < 0.05) rho = 0.3;
      double s12 = rho * std::sqrt(s1 * s2);
      double beta = rng.normal();
      double var_b = rng.uniform() * 0.2;
      Eigen::Matrix2d s;
      s << s1, s12, s12, s2;
      for (SteDirection dir : {SteDirection::Upper, SteDirection::Lower}) {
        SteOptions opt;
        opt.direction = dir;
        auto root = ste_root(beta, s, var_b, opt);
        REQUIRE(root.has_value());
        double v = std::max(0.0, s2 - s12 * s12 / s1) + var_b;
        double z = norm_quantile(0.975);
        double slope = s12 / s1;
        auto bound = [&](double nu) {
          return beta + slope * nu + (dir == SteDirection::Upper ? z : -z) * std::sqrt(v);
        };
        double lo = -1e6, hi = 1e6;
        if (bound(lo) > bound(hi)) std::swap(lo, hi);
        double want = bisect_root(bound, lo, hi);
        REQUIRE(*root == Catch::Approx(want).margin(1e-8));
      }
    }
  }
}

TEST_CASE("counterfactual survival and mediation curves", "[surrogacy]") {
  Model1Bases bases = flat_bases(8.0, 8.0);
  Model1Params p;
  p.coef_s = const_hazard_coef(bases.basis_s, 0.9);
  p.coef_t = const_hazard_coef(bases.basis_t, 0.35);
  p.theta2 = 1.0;
  p.gamma2 = 0.2;
  p.sigma_nu << 0.2, 0.1, 0.1, 0.2;
  p.beta_zs = -0.5;
  p.beta_zt = -0.4;
  p.gamma_fn_coef = Eigen::VectorXd::Constant(bases.basis_g->n_basis(), 0.7);
  MediationOptions opt;
  opt.n_mc = 2000;
  opt.seed = 8;
  Model1Mediation med(p, bases, {}, opt);

  SECTION("survival starts at one") {
    CHECK(med.counterfactual_survival(1, 1, 0.0) == 1.0);
    CHECK(med.counterfactual_survival(0, 0, 0.0) == 1.0);
  }

  SECTION("values in [0,1], nonincreasing in t, and TTE = NIE + NDE exactly") {
    std::vector<double> times;
    for (int i = 1; i <= 12; ++i) times.push_back(0.5 * i);
    MediationCurves c = med.curves(times);
    for (std::size_t i = 0; i < times.size(); ++i) {
      CHECK(c.s11[i] >= 0.0);
      CHECK(c.s11[i] <= 1.0);
      CHECK(c.tte[i] == c.nie[i] + c.nde[i]);  // same evaluations, exact
      if (i > 0) {
        CHECK(c.s11[i] <= c.s11[i - 1] + 1e-9);
        CHECK(c.s10[i] <= c.s10[i - 1] + 1e-9);
        CHECK(c.s00[i] <= c.s00[i - 1] + 1e-9);
      }
    }
  }

  SECTION("zero direct effect kills the indirect pathway exactly") {
    Model1Params p0 = p;
    p0.gamma_fn_coef = Eigen::VectorXd::Zero(bases.basis_g->n_basis());
    Model1Mediation med0(p0, bases, {}, opt);
    MediationCurves c = med0.curves({1.0, 2.0, 3.0});
    for (std::size_t i = 0; i < c.times.size(); ++i) {
      // common random numbers: S11 and S10 are the same computation
      CHECK(c.nie[i] == 0.0);
      CHECK(c.pte[i] == 0.0);
    }
  }

  SECTION("protective direct effect orders the curves") {
    Model1Params p0 = p;
    p0.gamma_fn_coef = Eigen::VectorXd::Zero(bases.basis_g->n_basis());
    p0.beta_zs = 0.0;
    Model1Mediation med0(p0, bases, {}, opt);
    // beta_zt < 0: treated final-endpoint survival dominates
    CHECK(med0.counterfactual_survival(1, 0, 2.0) >
          med0.counterfactual_survival(0, 0, 2.0));
  }

  SECTION("marginal survival matches a simulated Kaplan-Meier") {
    // with both arms forced to control (z = z' = 0) S^{00} is the plain
    // marginal survival of T, which the generator can reproduce
    Scenario1 sc;
    sc.k_trials = 400;
    sc.n_per_trial = 100;
    sc.params = p;
    sc.bases = bases;
    sc.params.beta_zs = 0.0;
    sc.params.beta_zt = 0.0;  // both arms identical to z = 0
    sc.seed = 3;
    SurrogacyDataset ds = simulate_model1(sc);
    std::vector<double> t;
    for (const auto& s : ds.subjects) t.push_back(s.time_t);
    std::sort(t.begin(), t.end());
    double n = static_cast<double>(t.size());
    for (double tq : {1.0, 2.0, 4.0}) {
      double emp = static_cast<double>(t.end() - std::upper_bound(t.begin(), t.end(), tq)) / n;
      double model = med.counterfactual_survival(0, 0, tq);
      INFO("t = " << tq << " empirical " << emp << " model " << model);
      CHECK(std::fabs(emp - model) < 0.02);
    }
  }
}

TEST_CASE("parametric bootstrap machinery", "[surrogacy]") {
  Eigen::VectorXd mean(2);
  mean << 1.0, -0.5;

  SECTION("degenerate covariance collapses onto the point estimate") {
    WorkingSampler sampler(mean, Eigen::MatrixXd::Zero(2, 2));
    BootstrapOptions opt;
    opt.n_boot = 200;
    opt.seed = 1;
    BootstrapCI ci = parametric_bootstrap_scalar(
        sampler, opt,
        [](const Eigen::VectorXd& w, std::uint64_t) { return w[0] + w[1]; });
    CHECK(ci.lo == Catch::Approx(0.5).margin(1e-12));
    CHECK(ci.hi == Catch::Approx(0.5).margin(1e-12));
    CHECK(ci.n_rejected == 0);
  }

  SECTION("percentiles of a known Gaussian functional") {
    Eigen::MatrixXd v(2, 2);
    v << 0.04, 0.0, 0.0, 0.09;
    WorkingSampler sampler(mean, v);
    BootstrapOptions opt;
    opt.n_boot = 20000;
    opt.seed = 2;
    BootstrapCI ci = parametric_bootstrap_scalar(
        sampler, opt,
        [](const Eigen::VectorXd& w, std::uint64_t) { return w[0]; });
    CHECK(ci.lo == Catch::Approx(1.0 - 1.96 * 0.2).margin(0.01));
    CHECK(ci.hi == Catch::Approx(1.0 + 1.96 * 0.2).margin(0.01));
  }

  SECTION("too many rejections aborts") {
    WorkingSampler sampler(mean, Eigen::MatrixXd::Identity(2, 2));
    BootstrapOptions opt;
    opt.n_boot = 50;
    opt.seed = 3;
    REQUIRE_THROWS_AS(
        parametric_bootstrap_scalar(
            sampler, opt,
            [](const Eigen::VectorXd&, std::uint64_t) -> double {
              throw NotPositiveDefinite("always");
            }),
        TooManyRejections);
  }

  SECTION("replicates are deterministic given the seed") {
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(2, 2) * 0.01;
    WorkingSampler sampler(mean, v);
    BootstrapOptions opt;
    opt.n_boot = 500;
    opt.seed = 77;
    auto f = [](const Eigen::VectorXd& w, std::uint64_t) { return w[0] * w[1]; };
    BootstrapCI a = parametric_bootstrap_scalar(sampler, opt, f);
    BootstrapCI b = parametric_bootstrap_scalar(sampler, opt, f);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.median == b.median);
  }
}
