#include <catch2/catch_amalgamated.hpp>

#include "surroval/splines.hpp"
#include "oracles.hpp"

#include <random>

using namespace surroval;

TEST_CASE("order-1 M-spline is the scaled indicator", "[splines]") {
  SplineBasis b(SplineKind::M, 1, {0.0, 1.0, 2.0});
  REQUIRE(b.n_basis() == 2);
  auto v = b.eval(0.5);
  CHECK(v[0] == Catch::Approx(1.0));
  CHECK(v[1] == Catch::Approx(0.0));
  auto w = b.eval(1.5);
  CHECK(w[0] == Catch::Approx(0.0));
  CHECK(w[1] == Catch::Approx(1.0));
}

TEST_CASE("cubic B-spline basis sums to one at interior points", "[splines]") {
  SplineBasis b(SplineKind::B, 4, {0.0, 1.3, 2.0, 3.7, 5.0});
  std::mt19937 gen(42);
  std::uniform_real_distribution<double> unif(0.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    double t = unif(gen);
    auto v = b.eval(t);
    double s = 0.0;
    for (double x : v) s += x;
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  }
  // boundary values included
  auto at0 = b.eval(0.0);
  auto at5 = b.eval(5.0);
  double s0 = 0.0, s5 = 0.0;
  for (double x : at0) s0 += x;
  for (double x : at5) s5 += x;
  CHECK(s0 == Catch::Approx(1.0).margin(1e-12));
  CHECK(s5 == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("B and M values match the recursive oracle", "[splines]") {
  std::vector<double> knots{0.0, 0.7, 1.9, 3.0, 4.2, 6.0};
  for (int order : {2, 3, 4}) {
    SplineBasis bb(SplineKind::B, order, knots);
    SplineBasis mb(SplineKind::M, order, knots);
    // rebuild the extended knots the same way
    std::vector<double> ext;
    ext.insert(ext.end(), order, knots.front());
    ext.insert(ext.end(), knots.begin() + 1, knots.end() - 1);
    ext.insert(ext.end(), order, knots.back());
    std::mt19937 gen(7);
    std::uniform_real_distribution<double> unif(1e-6, 6.0 - 1e-6);
    for (int rep = 0; rep < 100; ++rep) {
      double t = unif(gen);
      auto vb = bb.eval(t);
      auto vm = mb.eval(t);
      for (int i = 0; i < bb.n_basis(); ++i) {
        double ref = oracles::bspline_recursive(ext, i, order, t);
        REQUIRE(vb[i] == Catch::Approx(ref).margin(1e-10));
        double w = ext[i + order] - ext[i];
        REQUIRE(vm[i] == Catch::Approx(order * ref / w).margin(1e-10));
        REQUIRE(vm[i] >= 0.0);
      }
    }
  }
}

TEST_CASE("each M-spline integrates to one and I-splines run 0 to 1", "[splines]") {
  SplineBasis mb(SplineKind::M, 4, {0.0, 1.0, 2.5, 4.0, 5.0});
  SplineBasis ib(SplineKind::I, 4, {0.0, 1.0, 2.5, 4.0, 5.0});
  for (int i = 0; i < mb.n_basis(); ++i) {
    double integral = oracles::simpson(
        [&](double t) { return mb.eval(t)[i]; }, 0.0, 5.0, 4000);
    REQUIRE(integral == Catch::Approx(1.0).epsilon(1e-8));
  }
  auto top = ib.eval(5.0);
  auto bottom = ib.eval(0.0);
  for (int i = 0; i < ib.n_basis(); ++i) {
    CHECK(bottom[i] == Catch::Approx(0.0).margin(1e-14));
    CHECK(top[i] == Catch::Approx(1.0).margin(1e-10));
  }
  // nondecreasing on a fine grid, and consistent with integrating M
  std::vector<double> prev(ib.n_basis(), 0.0);
  for (int g = 1; g <= 200; ++g) {
    double t = 5.0 * g / 200.0;
    auto v = ib.eval(t);
    for (int i = 0; i < ib.n_basis(); ++i) {
      REQUIRE(v[i] >= prev[i] - 1e-12);
      prev[i] = v[i];
    }
  }
  for (double t : {0.3, 1.7, 2.5, 3.9, 4.9}) {
    auto iv = ib.eval(t);
    for (int i = 0; i < ib.n_basis(); ++i) {
      double ref = oracles::simpson([&](double u) { return mb.eval(u)[i]; }, 0.0, t, 3000);
      REQUIRE(iv[i] == Catch::Approx(ref).margin(1e-8));
    }
  }
}

TEST_CASE("dI/dt equals M by central finite differences", "[splines]") {
  SplineBasis mb(SplineKind::M, 4, {0.0, 2.0, 3.5, 7.0, 10.0});
  SplineBasis ib(SplineKind::I, 4, {0.0, 2.0, 3.5, 7.0, 10.0});
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> unif(0.05, 9.95);
  for (int rep = 0; rep < 50; ++rep) {
    double t = unif(gen);
    double h = 1e-6;
    auto up = ib.eval(t + h);
    auto dn = ib.eval(t - h);
    auto m = mb.eval(t);
    for (int i = 0; i < mb.n_basis(); ++i) {
      double fd = (up[i] - dn[i]) / (2.0 * h);
      REQUIRE(fd == Catch::Approx(m[i]).margin(1e-6 * std::max(1.0, m[i])));
    }
  }
}

TEST_CASE("make_basis places knots per the requested rule", "[splines]") {
  SECTION("equidistant, n_knots = 6 on (0, 10]") {
    std::vector<double> times{0.5, 3.0, 10.0, 7.7, 4.2};
    SplineBasis b = make_basis(SplineKind::M, 6, KnotPlacement::Equidistant, times);
    REQUIRE(b.knots().size() == 6);
    CHECK(b.knots()[0] == Catch::Approx(0.0));
    CHECK(b.knots()[1] == Catch::Approx(2.0));
    CHECK(b.knots()[2] == Catch::Approx(4.0));
    CHECK(b.knots()[3] == Catch::Approx(6.0));
    CHECK(b.knots()[4] == Catch::Approx(8.0));
    CHECK(b.knots()[5] == Catch::Approx(10.0));
    CHECK(b.n_basis() == 4 + 4);  // interior + order
  }
  SECTION("below the documented minimum") {
    std::vector<double> times{1.0, 2.0};
    REQUIRE_THROWS_AS(
        make_basis(SplineKind::M, 3, KnotPlacement::Equidistant, times),
        KnotRangeError);
  }
  SECTION("percentile knots match a sort-based quantile oracle") {
    std::mt19937 gen(11);
    std::exponential_distribution<double> expo(0.3);
    std::vector<double> times;
    for (int i = 0; i < 500; ++i) times.push_back(expo(gen) + 0.01);
    SplineBasis b = make_basis(SplineKind::M, 7, KnotPlacement::Percentile, times);
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    for (int j = 1; j <= 5; ++j) {
      double p = j / 6.0;
      double h = (sorted.size() - 1.0) * p;
      std::size_t lo = static_cast<std::size_t>(std::floor(h));
      double ref = sorted[lo] + (h - std::floor(h)) * (sorted[lo + 1] - sorted[lo]);
      REQUIRE(b.knots()[static_cast<std::size_t>(j)] == Catch::Approx(ref));
    }
  }
  SECTION("degenerate data") {
    std::vector<double> same(20, 4.0);
    REQUIRE_THROWS_AS(
        make_basis(SplineKind::M, 6, KnotPlacement::Percentile, same),
        DegenerateData);
  }
}

TEST_CASE("evaluation outside the boundary knots throws", "[splines]") {
  SplineBasis b(SplineKind::M, 4, {0.0, 1.0, 2.0, 3.0});
  REQUIRE_THROWS_AS(b.eval(3.5), OutOfSupport);
  REQUIRE_THROWS_AS(b.eval(-0.5), OutOfSupport);
}

TEST_CASE("curvature penalty", "[splines]") {
  SplineBasis b(SplineKind::M, 4, {0.0, 1.0, 2.2, 3.0, 4.5, 6.0});
  Eigen::MatrixXd P = b.curvature_penalty();
  const int n = b.n_basis();

  SECTION("linear hazard has zero penalty") {
    // least-squares fit of coefficients reproducing 0.7 + 0.3 t
    Eigen::MatrixXd A(61, n);
    Eigen::VectorXd y(61);
    for (int g = 0; g <= 60; ++g) {
      double t = 6.0 * g / 60.0;
      auto row = b.eval(t);
      for (int i = 0; i < n; ++i) A(g, i) = row[static_cast<std::size_t>(i)];
      y(g) = 0.7 + 0.3 * t;
    }
    Eigen::VectorXd coef = A.colPivHouseholderQr().solve(y);
    // confirm the fit is exact (cubic splines reproduce linears)
    REQUIRE((A * coef - y).cwiseAbs().maxCoeff() < 1e-9);
    double pen = coef.dot(P * coef);
    REQUIRE(std::fabs(pen) < 1e-8);
  }

  SECTION("quadratic form matches composite-Simpson integration of (lambda'')^2") {
    std::mt19937 gen(5);
    std::normal_distribution<double> norm(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd coef(n);
      for (int i = 0; i < n; ++i) coef[i] = norm(gen);
      auto second = [&](double t) {
        auto dd = b.eval_deriv(t, 2);
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += coef[i] * dd[static_cast<std::size_t>(i)];
        return s * s;
      };
      // integrate span by span: the integrand kinks at the knots
      double ref = 0.0;
      for (std::size_t s = 0; s + 1 < b.knots().size(); ++s)
        ref += oracles::simpson(second, b.knots()[s], b.knots()[s + 1], 400);
      double got = coef.dot(P * coef);
      REQUIRE(got == Catch::Approx(ref).epsilon(1e-8));
    }
  }

  SECTION("symmetric positive semidefinite") {
    REQUIRE((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-12 * es.eigenvalues().maxCoeff());
  }

  SECTION("order too low") {
    SplineBasis lin(SplineKind::M, 2, {0.0, 1.0, 2.0});
    REQUIRE_THROWS_AS(lin.curvature_penalty(), OrderTooLow);
  }
}
