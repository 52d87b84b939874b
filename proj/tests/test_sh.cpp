#include "dsplat/sh.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace dsplat;

TEST_CASE("eval_sh: zero coefficients give the plain offset") {
  const ShCoeffs c = ShCoeffs::zeros(2);
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const Vec3 rgb = eval_sh(c, rng.unit_vector());
    CHECK(rgb == Vec3(0.5, 0.5, 0.5));
  }
}

TEST_CASE("eval_sh: DC coefficient scales by Y00") {
  ShCoeffs c = ShCoeffs::zeros(0);
  c.at(0, 0) = 0.8;
  c.at(1, 0) = -0.3;
  c.at(2, 0) = 1.7;
  const Vec3 rgb = eval_sh(c, Vec3(0, 0, 1));
  CHECK(rgb[0] == doctest::Approx(0.28209479177 * 0.8 + 0.5).epsilon(1e-9));
  CHECK(rgb[1] == doctest::Approx(std::max(0.0, 0.28209479177 * -0.3 + 0.5)).epsilon(1e-9));
  CHECK(rgb[2] == doctest::Approx(0.28209479177 * 1.7 + 0.5).epsilon(1e-9));
}

TEST_CASE("eval_sh matches the angular-form textbook basis on random directions") {
  Rng rng(7);
  for (int degree = 0; degree <= 3; ++degree) {
    ShCoeffs c = ShCoeffs::zeros(degree);
    for (double& v : c.coeffs) v = rng.uniform(-0.5, 0.5);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vec3 dir = rng.unit_vector();
      const Vec3 a = eval_sh(c, dir);
      const Vec3 b = oracle::eval_sh_angular(c, dir);
      worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("eval_sh is linear in the coefficients before clamping") {
  Rng rng(3);
  ShCoeffs a = ShCoeffs::zeros(3), b = ShCoeffs::zeros(3), mix = ShCoeffs::zeros(3);
  for (double& v : a.coeffs) v = rng.uniform(-1, 1);
  for (double& v : b.coeffs) v = rng.uniform(-1, 1);
  const double s = 0.7, t = -1.3;
  for (std::size_t i = 0; i < a.coeffs.size(); ++i) mix.coeffs[i] = s * a.coeffs[i] + t * b.coeffs[i];
  for (int i = 0; i < 20; ++i) {
    const Vec3 dir = rng.unit_vector();
    const Vec3 lhs = eval_sh_raw(mix, dir) - Vec3(0.5, 0.5, 0.5);
    const Vec3 rhs = s * (eval_sh_raw(a, dir) - Vec3(0.5, 0.5, 0.5)) +
                     t * (eval_sh_raw(b, dir) - Vec3(0.5, 0.5, 0.5));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("eval_sh rejects unsupported degrees and non-unit directions") {
  CHECK_THROWS_AS(ShCoeffs(4, std::vector<double>(3 * 25, 0.0)), std::invalid_argument);
  const ShCoeffs c = ShCoeffs::zeros(1);
  CHECK_THROWS_AS(eval_sh(c, Vec3(1.0, 0.2, 0.0)), std::invalid_argument);
}

TEST_CASE("sh_basis_grad matches finite differences of the polynomial basis") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 dir = rng.unit_vector();
    double y[16];
    Vec3 dy[16];
    sh_basis_grad(16, dir, y, dy);
    const double h = 1e-6;
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 dp = dir, dm = dir;
      dp[axis] += h;
      dm[axis] -= h;
      double yp[16], ym[16];
      sh_basis(16, dp, yp);
      sh_basis(16, dm, ym);
      for (int b = 0; b < 16; ++b) {
        const double fd = (yp[b] - ym[b]) / (2 * h);
        CHECK(std::abs(fd - dy[b][axis]) <= 1e-6 + 1e-6 * std::abs(fd));
      }
    }
  }
}
