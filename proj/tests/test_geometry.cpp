#include "dsplat/geometry.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace dsplat;

TEST_CASE("quat_to_rot: identity and orthonormality") {
  CHECK((quat_to_rot(Vec4(1, 0, 0, 0)) - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Mat3 r = quat_to_rot(rng.unit_quaternion());
    CHECK((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("quat_to_rot_grads matches finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec4 q = rng.unit_quaternion();
    Mat3 dr[4];
    quat_to_rot_grads(q, dr);
    const double h = 1e-7;
    for (int k = 0; k < 4; ++k) {
      Vec4 qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      // Finite difference of the raw (unnormalized) map R(q).
      const Mat3 fd = (quat_to_rot(qp) - quat_to_rot(qm)) / (2 * h);
      CHECK((fd - dr[k]).cwiseAbs().maxCoeff() <= 1e-5);
    }
  }
}

TEST_CASE("project_gaussian: isotropic on-axis is symmetric, identity rotation is exact") {
  Camera cam = oracle::test_camera(32, 32);
  const Vec3 mean(0, 0, 4.0);
  const Vec3 scale(0.2, 0.2, 0.2);
  const ProjectedGaussian pg = project_gaussian(mean, scale, Vec4(1, 0, 0, 0), cam);
  REQUIRE(!pg.culled);
  CHECK(pg.depth == doctest::Approx(4.0));
  CHECK(pg.mean2d.x() == doctest::Approx(cam.cx));
  CHECK(pg.mean2d.y() == doctest::Approx(cam.cy));
  CHECK(pg.cov2d(0, 0) == doctest::Approx(pg.cov2d(1, 1)).epsilon(1e-12));
  CHECK(std::abs(pg.cov2d(0, 1)) <= 1e-12);
  // On the axis with identity rotation: cov = (f s / z)^2 + dilation.
  const double expected = sqr(cam.fx * 0.2 / 4.0) + 0.3;
  CHECK(pg.cov2d(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("project_gaussian: doubling the depth halves the screen extent within 1%") {
  Camera cam = oracle::test_camera(64, 64);
  const Vec3 scale(0.15, 0.1, 0.2);
  Rng rng(8);
  const Vec4 q = rng.unit_quaternion();
  const ProjectedGaussian near_pg = project_gaussian(Vec3(0.05, -0.03, 3.0), scale, q, cam, 0.0);
  const ProjectedGaussian far_pg = project_gaussian(Vec3(0.05, -0.03, 6.0), scale, q, cam, 0.0);
  REQUIRE(!near_pg.culled);
  REQUIRE(!far_pg.culled);
  const double extent_near = std::sqrt(near_pg.cov2d(0, 0));
  const double extent_far = std::sqrt(far_pg.cov2d(0, 0));
  CHECK(extent_near / extent_far == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("project_gaussian culls means behind the near plane") {
  Camera cam = oracle::test_camera();
  CHECK(project_gaussian(Vec3(0, 0, -1.0), Vec3(0.1, 0.1, 0.1), Vec4(1, 0, 0, 0), cam).culled);
  CHECK(project_gaussian(Vec3(0, 0, 0.05), Vec3(0.1, 0.1, 0.1), Vec4(1, 0, 0, 0), cam).culled);
}

TEST_CASE("project_gaussian covariance is SPD for random primitives and poses") {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const Camera cam = oracle::random_camera(rng);
    const Vec3 mean(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Vec3 scale(std::exp(rng.uniform(-3, 0.5)), std::exp(rng.uniform(-3, 0.5)),
                     std::exp(rng.uniform(-3, 0.5)));
    const ProjectedGaussian pg = project_gaussian(mean, scale, rng.unit_quaternion(), cam);
    if (pg.culled) continue;
    CHECK((pg.cov2d - pg.cov2d.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    const Eigen::SelfAdjointEigenSolver<Mat2> es(pg.cov2d);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("project_gaussian_backward matches finite differences") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Camera cam = oracle::random_camera(rng);
    std::vector<double> params = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4),
                                  0.15, 0.22, 0.09,
                                  0, 0, 0, 0};
    const Vec4 q = rng.unit_quaternion() * rng.uniform(0.8, 1.3);
    for (int k = 0; k < 4; ++k) params[6 + k] = q[k];

    // Random probe over (mean2d, cov2d, depth).
    const Vec2 wm(rng.normal(), rng.normal());
    Mat2 wc;
    wc << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    const double wd = rng.normal();
    const auto probe = [&]() {
      const ProjectedGaussian pg = project_gaussian(
          Vec3(params[0], params[1], params[2]), Vec3(params[3], params[4], params[5]),
          Vec4(params[6], params[7], params[8], params[9]), cam);
      REQUIRE(!pg.culled);
      return wm.dot(pg.mean2d) + (wc.array() * pg.cov2d.array()).sum() + wd * pg.depth;
    };
    const ProjectGaussianGrads g = project_gaussian_backward(
        Vec3(params[0], params[1], params[2]), Vec3(params[3], params[4], params[5]),
        Vec4(params[6], params[7], params[8], params[9]), cam, wm, wc, wd);
    const std::vector<double> fd = oracle::finite_diff(params, probe, 1e-5);
    for (int k = 0; k < 3; ++k) CHECK(oracle::grad_close(g.d_mean[k], fd[k], 1e-4, 1e-7));
    for (int k = 0; k < 3; ++k) CHECK(oracle::grad_close(g.d_scale[k], fd[3 + k], 1e-4, 1e-7));
    for (int k = 0; k < 4; ++k) CHECK(oracle::grad_close(g.d_quat[k], fd[6 + k], 1e-4, 1e-7));
  }
}

TEST_CASE("intersect_surfel: perpendicular center hit and the 1-sigma ring") {
  Camera cam = oracle::test_camera();
  const Vec3 center(0, 0, 2.0);
  const Vec3 tu(1, 0, 0), tv(0, 1, 0);
  SurfelHit hit = intersect_surfel(Vec3::Zero(), Vec3(0, 0, 1), center, tu, tv, 0.3, 0.3, cam);
  REQUIRE(hit.hit);
  CHECK(hit.u == doctest::Approx(0.0));
  CHECK(hit.v == doctest::Approx(0.0));
  CHECK(hit.gauss == doctest::Approx(1.0));
  CHECK(hit.depth == doctest::Approx(2.0));

  // A ray aimed at one local standard deviation.
  const Vec3 target = center + 0.3 * tu;
  hit = intersect_surfel(Vec3::Zero(), target.normalized(), center, tu, tv, 0.3, 0.3, cam);
  REQUIRE(hit.hit);
  CHECK(hit.u == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hit.gauss == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("intersect_surfel: parallel ray reports no hit") {
  Camera cam = oracle::test_camera();
  const SurfelHit hit = intersect_surfel(Vec3::Zero(), Vec3(1, 0, 0), Vec3(0, 0, 2), Vec3(1, 0, 0),
                                         Vec3(0, 0, 1), 0.3, 0.3, cam);
  CHECK(!hit.hit);
}

TEST_CASE("intersect_surfel: 1000 random rays against an independent plane solve") {
  Rng rng(12);
  double worst_depth = 0.0, worst_plane = 0.0;
  int tested = 0;
  while (tested < 1000) {
    const Camera cam = oracle::random_camera(rng);
    const Vec3 center(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Mat3 r = quat_to_rot(rng.unit_quaternion());
    const Vec3 tu = r.col(0), tv = r.col(1);
    const Vec3 origin = cam.position();
    const Vec3 dir =
        (cam.rotation().transpose() * cam.pixel_dir_z1(rng.uniform(0, 16), rng.uniform(0, 16)))
            .normalized();
    const Vec3 n = tu.cross(tv);
    if (std::abs(n.dot(dir)) < 1e-4) continue;
    const SurfelHit hit = intersect_surfel(origin, dir, center, tu, tv, 0.4, 0.25, cam);
    REQUIRE(hit.hit);
    // Oracle: solve origin + t d = center + a tu + b tv as a 3x3 linear system.
    Mat3 m;
    m.col(0) = dir;
    m.col(1) = -tu;
    m.col(2) = -tv;
    const Vec3 sol = m.fullPivLu().solve(center - origin);
    const Vec3 p = origin + sol[0] * dir;
    worst_depth = std::max(worst_depth, std::abs(cam.to_camera(p).z() - hit.depth));
    worst_plane = std::max(worst_plane, std::abs(n.normalized().dot(p - center)));
    CHECK(hit.u == doctest::Approx(sol[1] / 0.4).epsilon(1e-9));
    CHECK(hit.v == doctest::Approx(sol[2] / 0.25).epsilon(1e-9));
    ++tested;
  }
  CHECK(worst_depth <= 1e-9);
  CHECK(worst_plane <= 1e-9);
}

TEST_CASE("camera validation rejects bad intrinsics and skewed rotations") {
  Camera cam = oracle::test_camera();
  CHECK_NOTHROW(cam.validate());
  Camera bad = cam;
  bad.fx = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cam;
  bad.near_z = 2.0;
  bad.far_z = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cam;
  bad.world_to_camera(0, 1) = 0.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
