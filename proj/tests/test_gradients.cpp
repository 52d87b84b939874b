#include "dsplat/losses.hpp"
#include "dsplat/render.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace dsplat;

namespace {

// Cutoff pushed out so finite differences see a smooth forward map.
RenderConfig smooth_config() {
  RenderConfig cfg;
  cfg.cutoff_sigma = 1e3;
  return cfg;
}

struct GradCheckStats {
  int checked = 0, failed = 0;
  double worst_rel = 0.0;
};

template <typename Cloud, typename RenderFn, typename BackwardFn>
GradCheckStats check_render_gradients(Cloud& cloud, const Camera& cam, const RenderConfig& cfg,
                                      const oracle::MapProbe& probe, RenderFn render_fn,
                                      BackwardFn backward_fn, double rel = 1e-3,
                                      double abs_tol = 1e-6) {
  auto cache = [&] {
    typename std::conditional<std::is_same_v<Cloud, GaussianCloud>, RenderCache3D,
                              RenderCache2D>::type c;
    return c;
  }();
  const RenderOutput out = render_fn(cloud, cam, cfg, &cache);
  cloud.zero_grads();
  backward_fn(cloud, cam, cfg, out, cache, probe.weights);
  const std::vector<double> analytic = cloud.grads;

  const auto loss = [&]() { return probe.eval(render_fn(cloud, cam, cfg, nullptr)); };
  const std::vector<double> fd = oracle::finite_diff(cloud.params, loss, 1e-4);

  GradCheckStats st;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    ++st.checked;
    if (!oracle::grad_close(analytic[i], fd[i], rel, abs_tol)) {
      ++st.failed;
      if (st.failed <= 5)
        MESSAGE("param ", i, " offset ", i % cloud.stride(), ": analytic=", analytic[i],
                " fd=", fd[i]);
    }
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd[i]), 1e-6});
    st.worst_rel = std::max(st.worst_rel, std::abs(analytic[i] - fd[i]) / denom);
  }
  return st;
}

}  // namespace

TEST_CASE("backward_3d matches central finite differences on random scenes") {
  Rng rng(101);
  for (int scene = 0; scene < 4; ++scene) {
    const Camera cam = oracle::random_camera(rng, 16, 16);
    GaussianCloud cloud = oracle::random_gaussians(rng, 4 + scene);
    const oracle::MapProbe probe = oracle::MapProbe::random(rng, 16, 16, true);
    const auto st = check_render_gradients(
        cloud, cam, smooth_config(), probe,
        [](GaussianCloud& c, const Camera& cm, const RenderConfig& cf, RenderCache3D* ca) {
          return render_3d(c, cm, cf, ca);
        },
        [](GaussianCloud& c, const Camera& cm, const RenderConfig& cf, const RenderOutput& o,
           const RenderCache3D& ca, const RenderGrads& g) { backward_3d(c, cm, cf, o, ca, g); });
    CHECK(st.failed == 0);
  }
}

TEST_CASE("backward_3d with the alpha-in-product confidence variant") {
  Rng rng(102);
  RenderConfig cfg = smooth_config();
  cfg.confidence_product_includes_alpha = true;
  const Camera cam = oracle::random_camera(rng, 12, 12);
  GaussianCloud cloud = oracle::random_gaussians(rng, 5);
  const oracle::MapProbe probe = oracle::MapProbe::random(rng, 12, 12, true);
  const auto st = check_render_gradients(
      cloud, cam, cfg, probe,
      [](GaussianCloud& c, const Camera& cm, const RenderConfig& cf, RenderCache3D* ca) {
        return render_3d(c, cm, cf, ca);
      },
      [](GaussianCloud& c, const Camera& cm, const RenderConfig& cf, const RenderOutput& o,
         const RenderCache3D& ca, const RenderGrads& g) { backward_3d(c, cm, cf, o, ca, g); });
  CHECK(st.failed == 0);
}

TEST_CASE("backward_2d matches central finite differences on random scenes") {
  Rng rng(103);
  for (int scene = 0; scene < 4; ++scene) {
    const Camera cam = oracle::random_camera(rng, 16, 16);
    SurfelCloud cloud = oracle::random_surfels(rng, 4 + scene, 3, &cam);
    const oracle::MapProbe probe = oracle::MapProbe::random(rng, 16, 16, false);
    const auto st = check_render_gradients(
        cloud, cam, smooth_config(), probe,
        [](SurfelCloud& c, const Camera& cm, const RenderConfig& cf, RenderCache2D* ca) {
          return render_2d(c, cm, cf, ca);
        },
        [](SurfelCloud& c, const Camera& cm, const RenderConfig& cf, const RenderOutput& o,
           const RenderCache2D& ca, const RenderGrads& g) { backward_2d(c, cm, cf, o, ca, g); });
    CHECK(st.failed == 0);
  }
}

TEST_CASE("backward: zero upstream gives exactly zero gradients") {
  Rng rng(104);
  const Camera cam = oracle::random_camera(rng, 8, 8);
  GaussianCloud cloud = oracle::random_gaussians(rng, 5);
  RenderCache3D cache;
  const RenderOutput out = render_3d(cloud, cam, {}, &cache);
  cloud.zero_grads();
  backward_3d(cloud, cam, {}, out, cache, RenderGrads{});
  for (double g : cloud.grads) CHECK(g == 0.0);
}

TEST_CASE("backward: inert reflection receives no reflected-SH gradient from the color path") {
  Rng rng(105);
  const Camera cam = oracle::random_camera(rng, 8, 8);
  GaussianCloud cloud = oracle::random_gaussians(rng, 4);
  for (std::size_t i = 0; i < cloud.size(); ++i) cloud.prim(i)[GaussianCloud::kBeta] = -300.0;
  RenderCache3D cache;
  const RenderOutput out = render_3d(cloud, cam, {}, &cache);
  RenderGrads grads;
  grads.d_color = Image(8, 8, 3, 1.0);  // upstream only on the composed color
  cloud.zero_grads();
  backward_3d(cloud, cam, {}, out, cache, grads);
  // beta = sigmoid(-300) is denormal-tiny rather than exactly zero, so the
  // reflected-SH gradient vanishes to the same order.
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int ch = 0; ch < 3; ++ch)
      for (int b = 0; b < cloud.basis(); ++b)
        CHECK(std::abs(cloud.grad(i)[cloud.sh_ref_off(ch, b)]) <= 1e-100);
}

TEST_CASE("backward_2d: depth upstream on a fronto-parallel surfel hits center depth and opacity") {
  Camera cam = oracle::test_camera(15, 15);
  cam.cx = 7.5;
  cam.cy = 7.5;
  SurfelCloud cloud(0, 1);
  double* p = cloud.prim(0);
  p[SurfelCloud::kCenter + 2] = 2.0;
  p[SurfelCloud::kRot] = 1.0;
  p[SurfelCloud::kLogScaleU] = std::log(0.6);
  p[SurfelCloud::kLogScaleV] = std::log(0.6);
  p[SurfelCloud::kOpacity] = 0.4;

  RenderCache2D cache;
  const RenderConfig cfg = smooth_config();
  const RenderOutput out = render_2d(cloud, cam, cfg, &cache);
  RenderGrads grads;
  grads.d_depth = Image(15, 15, 1);
  grads.d_depth.at(7, 7) = 1.0;  // the exactly-perpendicular center ray
  cloud.zero_grads();
  backward_2d(cloud, cam, cfg, out, cache, grads);

  const auto probe_loss = [&]() { return render_2d(cloud, cam, cfg).depth.at(7, 7); };
  const std::vector<double> fd = oracle::finite_diff(cloud.params, probe_loss, 1e-5);
  for (std::size_t i = 0; i < cloud.params.size(); ++i)
    CHECK(oracle::grad_close(cloud.grads[i], fd[i], 1e-3, 1e-8));
  CHECK(std::abs(cloud.grad(0)[SurfelCloud::kCenter + 0]) <= 1e-10);
  CHECK(std::abs(cloud.grad(0)[SurfelCloud::kCenter + 1]) <= 1e-10);
  CHECK(std::abs(cloud.grad(0)[SurfelCloud::kCenter + 2]) > 1e-6);
  CHECK(std::abs(cloud.grad(0)[SurfelCloud::kOpacity]) > 1e-9);
}

TEST_CASE("end-to-end: loss_3d gradient through the renderer matches finite differences") {
  Rng rng(106);
  const Camera cam = oracle::random_camera(rng, 16, 16);
  GaussianCloud cloud = oracle::random_gaussians(rng, 5);
  const RenderConfig cfg = smooth_config();
  LossWeights w;

  Image gt = render_3d(cloud, cam, cfg).color;
  for (double& v : gt.data) v = std::clamp(v + 0.12 + 0.02 * rng.normal(), 0.0, 1.5);

  RenderCache3D cache;
  const RenderOutput out = render_3d(cloud, cam, cfg, &cache);
  RenderGrads grads;
  loss_3d(out, gt, w, nullptr, &grads);
  cloud.zero_grads();
  backward_3d(cloud, cam, cfg, out, cache, grads);
  const std::vector<double> analytic = cloud.grads;

  const auto loss = [&]() { return loss_3d(render_3d(cloud, cam, cfg), gt, w); };
  const std::vector<double> fd = oracle::finite_diff(cloud.params, loss, 1e-4);
  int failed = 0;
  for (std::size_t i = 0; i < fd.size(); ++i)
    if (!oracle::grad_close(analytic[i], fd[i], 2e-3, 1e-6)) ++failed;
  CHECK(failed == 0);
}

TEST_CASE("end-to-end: warm-up 2D objective gradient matches finite differences") {
  Rng rng(107);
  const Camera cam = oracle::random_camera(rng, 16, 16);
  // Big surfels so the whole image stays covered and the normal-validity set
  // cannot flip under the finite-difference perturbations.
  SurfelCloud cloud = oracle::random_surfels(rng, 6, 3, &cam);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    cloud.prim(i)[SurfelCloud::kLogScaleU] = std::log(3.0);
    cloud.prim(i)[SurfelCloud::kLogScaleV] = std::log(3.0);
    cloud.prim(i)[SurfelCloud::kOpacity] = 1.0;
  }
  const RenderConfig cfg = smooth_config();
  LossWeights w;

  Image gt = render_2d(cloud, cam, cfg).color;
  for (double& v : gt.data) v = std::clamp(v + 0.1 + 0.02 * rng.normal(), 0.0, 1.5);
  Image mask(16, 16, 1, 1.0);
  const Image gamma = gamma_map_from_mask(mask, w);

  RenderCache2D cache;
  const RenderOutput out = render_2d(cloud, cam, cfg, &cache);
  RenderGrads grads;
  loss_2d_warmup(out, gt, gamma, cam, w, nullptr, &grads);
  cloud.zero_grads();
  backward_2d(cloud, cam, cfg, out, cache, grads);
  const std::vector<double> analytic = cloud.grads;

  const auto loss = [&]() { return loss_2d_warmup(render_2d(cloud, cam, cfg), gt, gamma, cam, w); };
  const std::vector<double> fd = oracle::finite_diff(cloud.params, loss, 1e-4);
  int failed = 0;
  for (std::size_t i = 0; i < fd.size(); ++i)
    if (!oracle::grad_close(analytic[i], fd[i], 2e-3, 2e-6)) {
      ++failed;
      MESSAGE("param ", i, " offset ", i % cloud.stride(), ": analytic=", analytic[i],
              " fd=", fd[i]);
    }
  CHECK(failed == 0);
}
