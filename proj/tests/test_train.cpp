#include "dsplat/train.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace dsplat;

namespace {

// Tiny on-disk synthetic scene, shared by the trainer tests.
const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    SyntheticSceneSpec spec;
    spec.n_views = 6;
    spec.width = spec.height = 24;
    spec.n_init_points = 120;
    spec.seed = 5;
    const auto dir = std::filesystem::temp_directory_path() / "dsplat_tiny_scene";
    return generate_synthetic(spec, dir.string());
  }();
  return ds;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.warmup_max_iters = 20;
  cfg.warmup_min_iters = 0;
  cfg.autostop_window = 10;
  cfg.mutual_iters = 8;
  cfg.densify.start_iter = 1000000;  // off
  cfg.log_interval = 1;
  cfg.sh_degree = 1;
  cfg.tsdf_resolution = 32;
  return cfg;
}

}  // namespace

TEST_CASE("adam_step: zero gradients leave parameters unchanged") {
  std::vector<double> p = {1.0, -2.0, 3.0}, g(3, 0.0), m(3, 0.0), v(3, 0.0);
  adam_step(p, g, m, v, {0.1, 0.1, 0.1}, 1, {}, 1);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam_step: first step has magnitude ~lr") {
  std::vector<double> p = {0.0}, g = {0.37}, m = {0.0}, v = {0.0};
  adam_step(p, g, m, v, {0.05}, 1, {}, 1);
  CHECK(p[0] == doctest::Approx(-0.05).epsilon(1e-9));
}

TEST_CASE("adam_step: 100 steps shrink a quadratic from x=1 to |x|<0.05") {
  std::vector<double> p = {1.0}, m = {0.0}, v = {0.0};
  for (int t = 1; t <= 100; ++t) {
    std::vector<double> g = {2.0 * p[0]};
    adam_step(p, g, m, v, {0.1}, 1, {}, t);
  }
  CHECK(std::abs(p[0]) < 0.05);
}

TEST_CASE("adam_step: non-finite gradients skip their parameter and are counted") {
  std::vector<double> p = {1.0, 2.0}, g = {std::nan(""), 0.5}, m(2, 0.0), v(2, 0.0);
  int skipped = 0;
  adam_step(p, g, m, v, {0.1, 0.1}, 2, {}, 1, &skipped);
  CHECK(p[0] == 1.0);
  CHECK(p[1] != 2.0);
  CHECK(skipped == 1);
}

TEST_CASE("check_autostop on constructed traces") {
  TrainConfig cfg;
  cfg.warmup_min_iters = 500;
  cfg.warmup_max_iters = 7000;
  cfg.autostop_window = 500;
  cfg.autostop_rel_tol = 1e-3;

  SUBCASE("geometrically decreasing loss never stops before the budget") {
    BranchCommon st;
    double loss = 1.0;
    for (int it = 1; it < cfg.warmup_max_iters; ++it) {
      loss *= 0.99;
      st.iter = it;
      st.record_loss(loss, cfg);
      CHECK(!check_autostop(st, cfg));
    }
    st.iter = cfg.warmup_max_iters;
    CHECK(check_autostop(st, cfg));  // budget exhausted
  }

  SUBCASE("flat loss after warmup_min stops immediately") {
    BranchCommon st;
    for (int it = 1; it <= cfg.warmup_min_iters + cfg.autostop_window + 1; ++it) {
      st.iter = it;
      st.record_loss(0.25, cfg);
      if (it < cfg.warmup_min_iters) CHECK(!check_autostop(st, cfg));
    }
    CHECK(check_autostop(st, cfg));
  }

  SUBCASE("decrease then plateau at iter k stops within [k, k+P]") {
    const int k = 1200;
    BranchCommon st;
    int stop_iter = -1;
    for (int it = 1; it <= k + cfg.autostop_window + 100; ++it) {
      double loss;
      if (it < 600)
        loss = 1.0 - (1.0 - 0.3012) * it / 600.0;  // steep approach
      else if (it < k)
        loss = 0.3012 - 2e-6 * (it - 600);  // gentle approach
      else
        loss = 0.3;  // plateau
      st.iter = it;
      st.record_loss(loss, cfg);
      if (check_autostop(st, cfg)) {
        stop_iter = it;
        break;
      }
    }
    REQUIRE(stop_iter > 0);
    CHECK(stop_iter >= k);
    CHECK(stop_iter <= k + cfg.autostop_window);
  }

  SUBCASE("never fires before warmup_min even on a flat trace") {
    BranchCommon st;
    for (int it = 1; it < cfg.warmup_min_iters; ++it) {
      st.iter = it;
      st.record_loss(1.0, cfg);
      CHECK(!check_autostop(st, cfg));
    }
  }
}

TEST_CASE("densify_prune: stable set, prune rule, saturation doubling") {
  Rng rng(401);
  DensifyConfig dc;

  SUBCASE("high opacities and zero gradients leave the set unchanged") {
    GaussianCloud cloud = oracle::random_gaussians(rng, 10);
    for (std::size_t i = 0; i < cloud.size(); ++i)
      cloud.prim(i)[GaussianCloud::kOpacityTran] = logit(0.9);
    const std::vector<double> before = cloud.params;
    Rng drng(1);
    const DensifyReport rep = densify_prune(cloud, drng, dc, 1.0);
    CHECK(rep.cloned + rep.split + rep.pruned == 0);
    CHECK(cloud.params == before);
  }

  SUBCASE("a primitive with tiny opacity is removed") {
    GaussianCloud cloud = oracle::random_gaussians(rng, 5);
    for (std::size_t i = 0; i < cloud.size(); ++i)
      cloud.prim(i)[GaussianCloud::kOpacityTran] = logit(0.5);
    cloud.prim(3)[GaussianCloud::kOpacityTran] = logit(1e-4);
    Rng drng(1);
    const DensifyReport rep = densify_prune(cloud, drng, dc, 1.0);
    CHECK(rep.pruned == 1);
    CHECK(cloud.size() == 4);
  }

  SUBCASE("prune is skipped when the set would become empty") {
    GaussianCloud cloud = oracle::random_gaussians(rng, 3);
    for (std::size_t i = 0; i < cloud.size(); ++i)
      cloud.prim(i)[GaussianCloud::kOpacityTran] = logit(1e-4);
    Rng drng(1);
    const DensifyReport rep = densify_prune(cloud, drng, dc, 1.0);
    CHECK(rep.prune_skipped);
    CHECK(cloud.size() == 3);
  }

  SUBCASE("threshold zero doubles the primitive count") {
    GaussianCloud cloud = oracle::random_gaussians(rng, 7);
    for (std::size_t i = 0; i < cloud.size(); ++i)
      cloud.prim(i)[GaussianCloud::kOpacityTran] = logit(0.5);
    DensifyConfig all = dc;
    all.grad_threshold = 0.0;
    Rng drng(1);
    const DensifyReport rep = densify_prune(cloud, drng, all, 1.0);
    CHECK(cloud.size() == 14);
    CHECK(rep.cloned + rep.split == 7);
    // Moments were re-sized along with the parameters.
    CHECK(cloud.adam_m.size() == cloud.params.size());
  }
}

TEST_CASE("warmup_max = 0 passes both branches through untrained") {
  TrainConfig cfg = tiny_config();
  cfg.warmup_max_iters = 0;
  cfg.warmup_min_iters = 0;
  cfg.mutual_iters = 0;
  Trainer trainer(tiny_dataset(), cfg);
  const std::vector<double> p3 = trainer.gaussians.params;
  trainer.run();
  CHECK(trainer.state_3d.converged);
  CHECK(trainer.state_2d.converged);
  CHECK(trainer.gaussians.params == p3);
}

TEST_CASE("warm-up EMA decreases on a toy scene") {
  TrainConfig cfg = tiny_config();
  cfg.warmup_max_iters = 200;
  cfg.autostop_window = 200;
  Trainer trainer(tiny_dataset(), cfg);
  double first_ema = -1.0, last_ema = -1.0;
  for (int it = 1; it <= 200; ++it) {
    const double loss = trainer.warmup_step_3d(trainer.dataset().train_ids[it % 5]);
    trainer.state_3d.iter = it;
    trainer.state_3d.record_loss(loss, cfg);
    if (it == 20) first_ema = trainer.state_3d.ema;
  }
  last_ema = trainer.state_3d.ema;
  CHECK(last_ema < first_ema);
}

TEST_CASE("mutual_step: weight collapse reduces to a pure 2D objective step") {
  TrainConfig cfg = tiny_config();
  cfg.weights.w_2d = 1.0;
  cfg.weights.w_3d = 0.0;
  cfg.weights.w_depth_mutual = 0.0;

  Trainer a(tiny_dataset(), cfg);
  Trainer b(tiny_dataset(), cfg);
  const int view_id = a.dataset().train_ids[0];
  const LossReport rep = a.mutual_step(view_id, 0);  // active branch: 2D
  CHECK(rep.total == doctest::Approx(rep.loss_2d).epsilon(1e-12));

  // Reproduce the same update by hand on trainer b.
  const View& view = b.dataset().views[view_id];
  RenderCache3D c3;
  RenderCache2D c2;
  const RenderOutput o3 = render_3d(b.gaussians, view.camera, cfg.render, &c3);
  const RenderOutput o2 = render_2d(b.surfels, view.camera, cfg.render, &c2);
  Image coverage(o3.h, o3.w, 1);
  for (int i = 0; i < o3.h * o3.w; ++i)
    coverage.data[i] = o3.alpha.data[i] > cfg.coverage_threshold ? 1.0 : 0.0;
  RenderGrads g2;
  const Image gamma = gamma_map_from_mask(view.mask, cfg.weights);
  loss_2d_mutual(o2, o3.transmitted, coverage, view.image, gamma, view.camera, cfg.weights,
                 nullptr, &g2);
  b.surfels.zero_grads();
  backward_2d(b.surfels, view.camera, cfg.render, o2, c2, g2);
  std::vector<double> lr(b.surfels.stride());
  {
    // Mirror the trainer's per-group learning rates at adam step 1.
    TrainConfig c = cfg;
    for (int o = 0; o < b.surfels.stride(); ++o) {
      switch (b.surfels.group_of(o)) {
        case ParamGroup::Position:
          lr[o] = c.lr.position * std::pow(c.lr.position_final_factor,
                                           1.0 / std::max(1, c.total_lr_iters()));
          break;
        case ParamGroup::Scale: lr[o] = c.lr.scale; break;
        case ParamGroup::Rotation: lr[o] = c.lr.rotation; break;
        case ParamGroup::Opacity: lr[o] = c.lr.opacity; break;
        case ParamGroup::Sh: lr[o] = c.lr.sh; break;
      }
    }
  }
  adam_step(b.surfels.params, b.surfels.grads, b.surfels.adam_m, b.surfels.adam_v, lr,
            b.surfels.stride(), cfg.adam, 1);
  CHECK(a.surfels.params == b.surfels.params);
}

TEST_CASE("mutual_step: frozen branch is bit-identical, teacher gradients exactly zero") {
  TrainConfig cfg = tiny_config();
  Trainer trainer(tiny_dataset(), cfg);
  const int view_id = trainer.dataset().train_ids[1];

  SUBCASE("active 2D leaves the 3D branch untouched and gradient-free") {
    const std::vector<double> frozen = trainer.gaussians.params;
    trainer.mutual_step(view_id, 0);
    CHECK(trainer.gaussians.params == frozen);
    for (double g : trainer.gaussians.grads) CHECK(g == 0.0);
    // The active branch did receive gradient.
    double total = 0.0;
    for (double g : trainer.surfels.grads) total += std::abs(g);
    CHECK(total > 0.0);
  }
  SUBCASE("active 3D leaves the 2D branch untouched and gradient-free") {
    const std::vector<double> frozen = trainer.surfels.params;
    trainer.mutual_step(view_id, 1);
    CHECK(trainer.surfels.params == frozen);
    for (double g : trainer.surfels.grads) CHECK(g == 0.0);
  }
  SUBCASE("bidirectional BP feeds gradient to the supervising branch too") {
    cfg.bidirectional_bp = true;
    Trainer bidir(tiny_dataset(), cfg);
    bidir.mutual_step(view_id, 0);  // active 2D
    double teacher = 0.0;
    for (double g : bidir.gaussians.grads) teacher += std::abs(g);
    CHECK(teacher > 0.0);
    // Still only the active branch steps.
    const std::vector<double> frozen = bidir.gaussians.params;
    bidir.mutual_step(view_id, 2);
    CHECK(bidir.gaussians.params == frozen);
  }
}

TEST_CASE("alternation visits each branch exactly B times per 2B iterations") {
  for (int block : {1, 3}) {
    TrainConfig cfg = tiny_config();
    cfg.alternation_block = block;
    Trainer trainer(tiny_dataset(), cfg);
    int updates_2d = 0, updates_3d = 0;
    for (int it = 0; it < 2 * block; ++it) {
      const std::vector<double> s2 = trainer.surfels.params;
      trainer.mutual_step(trainer.dataset().train_ids[0], it);
      if (trainer.surfels.params != s2)
        ++updates_2d;
      else
        ++updates_3d;
    }
    CHECK(updates_2d == block);
    CHECK(updates_3d == block);
  }
}

TEST_CASE("training is bitwise deterministic given the seed") {
  const auto run_once = [](const std::string& tag) {
    TrainConfig cfg = tiny_config();
    cfg.seed = 11;
    cfg.warmup_max_iters = 12;
    cfg.mutual_iters = 6;
    Trainer trainer(tiny_dataset(), cfg);
    const auto dir = std::filesystem::temp_directory_path() / ("dsplat_det_" + tag);
    std::filesystem::create_directories(dir);
    trainer.open_log((dir / "log.jsonl").string());
    trainer.run();
    trainer.save_checkpoints(dir.string());
    return dir;
  };
  const auto d1 = run_once("a");
  const auto d2 = run_once("b");
  const auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(d1 / "checkpoint_3d.dscp") == slurp(d2 / "checkpoint_3d.dscp"));
  CHECK(slurp(d1 / "checkpoint_2d.dscp") == slurp(d2 / "checkpoint_2d.dscp"));
  CHECK(slurp(d1 / "log.jsonl") == slurp(d2 / "log.jsonl"));
  CHECK(slurp(d1 / "log.jsonl").size() > 0);
}

TEST_CASE("config validation rejects bad budgets and rates") {
  TrainConfig cfg = tiny_config();
  cfg.warmup_min_iters = 50;
  cfg.warmup_max_iters = 10;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.alternation_block = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.lr.opacity = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
