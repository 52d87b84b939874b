#include "dsplat/train.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace dsplat {

using nlohmann::json;

void TrainConfig::validate() const {
  weights.validate();
  if (warmup_min_iters > warmup_max_iters)
    throw std::invalid_argument("TrainConfig: warmup_min_iters must be <= warmup_max_iters");
  if (warmup_max_iters < 0 || mutual_iters < 0)
    throw std::invalid_argument("TrainConfig: iteration budgets must be >= 0");
  if (alternation_block < 1) throw std::invalid_argument("TrainConfig: alternation_block >= 1");
  if (autostop_window < 1) throw std::invalid_argument("TrainConfig: autostop_window >= 1");
  if (!(autostop_rel_tol > 0.0)) throw std::invalid_argument("TrainConfig: autostop_rel_tol > 0");
  if (!(ema_decay > 0.0 && ema_decay < 1.0))
    throw std::invalid_argument("TrainConfig: ema_decay in (0,1)");
  const double rates[] = {lr.position, lr.scale, lr.rotation, lr.opacity, lr.sh};
  for (double r : rates)
    if (!(r > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  if (!(init_beta > 0.0 && init_beta < 1.0) || !(init_opacity > 0.0 && init_opacity < 1.0))
    throw std::invalid_argument("TrainConfig: initial opacities must lie in (0,1)");
  if (sh_degree < 0 || sh_degree > kMaxShDegree)
    throw std::invalid_argument("TrainConfig: unsupported SH degree");
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               std::vector<double>& m, std::vector<double>& v,
               const std::vector<double>& lr_per_offset, int stride, const AdamConfig& cfg, int t,
               int* skipped) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
    throw std::invalid_argument("adam_step: buffer sizes do not match");
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  int local_skipped = 0;
#pragma omp parallel for schedule(static) reduction(+ : local_skipped)
  for (long long i = 0; i < static_cast<long long>(params.size()); ++i) {
    const double g = grads[i];
    if (!std::isfinite(g)) {
      ++local_skipped;
      continue;
    }
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    params[i] -= lr_per_offset[i % stride] * mh / (std::sqrt(vh) + cfg.eps);
  }
  if (skipped) *skipped += local_skipped;
}

void BranchCommon::record_loss(double loss, const TrainConfig& cfg) {
  ema = std::isnan(ema) ? loss : cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * loss;
  ema_history.push_back(ema);
  while (ema_history.size() > static_cast<std::size_t>(cfg.autostop_window) + 1)
    ema_history.pop_front();
}

bool check_autostop(const BranchCommon& st, const TrainConfig& cfg) {
  if (st.iter < cfg.warmup_min_iters) return false;
  if (st.iter >= cfg.warmup_max_iters) return true;
  if (st.ema_history.size() < static_cast<std::size_t>(cfg.autostop_window) + 1) return false;
  const double before = st.ema_history.front();
  const double now = st.ema_history.back();
  const double rel = (before - now) / std::max(std::abs(before), 1e-12);
  return rel < cfg.autostop_rel_tol;
}

// ---------------------------------------------------------------------------
// Density control

namespace {

template <typename Cloud>
DensifyReport densify_prune_impl(Cloud& cloud, Rng& rng, const DensifyConfig& dc,
                                 double scene_extent, int opacity_off, int scale_off,
                                 int scale_dims) {
  DensifyReport rep;
  const int stride = cloud.stride();
  const std::size_t n = cloud.size();
  if (n == 0) return rep;

  std::vector<char> prune(n, 0);
  std::size_t n_prune = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmoid(cloud.prim(i)[opacity_off]) < dc.prune_opacity) {
      prune[i] = 1;
      ++n_prune;
    }
  }
  if (n_prune == n) {
    rep.prune_skipped = true;
    std::fill(prune.begin(), prune.end(), 0);
    n_prune = 0;
  }
  rep.pruned = static_cast<int>(n_prune);

  const double split_thresh = dc.split_scale_fraction * scene_extent;
  std::vector<double> new_params, new_m, new_v;
  new_params.reserve(cloud.params.size());

  const auto copy_prim = [&](std::size_t i, bool fresh_moments) {
    new_params.insert(new_params.end(), cloud.prim(i), cloud.prim(i) + stride);
    if (fresh_moments) {
      new_m.insert(new_m.end(), stride, 0.0);
      new_v.insert(new_v.end(), stride, 0.0);
    } else {
      new_m.insert(new_m.end(), cloud.adam_m.begin() + i * stride,
                   cloud.adam_m.begin() + (i + 1) * stride);
      new_v.insert(new_v.end(), cloud.adam_v.begin() + i * stride,
                   cloud.adam_v.begin() + (i + 1) * stride);
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    if (prune[i]) continue;
    const double avg_grad =
        cloud.densify_grad_count[i] > 0
            ? cloud.densify_grad_accum[i] / cloud.densify_grad_count[i]
            : 0.0;
    const bool densify = avg_grad >= dc.grad_threshold &&
                         new_params.size() / stride + (n - i) < dc.max_primitives;
    copy_prim(i, false);
    if (!densify) continue;

    double max_scale = 0.0;
    for (int d = 0; d < scale_dims; ++d)
      max_scale = std::max(max_scale, std::exp(cloud.prim(i)[scale_off + d]));

    const std::size_t base = new_params.size() - stride;
    copy_prim(i, true);
    double* parent = new_params.data() + base;
    double* child = new_params.data() + new_params.size() - stride;
    if (max_scale > split_thresh) {
      ++rep.split;
      for (int d = 0; d < scale_dims; ++d) {
        parent[scale_off + d] -= std::log(1.6);
        child[scale_off + d] -= std::log(1.6);
      }
      for (int c = 0; c < 3; ++c) {
        const double offset = 0.5 * max_scale * rng.normal();
        child[c] += offset;
        parent[c] -= offset;
      }
    } else {
      ++rep.cloned;
      for (int c = 0; c < 3; ++c) child[c] += 0.3 * max_scale * rng.normal();
    }
  }

  cloud.params = std::move(new_params);
  cloud.adam_m = std::move(new_m);
  cloud.adam_v = std::move(new_v);
  cloud.grads.assign(cloud.params.size(), 0.0);
  cloud.densify_grad_accum.assign(cloud.params.size() / stride, 0.0);
  cloud.densify_grad_count.assign(cloud.params.size() / stride, 0);
  return rep;
}

}  // namespace

DensifyReport densify_prune(GaussianCloud& cloud, Rng& rng, const DensifyConfig& dc,
                            double scene_extent) {
  return densify_prune_impl(cloud, rng, dc, scene_extent, GaussianCloud::kOpacityTran,
                            GaussianCloud::kLogScale, 3);
}

DensifyReport densify_prune(SurfelCloud& cloud, Rng& rng, const DensifyConfig& dc,
                            double scene_extent) {
  return densify_prune_impl(cloud, rng, dc, scene_extent, SurfelCloud::kOpacity,
                            SurfelCloud::kLogScaleU, 2);
}

Image masked_depth(const RenderOutput& out, double alpha_threshold) {
  Image z(out.h, out.w, 1, kNoDepth);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      if (out.alpha.at(y, x) > alpha_threshold) z.at(y, x) = out.depth.at(y, x);
  return z;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::ViewSampler::ViewSampler(std::vector<int> ids_, std::uint64_t seed)
    : ids(std::move(ids_)), rng(seed) {}

int Trainer::ViewSampler::next() {
  if (ids.empty()) throw std::logic_error("ViewSampler: no views");
  if (pos >= order.size()) {
    order = ids;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
    pos = 0;
  }
  return order[pos++];
}

Trainer::Trainer(Dataset dataset, TrainConfig cfg)
    : data_(std::move(dataset)),
      cfg_(cfg),
      densify_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull),
      sampler_3d_(data_.train_ids, cfg.seed + 1),
      sampler_2d_(data_.train_ids, cfg.seed + 2),
      sampler_mutual_(data_.train_ids, cfg.seed + 3) {
  cfg_.validate();
  if (data_.views.empty() || data_.train_ids.empty())
    throw std::invalid_argument("Trainer: dataset has no training views");
  if (data_.init_points.empty())
    throw std::invalid_argument("Trainer: dataset has no init point cloud");

  InitOptions opt;
  opt.sh_degree = cfg_.sh_degree;
  opt.opacity_tran = cfg_.init_opacity;
  opt.beta = cfg_.init_beta;
  opt.seed = cfg_.seed + 7;
  gaussians = init_gaussians_from_points(data_.init_points, data_.init_colors, opt);
  surfels = init_surfels_from_points(data_.init_points, data_.init_colors, opt);
  take_snapshots();
}

void Trainer::open_log(const std::string& path) {
  log_.open(path);
  if (!log_) throw std::runtime_error("Trainer: cannot open log " + path);
}

void Trainer::log_line(const std::string& line) {
  if (log_.is_open()) log_ << line << "\n";
}

Image Trainer::gamma_for_view(int view_id) const {
  const View& view = data_.views[view_id];
  if (view.mask.empty()) return Image();
  return gamma_map_from_mask(view.mask, cfg_.weights);
}

namespace {

std::vector<double> lr_vector(int stride, const std::function<ParamGroup(int)>& group_of,
                              const LearningRates& lr, double pos_decay, bool freeze_beta,
                              int beta_off) {
  std::vector<double> v(stride, 0.0);
  for (int o = 0; o < stride; ++o) {
    switch (group_of(o)) {
      case ParamGroup::Position: v[o] = lr.position * pos_decay; break;
      case ParamGroup::Scale: v[o] = lr.scale; break;
      case ParamGroup::Rotation: v[o] = lr.rotation; break;
      case ParamGroup::Opacity: v[o] = lr.opacity; break;
      case ParamGroup::Sh: v[o] = lr.sh; break;
    }
  }
  if (freeze_beta && beta_off >= 0) v[beta_off] = 0.0;
  return v;
}

json report_json(const LossReport& r) {
  json j;
  j["render_3d"] = r.render_3d;
  j["tv_tran"] = r.tv_tran;
  j["render_2d"] = r.render_2d;
  j["normal"] = r.normal;
  j["tv_normal"] = r.tv_normal;
  j["tv_depth"] = r.tv_depth;
  j["mutual_render"] = r.mutual_render;
  j["depth_mutual"] = r.depth_mutual;
  j["loss_3d"] = r.loss_3d;
  j["loss_2d"] = r.loss_2d;
  j["loss_z"] = r.loss_z;
  j["total"] = r.total;
  return j;
}

}  // namespace

std::vector<double> Trainer::lr_vector_gaussian(int iter) const {
  const double decay =
      std::pow(cfg_.lr.position_final_factor,
               std::min(1.0, static_cast<double>(iter) / std::max(1, cfg_.total_lr_iters())));
  return lr_vector(
      gaussians.stride(), [this](int o) { return gaussians.group_of(o); }, cfg_.lr, decay,
      cfg_.freeze_beta, GaussianCloud::kBeta);
}

std::vector<double> Trainer::lr_vector_surfel(int iter) const {
  const double decay =
      std::pow(cfg_.lr.position_final_factor,
               std::min(1.0, static_cast<double>(iter) / std::max(1, cfg_.total_lr_iters())));
  return lr_vector(
      surfels.stride(), [this](int o) { return surfels.group_of(o); }, cfg_.lr, decay, false, -1);
}

void Trainer::take_snapshots() {
  snapshot_3d_ = gaussians.params;
  snapshot_2d_ = surfels.params;
}

double Trainer::warmup_step_3d(int view_id) {
  const View& view = data_.views[view_id];
  RenderCache3D cache;
  const RenderOutput out = render_3d(gaussians, view.camera, cfg_.render, &cache);
  RenderGrads grads;
  LossReport rep;
  const double loss = loss_3d(out, view.image, cfg_.weights, &rep, &grads);
  if (!std::isfinite(loss)) {
    gaussians.params = snapshot_3d_;
    state_3d.diverged = true;
    state_3d.converged = true;
    return loss;
  }
  gaussians.zero_grads();
  backward_3d(gaussians, view.camera, cfg_.render, out, cache, grads);
  ++state_3d.adam_t;
  adam_step(gaussians.params, gaussians.grads, gaussians.adam_m, gaussians.adam_v,
            lr_vector_gaussian(state_3d.adam_t), gaussians.stride(), cfg_.adam, state_3d.adam_t,
            &state_3d.nonfinite_grad_events);
  return loss;
}

double Trainer::warmup_step_2d(int view_id) {
  const View& view = data_.views[view_id];
  RenderCache2D cache;
  const RenderOutput out = render_2d(surfels, view.camera, cfg_.render, &cache);
  RenderGrads grads;
  LossReport rep;
  const double loss =
      loss_2d_warmup(out, view.image, gamma_for_view(view_id), view.camera, cfg_.weights, &rep,
                     &grads);
  if (!std::isfinite(loss)) {
    surfels.params = snapshot_2d_;
    state_2d.diverged = true;
    state_2d.converged = true;
    return loss;
  }
  surfels.zero_grads();
  backward_2d(surfels, view.camera, cfg_.render, out, cache, grads);
  ++state_2d.adam_t;
  adam_step(surfels.params, surfels.grads, surfels.adam_m, surfels.adam_v,
            lr_vector_surfel(state_2d.adam_t), surfels.stride(), cfg_.adam, state_2d.adam_t,
            &state_2d.nonfinite_grad_events);
  return loss;
}

void Trainer::maybe_densify(int iter, bool mutual_stage) {
  if (mutual_stage && !cfg_.densify.during_mutual) return;
  if (iter < cfg_.densify.start_iter || cfg_.densify.interval <= 0) return;
  if (iter % cfg_.densify.interval != 0) return;
  const double extent = data_.scene_extent();
  if (!state_3d.converged) densify_prune(gaussians, densify_rng_, cfg_.densify, extent);
  if (!state_2d.converged) densify_prune(surfels, densify_rng_, cfg_.densify, extent);
  take_snapshots();
}

void Trainer::run_warmup() {
  for (int iter = 1; iter <= cfg_.warmup_max_iters; ++iter) {
    if (state_3d.converged && state_2d.converged) break;
    if (!state_3d.converged) {
      const double loss = warmup_step_3d(sampler_3d_.next());
      state_3d.iter = iter;
      if (!state_3d.diverged) {
        state_3d.record_loss(loss, cfg_);
        if (check_autostop(state_3d, cfg_)) state_3d.converged = true;
        if (cfg_.log_interval > 0 && iter % cfg_.log_interval == 0) {
          json j{{"stage", "warmup_3d"}, {"iter", iter}, {"loss", loss}, {"ema", state_3d.ema}};
          log_line(j.dump());
        }
      }
    }
    if (!state_2d.converged) {
      const double loss = warmup_step_2d(sampler_2d_.next());
      state_2d.iter = iter;
      if (!state_2d.diverged) {
        state_2d.record_loss(loss, cfg_);
        if (check_autostop(state_2d, cfg_)) state_2d.converged = true;
        if (cfg_.log_interval > 0 && iter % cfg_.log_interval == 0) {
          json j{{"stage", "warmup_2d"}, {"iter", iter}, {"loss", loss}, {"ema", state_2d.ema}};
          log_line(j.dump());
        }
      }
    }
    maybe_densify(iter, false);
  }
  state_3d.converged = true;
  state_2d.converged = true;
}

LossReport Trainer::mutual_step(int view_id, int iter) {
  const View& view = data_.views[view_id];
  const LossWeights& w = cfg_.weights;
  const bool active_2d = (iter / cfg_.alternation_block) % 2 == 0;
  const bool bidir = cfg_.bidirectional_bp;

  RenderCache3D cache3;
  RenderCache2D cache2;
  const RenderOutput out3 = render_3d(gaussians, view.camera, cfg_.render, &cache3);
  const RenderOutput out2 = render_2d(surfels, view.camera, cfg_.render, &cache2);

  // Detached cross-supervision targets.
  const Image transmitted_target = out3.transmitted;
  Image coverage(out3.h, out3.w, 1);
  for (int y = 0; y < out3.h; ++y)
    for (int x = 0; x < out3.w; ++x)
      coverage.at(y, x) = out3.alpha.at(y, x) > cfg_.coverage_threshold ? 1.0 : 0.0;
  const Image z2 = masked_depth(out2, cfg_.coverage_threshold);
  const Image z3 = masked_depth(out3, cfg_.coverage_threshold);
  const Image gamma = gamma_for_view(view_id);

  LossReport rep;
  RenderGrads g2, g3;
  Image d_transmitted_target;
  if (bidir && active_2d) d_transmitted_target = Image(out3.h, out3.w, 3);

  const double l2d = loss_2d_mutual(out2, transmitted_target, coverage, view.image, gamma,
                                    view.camera, w, &rep, active_2d ? &g2 : nullptr,
                                    bidir && active_2d ? &d_transmitted_target : nullptr);
  const double l3d = loss_3d(out3, view.image, w, &rep, !active_2d ? &g3 : nullptr);

  Image* d_z2 = nullptr;
  Image* d_z3 = nullptr;
  Image dz2_buf, dz3_buf;
  if (!active_2d) {
    dz3_buf = Image(out3.h, out3.w, 1);
    d_z3 = &dz3_buf;
  } else if (bidir) {
    dz2_buf = Image(out2.h, out2.w, 1);
    d_z2 = &dz2_buf;
  }
  const double lz = depth_mutual_loss(z2, z3, gamma, 1.0, d_z2, d_z3);

  rep.depth_mutual = lz;
  rep.loss_z = lz;
  rep.total = total_mutual_loss(l2d, l3d, lz, w);

  gaussians.zero_grads();
  surfels.zero_grads();

  const auto scale_image = [](Image& img, double s) {
    for (double& v : img.data) v *= s;
  };

  if (active_2d) {
    for (Image* img : {&g2.d_color, &g2.d_transmitted, &g2.d_depth, &g2.d_normal_premul,
                       &g2.d_alpha})
      if (!img->empty()) scale_image(*img, w.w_2d);
    if (d_z2) {
      if (g2.d_depth.empty()) g2.d_depth = Image(out2.h, out2.w, 1);
      for (int y = 0; y < out2.h; ++y)
        for (int x = 0; x < out2.w; ++x)
          if (z2.at(y, x) != kNoDepth)
            g2.d_depth.at(y, x) += w.w_depth_mutual * dz2_buf.at(y, x);
    }
    backward_2d(surfels, view.camera, cfg_.render, out2, cache2, g2);
    if (bidir) {
      RenderGrads teacher;
      teacher.d_transmitted = d_transmitted_target;
      scale_image(teacher.d_transmitted, w.w_2d);
      backward_3d(gaussians, view.camera, cfg_.render, out3, cache3, teacher);
    }
    ++state_2d.adam_t;
    adam_step(surfels.params, surfels.grads, surfels.adam_m, surfels.adam_v,
              lr_vector_surfel(state_2d.adam_t), surfels.stride(), cfg_.adam, state_2d.adam_t,
              &state_2d.nonfinite_grad_events);
  } else {
    for (Image* img : {&g3.d_color, &g3.d_transmitted})
      if (!img->empty()) scale_image(*img, w.w_3d);
    if (d_z3) {
      if (g3.d_depth.empty()) g3.d_depth = Image(out3.h, out3.w, 1);
      for (int y = 0; y < out3.h; ++y)
        for (int x = 0; x < out3.w; ++x)
          if (z3.at(y, x) != kNoDepth)
            g3.d_depth.at(y, x) += w.w_depth_mutual * dz3_buf.at(y, x);
    }
    backward_3d(gaussians, view.camera, cfg_.render, out3, cache3, g3);
    ++state_3d.adam_t;
    adam_step(gaussians.params, gaussians.grads, gaussians.adam_m, gaussians.adam_v,
              lr_vector_gaussian(state_3d.adam_t), gaussians.stride(), cfg_.adam, state_3d.adam_t,
              &state_3d.nonfinite_grad_events);
  }
  return rep;
}

void Trainer::run_mutual() {
  for (int iter = 0; iter < cfg_.mutual_iters; ++iter) {
    const int view_id = sampler_mutual_.next();
    const LossReport rep = mutual_step(view_id, iter);
    mutual_loss_z.push_back(rep.loss_z);
    if (cfg_.log_interval > 0 && iter % cfg_.log_interval == 0) {
      json j = report_json(rep);
      j["stage"] = "mutual";
      j["iter"] = iter;
      j["view"] = view_id;
      j["active"] = (iter / cfg_.alternation_block) % 2 == 0 ? "2d" : "3d";
      log_line(j.dump());
    }
    maybe_densify(iter + 1, true);
  }
}

TrainResult Trainer::run() {
  run_warmup();
  const TrainResult partial{state_2d.iter, state_3d.iter, false, {}};
  run_mutual();
  TrainResult res = partial;
  res.diverged = state_2d.diverged || state_3d.diverged;
  res.mutual_loss_z = mutual_loss_z;
  return res;
}

TriangleMesh Trainer::extract_scene_mesh(int resolution) const {
  if (resolution <= 0) resolution = cfg_.tsdf_resolution;
  const Vec3 margin = Vec3::Constant(0.05 * data_.scene_extent() + 1e-6);
  TsdfVolume vol = make_volume(data_.bbox_lo - margin, data_.bbox_hi + margin, resolution);
  for (int id : data_.train_ids) {
    const View& view = data_.views[id];
    const RenderOutput out2 = render_2d(surfels, view.camera, cfg_.render);
    const RenderOutput out3 = render_3d(gaussians, view.camera, cfg_.render);
    tsdf_integrate(vol, out2.median_depth, out3.transmitted, view.camera);
  }
  return extract_mesh(vol);
}

void Trainer::save_checkpoints(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  save_gaussians((std::filesystem::path(dir) / "checkpoint_3d.dscp").string(), gaussians);
  save_surfels((std::filesystem::path(dir) / "checkpoint_2d.dscp").string(), surfels);
}

}  // namespace dsplat
