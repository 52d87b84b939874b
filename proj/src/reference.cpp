#include "dsplat/geometry.hpp"
#include "dsplat/render.hpp"

#include <algorithm>
#include <numeric>

// Naive single-threaded renderers used as oracles for the tiled path and as
// the serial baseline in the benchmark. Every primitive is evaluated at every
// pixel; only the blending equations are shared with nothing else.

namespace dsplat {

namespace {

RenderOutput blank_output(const Camera& cam) {
  RenderOutput out;
  out.h = cam.height;
  out.w = cam.width;
  out.color = Image(out.h, out.w, 3);
  out.transmitted = Image(out.h, out.w, 3);
  out.reflected = Image(out.h, out.w, 3);
  out.confidence = Image(out.h, out.w, 1);
  out.depth = Image(out.h, out.w, 1);
  out.median_depth = Image(out.h, out.w, 1, kNoDepth);
  out.normal = Image(out.h, out.w, 3);
  out.normal_premul = Image(out.h, out.w, 3);
  out.alpha = Image(out.h, out.w, 1);
  return out;
}

}  // namespace

RenderOutput reference_render_3d(const GaussianCloud& cloud, const Camera& cam,
                                 const RenderConfig& cfg) {
  cam.validate();
  RenderOutput out = blank_output(cam);
  const Vec3 cam_pos = cam.position();
  const double cut2 = cfg.cutoff_sigma * cfg.cutoff_sigma;

  struct Entry {
    std::size_t id;
    ProjectedGaussian pg;
    ActivatedGaussian a;
    Vec3 c_t, c_r;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Entry e;
    e.id = i;
    e.a = cloud.activate(i);
    e.pg = project_gaussian(e.a.mean, e.a.scale, e.a.quat, cam, cfg.dilation);
    if (e.pg.culled || e.pg.depth >= cam.far_z) continue;
    const Vec3 dir = (e.a.mean - cam_pos).normalized();
    e.c_t = eval_sh_span(cloud.basis(), e.a.sh_tran, dir);
    e.c_r = eval_sh_span(cloud.basis(), e.a.sh_ref, dir);
    entries.push_back(e);
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.pg.depth != b.pg.depth ? a.pg.depth < b.pg.depth : a.id < b.id;
  });

  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec2 pix(x + 0.5, y + 0.5);
      double T_t = 1.0, T_r = 1.0, T_b = 1.0, W = 0.0, S = 0.0, Sz = 0.0;
      Vec3 C_t = Vec3::Zero(), C_r = Vec3::Zero();
      double median = kNoDepth;
      bool any = false;
      for (const Entry& e : entries) {
        const Vec2 d = pix - e.pg.mean2d;
        const double maha = d.dot(e.pg.cov2d.inverse() * d);
        if (maha > cut2) continue;
        any = true;
        const double g = std::exp(-0.5 * maha);
        const double a_t = std::min(e.a.opacity_tran * g, cfg.alpha_clamp);
        const double a_r = std::min(e.a.opacity_ref * g, cfg.alpha_clamp);
        const double w_t = a_t * T_t;
        C_t += w_t * e.c_t;
        S += w_t;
        Sz += w_t * e.pg.depth;
        if (median == kNoDepth && S >= 0.5) median = e.pg.depth;
        T_t *= 1.0 - a_t;
        C_r += a_r * T_r * e.c_r;
        T_r *= 1.0 - a_r;
        W += e.a.beta * a_r * T_b;
        T_b *= cfg.confidence_product_includes_alpha ? 1.0 - e.a.beta * a_r : 1.0 - e.a.beta;
      }
      if (!any) continue;
      out.transmitted.set_rgb(y, x, C_t);
      out.reflected.set_rgb(y, x, C_r);
      out.color.set_rgb(y, x, C_t + W * C_r);
      out.confidence.at(y, x) = W;
      out.depth.at(y, x) = Sz / (S + cfg.depth_eps);
      out.median_depth.at(y, x) = median;
      out.alpha.at(y, x) = S;
    }
  }
  return out;
}

RenderOutput reference_render_2d(const SurfelCloud& cloud, const Camera& cam,
                                 const RenderConfig& cfg) {
  cam.validate();
  RenderOutput out = blank_output(cam);
  const Vec3 cam_pos = cam.position();
  const Mat3 rot_t = cam.rotation().transpose();
  const double cut2 = cfg.cutoff_sigma * cfg.cutoff_sigma;

  struct Entry {
    std::size_t id;
    ActivatedSurfel a;
    Vec3 tangent_u, tangent_v, normal_cam;
    Vec3 color;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Entry e;
    e.id = i;
    e.a = cloud.activate(i);
    const double depth = cam.to_camera(e.a.center).z();
    if (depth <= cam.near_z || depth >= cam.far_z) continue;
    const Mat3 r = quat_to_rot(e.a.quat);
    e.tangent_u = r.col(0);
    e.tangent_v = r.col(1);
    Vec3 n_cam = cam.rotation() * e.tangent_u.cross(e.tangent_v);
    if (n_cam.dot(cam.to_camera(e.a.center)) > 0.0) n_cam = -n_cam;
    e.normal_cam = n_cam;
    const Vec3 dir = (e.a.center - cam_pos).normalized();
    e.color = eval_sh_span(cloud.basis(), e.a.sh, dir);
    entries.push_back(e);
  }

  struct Hit {
    std::size_t id;
    double depth, gauss;
    const Entry* e;
  };
  std::vector<Hit> hits;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir_world = (rot_t * cam.pixel_dir_z1(x + 0.5, y + 0.5)).normalized();
      hits.clear();
      for (const Entry& e : entries) {
        const SurfelHit h = intersect_surfel(cam_pos, dir_world, e.a.center, e.tangent_u,
                                             e.tangent_v, e.a.scale_u, e.a.scale_v, cam);
        if (!h.hit || h.depth <= cam.near_z || h.depth >= cam.far_z) continue;
        if (h.u * h.u + h.v * h.v > cut2) continue;
        hits.push_back({e.id, h.depth, h.gauss, &e});
      }
      if (hits.empty()) continue;
      std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.id < b.id;
      });
      double T = 1.0, S = 0.0, Sz = 0.0, median = kNoDepth;
      Vec3 C = Vec3::Zero(), M = Vec3::Zero();
      for (const Hit& h : hits) {
        const double a = std::min(h.e->a.opacity * h.gauss, cfg.alpha_clamp);
        const double w = a * T;
        C += w * h.e->color;
        M += w * h.e->normal_cam;
        S += w;
        Sz += w * h.depth;
        if (median == kNoDepth && S >= 0.5) median = h.depth;
        T *= 1.0 - a;
      }
      out.color.set_rgb(y, x, C);
      out.transmitted.set_rgb(y, x, C);
      out.normal_premul.set_rgb(y, x, M);
      if (M.norm() > 1e-12) out.normal.set_rgb(y, x, M / M.norm());
      out.depth.at(y, x) = Sz / (S + cfg.depth_eps);
      out.median_depth.at(y, x) = median;
      out.alpha.at(y, x) = S;
    }
  }
  return out;
}

}  // namespace dsplat
