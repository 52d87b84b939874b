#include "dsplat/render.hpp"

#include "dsplat/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace dsplat {

namespace {

RenderOutput make_output(const Camera& cam) {
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

// Pixel bbox of the ellipse maha <= cutoff^2. Pixel ix covers [ix, ix+1) and
// samples at ix+0.5.
void ellipse_bbox(const Vec2& mean2d, const Mat2& cov, double cutoff, int w, int h, int* x0,
                  int* x1, int* y0, int* y1) {
  const double ex = cutoff * std::sqrt(std::max(cov(0, 0), 0.0));
  const double ey = cutoff * std::sqrt(std::max(cov(1, 1), 0.0));
  *x0 = std::max(0, (int)std::floor(mean2d.x() - ex - 0.5));
  *x1 = std::min(w, (int)std::floor(mean2d.x() + ex - 0.5) + 2);
  *y0 = std::max(0, (int)std::floor(mean2d.y() - ey - 0.5));
  *y1 = std::min(h, (int)std::floor(mean2d.y() + ey - 0.5) + 2);
}

}  // namespace

namespace detail {

std::vector<Prepared3D> prepare_3d(const GaussianCloud& cloud, const Camera& cam,
                                   const RenderConfig& cfg) {
  const std::size_t n = cloud.size();
  std::vector<Prepared3D> prep(n);
  std::vector<char> keep(n, 0);
  const Vec3 cam_pos = cam.position();
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const ActivatedGaussian a = cloud.activate(i);
    const ProjectedGaussian pg = project_gaussian(a.mean, a.scale, a.quat, cam, cfg.dilation);
    if (pg.culled || pg.depth >= cam.far_z) continue;
    Prepared3D p;
    p.id = static_cast<int>(i);
    p.mean2d = pg.mean2d;
    p.cov_inv = pg.cov2d.inverse();
    p.depth = pg.depth;
    p.op_t = a.opacity_tran;
    p.op_r = a.opacity_ref;
    p.beta = a.beta;
    const Vec3 rel = a.mean - cam_pos;
    p.dist = rel.norm();
    p.dir = rel / p.dist;
    p.c_t_raw = eval_sh_span_raw(cloud.basis(), a.sh_tran, p.dir);
    p.c_r_raw = eval_sh_span_raw(cloud.basis(), a.sh_ref, p.dir);
    p.c_t = p.c_t_raw.cwiseMax(0.0);
    p.c_r = p.c_r_raw.cwiseMax(0.0);
    ellipse_bbox(p.mean2d, pg.cov2d, cfg.cutoff_sigma, cam.width, cam.height, &p.x0, &p.x1, &p.y0,
                 &p.y1);
    if (p.x0 >= p.x1 || p.y0 >= p.y1) continue;
    prep[i] = p;
    keep[i] = 1;
  }
  std::vector<Prepared3D> visible;
  visible.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) visible.push_back(prep[i]);
  std::sort(visible.begin(), visible.end(), [](const Prepared3D& a, const Prepared3D& b) {
    return a.depth != b.depth ? a.depth < b.depth : a.id < b.id;
  });
  return visible;
}

std::vector<Prepared2D> prepare_2d(const SurfelCloud& cloud, const Camera& cam,
                                   const RenderConfig& cfg) {
  const std::size_t n = cloud.size();
  std::vector<Prepared2D> prep(n);
  std::vector<char> keep(n, 0);
  const Vec3 cam_pos = cam.position();
  const Mat3 rot = cam.rotation();
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const ActivatedSurfel a = cloud.activate(i);
    const Vec3 center_c = cam.to_camera(a.center);
    if (center_c.z() <= cam.near_z || center_c.z() >= cam.far_z) continue;
    const Mat3 r = quat_to_rot(a.quat);
    Prepared2D p;
    p.id = static_cast<int>(i);
    p.center_c = center_c;
    p.axis_u = rot * r.col(0);
    p.axis_v = rot * r.col(1);
    Vec3 normal = p.axis_u.cross(p.axis_v);
    p.flip = normal.dot(center_c) > 0.0 ? -1.0 : 1.0;
    p.normal_c = p.flip * normal;
    p.su = a.scale_u;
    p.sv = a.scale_v;
    p.opacity = a.opacity;
    const Vec3 rel = a.center - cam_pos;
    p.dist = rel.norm();
    p.dir = rel / p.dist;
    p.c_raw = eval_sh_span_raw(cloud.basis(), a.sh, p.dir);
    p.c = p.c_raw.cwiseMax(0.0);

    // Screen bbox from sampled points of the cutoff disk boundary. The disk's
    // image is convex, so the sampled hull plus a margin bounds it.
    bool whole = false;
    double bx0 = 1e30, bx1 = -1e30, by0 = 1e30, by1 = -1e30;
    constexpr int kSamples = 64;
    for (int s = 0; s < kSamples && !whole; ++s) {
      const double phi = 2.0 * M_PI * s / kSamples;
      const Vec3 q = center_c + cfg.cutoff_sigma * (p.su * std::cos(phi) * p.axis_u +
                                                    p.sv * std::sin(phi) * p.axis_v);
      if (q.z() <= cam.near_z) {
        whole = true;
        break;
      }
      const Vec2 uv = cam.project(q);
      bx0 = std::min(bx0, uv.x());
      bx1 = std::max(bx1, uv.x());
      by0 = std::min(by0, uv.y());
      by1 = std::max(by1, uv.y());
    }
    if (whole) {
      p.x0 = 0;
      p.x1 = cam.width;
      p.y0 = 0;
      p.y1 = cam.height;
    } else {
      constexpr double kMargin = 2.0;
      p.x0 = std::max(0, (int)std::floor(bx0 - kMargin));
      p.x1 = std::min(cam.width, (int)std::ceil(bx1 + kMargin));
      p.y0 = std::max(0, (int)std::floor(by0 - kMargin));
      p.y1 = std::min(cam.height, (int)std::ceil(by1 + kMargin));
      if (p.x0 >= p.x1 || p.y0 >= p.y1) continue;
    }
    prep[i] = p;
    keep[i] = 1;
  }
  std::vector<Prepared2D> visible;
  visible.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) visible.push_back(prep[i]);
  std::sort(visible.begin(), visible.end(), [](const Prepared2D& a, const Prepared2D& b) {
    return a.center_c.z() != b.center_c.z() ? a.center_c.z() < b.center_c.z() : a.id < b.id;
  });
  return visible;
}

template <typename Prepared>
void bin_tiles(const std::vector<Prepared>& prep, int w, int h, int tile, int* tiles_x,
               int* tiles_y, std::vector<std::vector<int>>* bins) {
  *tiles_x = (w + tile - 1) / tile;
  *tiles_y = (h + tile - 1) / tile;
  bins->assign(static_cast<std::size_t>(*tiles_x) * *tiles_y, {});
  for (std::size_t k = 0; k < prep.size(); ++k) {
    const Prepared& p = prep[k];
    const int tx0 = p.x0 / tile, tx1 = (p.x1 - 1) / tile;
    const int ty0 = p.y0 / tile, ty1 = (p.y1 - 1) / tile;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        (*bins)[static_cast<std::size_t>(ty) * *tiles_x + tx].push_back(static_cast<int>(k));
  }
}

template void bin_tiles<Prepared3D>(const std::vector<Prepared3D>&, int, int, int, int*, int*,
                                    std::vector<std::vector<int>>*);
template void bin_tiles<Prepared2D>(const std::vector<Prepared2D>&, int, int, int, int*, int*,
                                    std::vector<std::vector<int>>*);

}  // namespace detail

RenderOutput render_3d(const GaussianCloud& cloud, const Camera& cam, const RenderConfig& cfg,
                       RenderCache3D* cache) {
  cam.validate();
  RenderOutput out = make_output(cam);
  RenderCache3D local;
  RenderCache3D& c = cache ? *cache : local;
  c.h = cam.height;
  c.w = cam.width;
  c.tile = cfg.tile_size;
  c.prep = detail::prepare_3d(cloud, cam, cfg);
  detail::bin_tiles(c.prep, cam.width, cam.height, cfg.tile_size, &c.tiles_x, &c.tiles_y, &c.bins);
  c.px.assign(static_cast<std::size_t>(cam.height) * cam.width, {});

  const double cut2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
  const double eps = cfg.depth_eps;

#pragma omp parallel for schedule(dynamic)
  for (long long t = 0; t < static_cast<long long>(c.bins.size()); ++t) {
    const std::vector<int>& list = c.bins[t];
    if (list.empty()) continue;
    const int tx = static_cast<int>(t) % c.tiles_x, ty = static_cast<int>(t) / c.tiles_x;
    const int px0 = tx * cfg.tile_size, px1 = std::min(cam.width, px0 + cfg.tile_size);
    const int py0 = ty * cfg.tile_size, py1 = std::min(cam.height, py0 + cfg.tile_size);
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const Vec2 pix(x + 0.5, y + 0.5);
        std::vector<Frag>& frags = c.px[static_cast<std::size_t>(y) * cam.width + x];
        for (int k : list) {
          const Prepared3D& p = c.prep[k];
          if (x < p.x0 || x >= p.x1 || y < p.y0 || y >= p.y1) continue;
          const Vec2 d = pix - p.mean2d;
          const double maha = d.dot(p.cov_inv * d);
          if (maha > cut2) continue;
          frags.push_back({k, std::exp(-0.5 * maha)});
        }
        if (frags.empty()) continue;

        double T_t = 1.0, T_r = 1.0, T_b = 1.0;
        Vec3 C_t = Vec3::Zero(), C_r = Vec3::Zero();
        double W = 0.0, S = 0.0, Sz = 0.0;
        double median = kNoDepth;
        for (const Frag& f : frags) {
          const Prepared3D& p = c.prep[f.pi];
          const double a_t = std::min(p.op_t * f.gauss, cfg.alpha_clamp);
          const double a_r = std::min(p.op_r * f.gauss, cfg.alpha_clamp);
          const double w_t = a_t * T_t;
          C_t += w_t * p.c_t;
          S += w_t;
          Sz += w_t * p.depth;
          if (median == kNoDepth && S >= 0.5) median = p.depth;
          T_t *= 1.0 - a_t;
          const double w_r = a_r * T_r;
          C_r += w_r * p.c_r;
          T_r *= 1.0 - a_r;
          W += p.beta * a_r * T_b;
          T_b *= cfg.confidence_product_includes_alpha ? 1.0 - p.beta * a_r : 1.0 - p.beta;
        }
        out.transmitted.set_rgb(y, x, C_t);
        out.reflected.set_rgb(y, x, C_r);
        out.color.set_rgb(y, x, C_t + W * C_r);
        out.confidence.at(y, x) = W;
        out.depth.at(y, x) = Sz / (S + eps);
        out.median_depth.at(y, x) = median;
        out.alpha.at(y, x) = S;
      }
    }
  }
  return out;
}

RenderOutput render_2d(const SurfelCloud& cloud, const Camera& cam, const RenderConfig& cfg,
                       RenderCache2D* cache) {
  cam.validate();
  RenderOutput out = make_output(cam);
  RenderCache2D local;
  RenderCache2D& c = cache ? *cache : local;
  c.h = cam.height;
  c.w = cam.width;
  c.tile = cfg.tile_size;
  c.prep = detail::prepare_2d(cloud, cam, cfg);
  detail::bin_tiles(c.prep, cam.width, cam.height, cfg.tile_size, &c.tiles_x, &c.tiles_y, &c.bins);
  c.px.assign(static_cast<std::size_t>(cam.height) * cam.width, {});

  const double cut2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
  const double eps = cfg.depth_eps;

#pragma omp parallel for schedule(dynamic)
  for (long long t = 0; t < static_cast<long long>(c.bins.size()); ++t) {
    const std::vector<int>& list = c.bins[t];
    if (list.empty()) continue;
    const int tx = static_cast<int>(t) % c.tiles_x, ty = static_cast<int>(t) / c.tiles_x;
    const int px0 = tx * cfg.tile_size, px1 = std::min(cam.width, px0 + cfg.tile_size);
    const int py0 = ty * cfg.tile_size, py1 = std::min(cam.height, py0 + cfg.tile_size);
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const Vec3 d = cam.pixel_dir_z1(x + 0.5, y + 0.5);
        std::vector<Frag2>& frags = c.px[static_cast<std::size_t>(y) * cam.width + x];
        for (int k : list) {
          const Prepared2D& p = c.prep[k];
          if (x < p.x0 || x >= p.x1 || y < p.y0 || y >= p.y1) continue;
          const double denom = p.normal_c.dot(d);
          if (std::abs(denom) < 1e-8) continue;
          const double t_hit = p.normal_c.dot(p.center_c) / denom;
          if (t_hit <= cam.near_z || t_hit >= cam.far_z) continue;
          const Vec3 q = t_hit * d - p.center_c;
          const double u = q.dot(p.axis_u) / p.su;
          const double v = q.dot(p.axis_v) / p.sv;
          const double r2 = u * u + v * v;
          if (r2 > cut2) continue;
          frags.push_back({k, std::exp(-0.5 * r2), t_hit, u, v});
        }
        if (frags.empty()) continue;
        std::sort(frags.begin(), frags.end(), [&](const Frag2& a, const Frag2& b) {
          return a.depth != b.depth ? a.depth < b.depth : c.prep[a.pi].id < c.prep[b.pi].id;
        });

        double T = 1.0, S = 0.0, Sz = 0.0;
        Vec3 C = Vec3::Zero(), M = Vec3::Zero();
        double median = kNoDepth;
        for (const Frag2& f : frags) {
          const Prepared2D& p = c.prep[f.pi];
          const double a = std::min(p.opacity * f.gauss, cfg.alpha_clamp);
          const double w = a * T;
          C += w * p.c;
          M += w * p.normal_c;
          S += w;
          Sz += w * f.depth;
          if (median == kNoDepth && S >= 0.5) median = f.depth;
          T *= 1.0 - a;
        }
        out.color.set_rgb(y, x, C);
        out.transmitted.set_rgb(y, x, C);
        out.normal_premul.set_rgb(y, x, M);
        const double mn = M.norm();
        if (mn > 1e-12) out.normal.set_rgb(y, x, M / mn);
        out.depth.at(y, x) = Sz / (S + eps);
        out.median_depth.at(y, x) = median;
        out.alpha.at(y, x) = S;
      }
    }
  }
  return out;
}

}  // namespace dsplat
