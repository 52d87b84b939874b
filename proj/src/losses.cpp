#include "dsplat/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dsplat {

void LossWeights::validate() const {
  const double all[] = {l1_weight, tv_transmitted, normal_block, tv_normal, tv_depth,
                        mutual_blend, gamma_fg, gamma_bg, w_2d, w_3d, w_depth_mutual};
  for (double v : all)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
  if (l1_weight > 1.0 || mutual_blend > 1.0)
    throw std::invalid_argument("LossWeights: blend weights must lie in [0,1]");
}

double l1_loss(const Image& img, const Image& target, double up, Image* d_img, Image* d_target) {
  if (!img.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
  if (img.data.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(img.data.size());
  double s = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double d = img.data[i] - target.data[i];
    s += std::abs(d);
    const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    if (d_img) d_img->data[i] += up * inv_n * sg;
    if (d_target) d_target->data[i] -= up * inv_n * sg;
  }
  return s * inv_n;
}

double render_loss(const Image& img, const Image& target, double l1_weight, double up,
                   Image* d_img, Image* d_target) {
  const double l1 = l1_loss(img, target, up * l1_weight, d_img, d_target);
  // D-SSIM = (1 - SSIM)/2, so its upstream is -up/2.
  const double s =
      ssim_with_grad(img, target, -0.5 * up * (1.0 - l1_weight), d_img, d_target);
  return l1_weight * l1 + (1.0 - l1_weight) * 0.5 * (1.0 - s);
}

double tv_loss(const Image& map, double up, Image* d_map, const Image* mask) {
  if (map.h < 1 || map.w < 1) throw std::invalid_argument("tv_loss: empty map");
  if (map.h < 2 && map.w < 2) return 0.0;
  const auto valid = [&](int y, int x) { return !mask || mask->at(y, x) != 0.0; };

  double loss = 0.0;
  for (int pass = 0; pass < 2; ++pass) {
    const bool horizontal = pass == 0;
    if (horizontal && map.w < 2) continue;
    if (!horizontal && map.h < 2) continue;
    double sum = 0.0;
    long long count = 0;
    for (int y = 0; y < (horizontal ? map.h : map.h - 1); ++y)
      for (int x = 0; x < (horizontal ? map.w - 1 : map.w); ++x) {
        const int y2 = horizontal ? y : y + 1;
        const int x2 = horizontal ? x + 1 : x;
        if (!valid(y, x) || !valid(y2, x2)) continue;
        count += map.c;
        for (int c = 0; c < map.c; ++c) sum += std::abs(map.at(y2, x2, c) - map.at(y, x, c));
      }
    if (count == 0) continue;
    loss += sum / static_cast<double>(count);
    if (d_map && up != 0.0) {
      const double w = up / static_cast<double>(count);
      for (int y = 0; y < (horizontal ? map.h : map.h - 1); ++y)
        for (int x = 0; x < (horizontal ? map.w - 1 : map.w); ++x) {
          const int y2 = horizontal ? y : y + 1;
          const int x2 = horizontal ? x + 1 : x;
          if (!valid(y, x) || !valid(y2, x2)) continue;
          for (int c = 0; c < map.c; ++c) {
            const double d = map.at(y2, x2, c) - map.at(y, x, c);
            const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            d_map->at(y2, x2, c) += w * sg;
            d_map->at(y, x, c) -= w * sg;
          }
        }
    }
  }
  return loss;
}

namespace {

inline Vec3 backproject_dir(const Camera& cam, int x, int y) {
  return Vec3((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
}

// Stencil of the depth differences at (x, y): central inside, one-sided at the
// borders. Returns false when any stencil depth is missing (== 0).
struct Stencil {
  int xa, xb, ya, yb;
  double wx, wy;  // 1/step
};

bool stencil_at(const Image& depth, int x, int y, Stencil* st) {
  st->xa = x > 0 ? x - 1 : x;
  st->xb = x < depth.w - 1 ? x + 1 : x;
  st->ya = y > 0 ? y - 1 : y;
  st->yb = y < depth.h - 1 ? y + 1 : y;
  if (st->xa == st->xb || st->ya == st->yb) return false;
  st->wx = 1.0 / (st->xb - st->xa);
  st->wy = 1.0 / (st->yb - st->ya);
  const int xs[] = {st->xa, st->xb, x, x};
  const int ys[] = {y, y, st->ya, st->yb};
  for (int i = 0; i < 4; ++i)
    if (depth.at(ys[i], xs[i]) <= 0.0) return false;
  return depth.at(y, x) > 0.0;
}

}  // namespace

DepthNormals depth_to_normal(const Image& depth, const Camera& cam) {
  DepthNormals out;
  out.normal = Image(depth.h, depth.w, 3);
  out.valid = Image(depth.h, depth.w, 1);
  for (int y = 0; y < depth.h; ++y)
    for (int x = 0; x < depth.w; ++x) {
      Stencil st;
      if (!stencil_at(depth, x, y, &st)) continue;
      const Vec3 pxa = depth.at(y, st.xa) * backproject_dir(cam, st.xa, y);
      const Vec3 pxb = depth.at(y, st.xb) * backproject_dir(cam, st.xb, y);
      const Vec3 pya = depth.at(st.ya, x) * backproject_dir(cam, x, st.ya);
      const Vec3 pyb = depth.at(st.yb, x) * backproject_dir(cam, x, st.yb);
      const Vec3 gx = (pxb - pxa) * st.wx;
      const Vec3 gy = (pyb - pya) * st.wy;
      const Vec3 w = gx.cross(gy);
      const double wn = w.norm();
      if (wn < 1e-12) continue;
      out.normal.set_rgb(y, x, -w / wn);  // oriented toward the camera
      out.valid.at(y, x) = 1.0;
    }
  return out;
}

void depth_to_normal_backward(const Image& depth, const Camera& cam, const DepthNormals& dn,
                              const Image& d_normal, Image* d_depth) {
  for (int y = 0; y < depth.h; ++y)
    for (int x = 0; x < depth.w; ++x) {
      if (dn.valid.at(y, x) == 0.0) continue;
      const Vec3 g = d_normal.rgb(y, x);
      if (g.isZero()) continue;
      Stencil st;
      if (!stencil_at(depth, x, y, &st)) continue;
      const Vec3 dir_xa = backproject_dir(cam, st.xa, y), dir_xb = backproject_dir(cam, st.xb, y);
      const Vec3 dir_ya = backproject_dir(cam, x, st.ya), dir_yb = backproject_dir(cam, x, st.yb);
      const Vec3 pxa = depth.at(y, st.xa) * dir_xa;
      const Vec3 pxb = depth.at(y, st.xb) * dir_xb;
      const Vec3 pya = depth.at(st.ya, x) * dir_ya;
      const Vec3 pyb = depth.at(st.yb, x) * dir_yb;
      const Vec3 gx = (pxb - pxa) * st.wx;
      const Vec3 gy = (pyb - pya) * st.wy;
      const Vec3 w = gx.cross(gy);
      const double wn = w.norm();
      const Vec3 n = dn.normal.rgb(y, x);
      // N = -w/|w|  =>  dL/dw = -(I - n n^T) g / |w|
      const Vec3 dw = -(g - n * n.dot(g)) / wn;
      const Vec3 dgx = gy.cross(dw);
      const Vec3 dgy = dw.cross(gx);
      d_depth->at(y, st.xb) += st.wx * dgx.dot(dir_xb);
      d_depth->at(y, st.xa) -= st.wx * dgx.dot(dir_xa);
      d_depth->at(st.yb, x) += st.wy * dgy.dot(dir_yb);
      d_depth->at(st.ya, x) -= st.wy * dgy.dot(dir_ya);
    }
}

double normal_loss(const Image& premul, const Image& alpha, const DepthNormals& dn,
                   const Image& gamma_map, double up, Image* d_premul, Image* d_alpha,
                   Image* d_normal, bool* all_invalid) {
  long long n_valid = 0;
  for (int y = 0; y < premul.h; ++y)
    for (int x = 0; x < premul.w; ++x)
      if (dn.valid.at(y, x) != 0.0) ++n_valid;
  if (all_invalid) *all_invalid = n_valid == 0;
  if (n_valid == 0) return 0.0;

  const double inv = 1.0 / static_cast<double>(n_valid);
  double loss = 0.0;
  for (int y = 0; y < premul.h; ++y)
    for (int x = 0; x < premul.w; ++x) {
      if (dn.valid.at(y, x) == 0.0) continue;
      const double gmm = gamma_map.empty() ? 1.0 : gamma_map.at(y, x);
      const Vec3 m = premul.rgb(y, x);
      const Vec3 n = dn.normal.rgb(y, x);
      loss += gmm * (alpha.at(y, x) - m.dot(n)) * inv;
      if (up != 0.0) {
        if (d_premul)
          for (int c = 0; c < 3; ++c) d_premul->at(y, x, c) -= up * gmm * inv * n[c];
        if (d_alpha) d_alpha->at(y, x) += up * gmm * inv;
        if (d_normal)
          for (int c = 0; c < 3; ++c) d_normal->at(y, x, c) -= up * gmm * inv * m[c];
      }
    }
  return loss;
}

double depth_mutual_loss(const Image& z_a, const Image& z_b, const Image& gamma_map, double up,
                         Image* d_za, Image* d_zb) {
  if (!z_a.same_shape(z_b)) throw std::invalid_argument("depth_mutual_loss: shape mismatch");
  long long n_valid = 0;
  for (std::size_t i = 0; i < z_a.data.size(); ++i)
    if (z_a.data[i] != kNoDepth && z_b.data[i] != kNoDepth) ++n_valid;
  if (n_valid == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(n_valid);
  double loss = 0.0;
  for (int y = 0; y < z_a.h; ++y)
    for (int x = 0; x < z_a.w; ++x) {
      const double za = z_a.at(y, x), zb = z_b.at(y, x);
      if (za == kNoDepth || zb == kNoDepth) continue;
      const double gmm = gamma_map.empty() ? 1.0 : gamma_map.at(y, x);
      loss += gmm * sqr(za - zb) * inv;
      if (up != 0.0) {
        if (d_za) d_za->at(y, x) += up * gmm * inv * 2.0 * (za - zb);
        if (d_zb) d_zb->at(y, x) -= up * gmm * inv * 2.0 * (za - zb);
      }
    }
  return loss;
}

double mutual_render_loss(const Image& img, const Image& transmitted, const Image& gt,
                          const LossWeights& w, double up, Image* d_img, Image* d_transmitted) {
  const double mutual =
      render_loss(img, transmitted, w.l1_weight, up * w.mutual_blend, d_img, d_transmitted);
  const double direct = render_loss(img, gt, w.l1_weight, up * (1.0 - w.mutual_blend), d_img);
  return w.mutual_blend * mutual + (1.0 - w.mutual_blend) * direct;
}

double loss_3d(const RenderOutput& out, const Image& gt, const LossWeights& w, LossReport* report,
               RenderGrads* grads) {
  Image* d_color = nullptr;
  Image* d_tran = nullptr;
  if (grads) {
    if (grads->d_color.empty()) grads->d_color = Image(out.h, out.w, 3);
    if (grads->d_transmitted.empty()) grads->d_transmitted = Image(out.h, out.w, 3);
    d_color = &grads->d_color;
    d_tran = &grads->d_transmitted;
  }
  const double render = render_loss(out.color, gt, w.l1_weight, 1.0, d_color);
  const double tv = tv_loss(out.transmitted, w.tv_transmitted, d_tran);
  const double total = render + w.tv_transmitted * tv;
  if (report) {
    report->render_3d = render;
    report->tv_tran = tv;
    report->loss_3d = total;
  }
  return total;
}

namespace {

struct NormalBlockSinks {
  Image d_normal_px;  // grad w.r.t. the normalized normal map
  Image d_depth;      // accumulated depth gradient from the normal path
};

// Shared 2D objective: render term is already computed by the caller, this
// adds the normal block and the depth TV, chaining maps back to the renderer.
double add_geometry_terms(const RenderOutput& out, const Image& gamma_map, const Camera& cam,
                          const LossWeights& w, const Image* tv_mask, LossReport* report,
                          RenderGrads* grads) {
  DepthNormals dn = depth_to_normal(out.depth, cam);

  Image* d_premul = nullptr;
  Image* d_alpha = nullptr;
  Image* d_depth = nullptr;
  if (grads) {
    if (grads->d_normal_premul.empty()) grads->d_normal_premul = Image(out.h, out.w, 3);
    if (grads->d_alpha.empty()) grads->d_alpha = Image(out.h, out.w, 1);
    if (grads->d_depth.empty()) grads->d_depth = Image(out.h, out.w, 1);
    d_premul = &grads->d_normal_premul;
    d_alpha = &grads->d_alpha;
    d_depth = &grads->d_depth;
  }

  Image d_normal_from_depth(out.h, out.w, 3);
  bool all_invalid = false;
  const double l_n = normal_loss(out.normal_premul, out.alpha, dn, gamma_map, w.normal_block,
                                 d_premul, d_alpha, grads ? &d_normal_from_depth : nullptr,
                                 &all_invalid);

  // TV on the rendered (normalized) normal map; chain through normalization.
  Image d_normal_render(out.h, out.w, 3);
  const double l_ntv = tv_loss(out.normal, w.normal_block * w.tv_normal,
                               grads ? &d_normal_render : nullptr, tv_mask);
  if (grads) {
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const Vec3 g = d_normal_render.rgb(y, x);
        if (g.isZero()) continue;
        const Vec3 m = out.normal_premul.rgb(y, x);
        const double mn = m.norm();
        if (mn < 1e-12) continue;
        const Vec3 n = out.normal.rgb(y, x);
        const Vec3 dm = (g - n * n.dot(g)) / mn;
        for (int c = 0; c < 3; ++c) d_premul->at(y, x, c) += dm[c];
      }
  }

  const double l_dtv = tv_loss(out.depth, w.tv_depth, d_depth, tv_mask);

  if (grads) depth_to_normal_backward(out.depth, cam, dn, d_normal_from_depth, d_depth);

  if (report) {
    report->normal = l_n;
    report->tv_normal = l_ntv;
    report->tv_depth = l_dtv;
    report->normal_all_invalid = all_invalid;
  }
  return w.normal_block * (l_n + w.tv_normal * l_ntv) + w.tv_depth * l_dtv;
}

}  // namespace

double loss_2d_warmup(const RenderOutput& out, const Image& gt, const Image& gamma_map,
                      const Camera& cam, const LossWeights& w, LossReport* report,
                      RenderGrads* grads) {
  Image* d_color = nullptr;
  if (grads) {
    if (grads->d_color.empty()) grads->d_color = Image(out.h, out.w, 3);
    d_color = &grads->d_color;
  }
  const double render = render_loss(out.color, gt, w.l1_weight, 1.0, d_color);
  const double geom = add_geometry_terms(out, gamma_map, cam, w, nullptr, report, grads);
  const double total = render + geom;
  if (report) {
    report->render_2d = render;
    report->loss_2d = total;
  }
  return total;
}

double loss_2d_mutual(const RenderOutput& out, const Image& transmitted_target,
                      const Image& coverage_mask, const Image& gt, const Image& gamma_map,
                      const Camera& cam, const LossWeights& w, LossReport* report,
                      RenderGrads* grads, Image* d_transmitted_target) {
  Image* d_color = nullptr;
  if (grads) {
    if (grads->d_color.empty()) grads->d_color = Image(out.h, out.w, 3);
    d_color = &grads->d_color;
  }
  const double render =
      mutual_render_loss(out.color, transmitted_target, gt, w, 1.0, d_color, d_transmitted_target);
  const double geom =
      add_geometry_terms(out, gamma_map, cam, w, coverage_mask.empty() ? nullptr : &coverage_mask,
                         report, grads);
  const double total = render + geom;
  if (report) {
    report->mutual_render = render;
    report->loss_2d = total;
  }
  return total;
}

Image gamma_map_from_mask(const Image& mask, const LossWeights& w) {
  Image g(mask.h, mask.w, 1);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x)
      g.at(y, x) = mask.at(y, x) > 0.5 ? w.gamma_fg : w.gamma_bg;
  return g;
}

}  // namespace dsplat
