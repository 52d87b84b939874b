#include "dsplat/geometry.hpp"
#include "dsplat/render.hpp"

#include <algorithm>
#include <cmath>

namespace dsplat {

namespace {

struct MapReader {
  const Image* img;
  double at(int y, int x, int ch = 0) const { return img->empty() ? 0.0 : img->at(y, x, ch); }
  Vec3 rgb(int y, int x) const { return img->empty() ? Vec3::Zero() : img->rgb(y, x); }
  bool zero() const { return img->empty(); }
};

// Slot layout of the per-primitive intermediate gradients (3D branch).
enum Slot3 : int {
  kDMean2dX = 0,
  kDMean2dY,
  kDCov00,
  kDCov01,
  kDCov10,
  kDCov11,
  kDDepth,
  kDOpT,
  kDOpR,
  kDBeta,
  kDCt0,
  kDCt1,
  kDCt2,
  kDCr0,
  kDCr1,
  kDCr2,
  kSlots3
};

// Slot layout for the 2D branch.
enum Slot2 : int {
  kDOp = 0,
  kDc0,
  kDc1,
  kDc2,
  kDCc0,
  kDCc1,
  kDCc2,
  kDAu0,
  kDAu1,
  kDAu2,
  kDAv0,
  kDAv1,
  kDAv2,
  kDn0,
  kDn1,
  kDn2,
  kDSu,
  kDSv,
  kSlots2
};

}  // namespace

void backward_3d(GaussianCloud& cloud, const Camera& cam, const RenderConfig& cfg,
                 const RenderOutput& out, const RenderCache3D& cache, const RenderGrads& grads) {
  if (!cache.valid() || cache.h != cam.height || cache.w != cam.width)
    throw std::logic_error("backward_3d: missing or stale forward cache");
  if (cloud.grads.size() != cloud.params.size()) cloud.grads.assign(cloud.params.size(), 0.0);

  const MapReader g_color{&grads.d_color}, g_tran{&grads.d_transmitted}, g_ref{&grads.d_reflected};
  const MapReader g_conf{&grads.d_confidence}, g_depth{&grads.d_depth}, g_alpha{&grads.d_alpha};

  const std::size_t n_tiles = cache.bins.size();
  std::vector<std::vector<double>> tile_acc(n_tiles);

#pragma omp parallel for schedule(dynamic)
  for (long long t = 0; t < static_cast<long long>(n_tiles); ++t) {
    const std::vector<int>& list = cache.bins[t];
    if (list.empty()) continue;
    std::vector<int> slot(cache.prep.size(), -1);
    for (std::size_t s = 0; s < list.size(); ++s) slot[list[s]] = static_cast<int>(s);
    std::vector<double>& acc = tile_acc[t];
    acc.assign(list.size() * kSlots3, 0.0);

    const int tx = static_cast<int>(t) % cache.tiles_x, ty = static_cast<int>(t) / cache.tiles_x;
    const int px0 = tx * cache.tile, px1 = std::min(cam.width, px0 + cache.tile);
    const int py0 = ty * cache.tile, py1 = std::min(cam.height, py0 + cache.tile);

    std::vector<double> a_t, a_r, T_t, T_r, T_b, w_t, w_r;
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const std::vector<Frag>& frags = cache.px[static_cast<std::size_t>(y) * cam.width + x];
        if (frags.empty()) continue;
        const std::size_t n = frags.size();
        a_t.resize(n);
        a_r.resize(n);
        T_t.resize(n);
        T_r.resize(n);
        T_b.resize(n);
        w_t.resize(n);
        w_r.resize(n);
        double tt = 1.0, tr = 1.0, tb = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const Prepared3D& p = cache.prep[frags[i].pi];
          const double g = frags[i].gauss;
          a_t[i] = std::min(p.op_t * g, cfg.alpha_clamp);
          a_r[i] = std::min(p.op_r * g, cfg.alpha_clamp);
          T_t[i] = tt;
          T_r[i] = tr;
          T_b[i] = tb;
          w_t[i] = a_t[i] * tt;
          w_r[i] = a_r[i] * tr;
          tt *= 1.0 - a_t[i];
          tr *= 1.0 - a_r[i];
          tb *= cfg.confidence_product_includes_alpha ? 1.0 - p.beta * a_r[i] : 1.0 - p.beta;
        }

        const Vec3 gC = g_color.rgb(y, x);
        const Vec3 gCt = g_tran.rgb(y, x) + gC;
        const double Wc = out.confidence.at(y, x);
        const Vec3 Cr_px = out.reflected.rgb(y, x);
        const Vec3 gCr = g_ref.rgb(y, x) + gC * Wc;
        const double gW = g_conf.at(y, x) + gC.dot(Cr_px);
        const double gZ = g_depth.at(y, x);
        const double gA = g_alpha.at(y, x);
        const double Z = out.depth.at(y, x);
        const double denom = out.alpha.at(y, x) + cfg.depth_eps;
        const Vec2 pix(x + 0.5, y + 0.5);

        double Qt = 0.0, Qr = 0.0, Qb = 0.0;
        for (long long i = static_cast<long long>(n) - 1; i >= 0; --i) {
          const Frag& f = frags[i];
          const Prepared3D& p = cache.prep[f.pi];
          double* A = acc.data() + static_cast<std::size_t>(slot[f.pi]) * kSlots3;
          const double g = f.gauss;

          // transmitted chain (color + depth + alpha share w_t)
          const double gwt = gCt.dot(p.c_t) + gZ * (p.depth - Z) / denom + gA;
          const double dat = gwt * T_t[i] - Qt / (1.0 - a_t[i]);
          Qt += gwt * w_t[i];
          A[kDCt0] += gCt[0] * w_t[i];
          A[kDCt1] += gCt[1] * w_t[i];
          A[kDCt2] += gCt[2] * w_t[i];
          A[kDDepth] += gZ * w_t[i] / denom;

          // reflected color chain
          const double gwr = gCr.dot(p.c_r);
          double dar = gwr * T_r[i] - Qr / (1.0 - a_r[i]);
          Qr += gwr * w_r[i];
          A[kDCr0] += gCr[0] * w_r[i];
          A[kDCr1] += gCr[1] * w_r[i];
          A[kDCr2] += gCr[2] * w_r[i];

          // confidence chain
          double dbeta;
          if (!cfg.confidence_product_includes_alpha) {
            dbeta = gW * a_r[i] * T_b[i] - Qb / (1.0 - p.beta);
            dar += gW * p.beta * T_b[i];
          } else {
            const double base = 1.0 - p.beta * a_r[i];
            dbeta = gW * a_r[i] * T_b[i] - Qb * a_r[i] / base;
            dar += gW * p.beta * T_b[i] - Qb * p.beta / base;
          }
          Qb += gW * p.beta * a_r[i] * T_b[i];
          A[kDBeta] += dbeta;

          // alpha -> opacity and Gaussian weight
          double dG = 0.0;
          if (p.op_t * g < cfg.alpha_clamp) {
            A[kDOpT] += dat * g;
            dG += dat * p.op_t;
          }
          if (p.op_r * g < cfg.alpha_clamp) {
            A[kDOpR] += dar * g;
            dG += dar * p.op_r;
          }
          if (dG != 0.0) {
            const double dmaha = -0.5 * g * dG;
            const Vec2 d = pix - p.mean2d;
            const Vec2 pd = p.cov_inv * d;
            A[kDMean2dX] -= 2.0 * dmaha * pd.x();
            A[kDMean2dY] -= 2.0 * dmaha * pd.y();
            A[kDCov00] -= dmaha * pd.x() * pd.x();
            A[kDCov01] -= dmaha * pd.x() * pd.y();
            A[kDCov10] -= dmaha * pd.y() * pd.x();
            A[kDCov11] -= dmaha * pd.y() * pd.y();
          }
        }
      }
    }
  }

  // Fixed-order reduction across tiles keeps results thread-count independent.
  std::vector<double> inter(cache.prep.size() * kSlots3, 0.0);
  for (std::size_t t = 0; t < n_tiles; ++t) {
    if (tile_acc[t].empty()) continue;
    const std::vector<int>& list = cache.bins[t];
    for (std::size_t s = 0; s < list.size(); ++s) {
      double* dst = inter.data() + static_cast<std::size_t>(list[s]) * kSlots3;
      const double* src = tile_acc[t].data() + s * kSlots3;
      for (int k = 0; k < kSlots3; ++k) dst[k] += src[k];
    }
  }

#pragma omp parallel for schedule(static)
  for (long long k = 0; k < static_cast<long long>(cache.prep.size()); ++k) {
    const Prepared3D& p = cache.prep[k];
    const double* A = inter.data() + static_cast<std::size_t>(k) * kSlots3;
    const std::size_t id = static_cast<std::size_t>(p.id);
    const ActivatedGaussian a = cloud.activate(id);
    const double* raw = cloud.prim(id);
    double* gr = cloud.grad(id);
    const int basis = cloud.basis();

    double yb[16];
    Vec3 gyb[16];
    sh_basis_grad(basis, p.dir, yb, gyb);
    Vec3 ddir = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) {
      if (p.c_t_raw[ch] > 0.0) {
        const double dc = A[kDCt0 + ch];
        Vec3 dpoly = Vec3::Zero();
        for (int b = 0; b < basis; ++b) {
          gr[cloud.sh_tran_off(ch, b)] += dc * yb[b];
          dpoly += raw[cloud.sh_tran_off(ch, b)] * gyb[b];
        }
        ddir += dc * dpoly;
      }
      if (p.c_r_raw[ch] > 0.0) {
        const double dc = A[kDCr0 + ch];
        Vec3 dpoly = Vec3::Zero();
        for (int b = 0; b < basis; ++b) {
          gr[cloud.sh_ref_off(ch, b)] += dc * yb[b];
          dpoly += raw[cloud.sh_ref_off(ch, b)] * gyb[b];
        }
        ddir += dc * dpoly;
      }
    }

    const Vec2 dm2d(A[kDMean2dX], A[kDMean2dY]);
    Mat2 dcov;
    dcov << A[kDCov00], A[kDCov01], A[kDCov10], A[kDCov11];
    const Vec4 quat_raw(raw[GaussianCloud::kRot], raw[GaussianCloud::kRot + 1],
                        raw[GaussianCloud::kRot + 2], raw[GaussianCloud::kRot + 3]);
    const ProjectGaussianGrads pg =
        project_gaussian_backward(a.mean, a.scale, quat_raw, cam, dm2d, dcov, A[kDDepth]);

    const Vec3 dmean = pg.d_mean + (Mat3::Identity() - p.dir * p.dir.transpose()) / p.dist * ddir;
    for (int c = 0; c < 3; ++c) gr[GaussianCloud::kMean + c] += dmean[c];
    for (int c = 0; c < 3; ++c) gr[GaussianCloud::kLogScale + c] += pg.d_scale[c] * a.scale[c];
    for (int c = 0; c < 4; ++c) gr[GaussianCloud::kRot + c] += pg.d_quat[c];
    gr[GaussianCloud::kOpacityTran] += A[kDOpT] * a.opacity_tran * (1.0 - a.opacity_tran);
    gr[GaussianCloud::kOpacityRef] += A[kDOpR] * a.opacity_ref * (1.0 - a.opacity_ref);
    gr[GaussianCloud::kBeta] += A[kDBeta] * a.beta * (1.0 - a.beta);

    cloud.densify_grad_accum[id] += dm2d.norm();
    cloud.densify_grad_count[id] += 1;
  }
}

void backward_2d(SurfelCloud& cloud, const Camera& cam, const RenderConfig& cfg,
                 const RenderOutput& out, const RenderCache2D& cache, const RenderGrads& grads) {
  if (!cache.valid() || cache.h != cam.height || cache.w != cam.width)
    throw std::logic_error("backward_2d: missing or stale forward cache");
  if (cloud.grads.size() != cloud.params.size()) cloud.grads.assign(cloud.params.size(), 0.0);

  const MapReader g_color{&grads.d_color}, g_depth{&grads.d_depth},
      g_premul{&grads.d_normal_premul}, g_alpha{&grads.d_alpha};

  const std::size_t n_tiles = cache.bins.size();
  std::vector<std::vector<double>> tile_acc(n_tiles);

#pragma omp parallel for schedule(dynamic)
  for (long long t = 0; t < static_cast<long long>(n_tiles); ++t) {
    const std::vector<int>& list = cache.bins[t];
    if (list.empty()) continue;
    std::vector<int> slot(cache.prep.size(), -1);
    for (std::size_t s = 0; s < list.size(); ++s) slot[list[s]] = static_cast<int>(s);
    std::vector<double>& acc = tile_acc[t];
    acc.assign(list.size() * kSlots2, 0.0);

    const int tx = static_cast<int>(t) % cache.tiles_x, ty = static_cast<int>(t) / cache.tiles_x;
    const int px0 = tx * cache.tile, px1 = std::min(cam.width, px0 + cache.tile);
    const int py0 = ty * cache.tile, py1 = std::min(cam.height, py0 + cache.tile);

    std::vector<double> av, Tv, wv;
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const std::vector<Frag2>& frags = cache.px[static_cast<std::size_t>(y) * cam.width + x];
        if (frags.empty()) continue;
        const std::size_t n = frags.size();
        av.resize(n);
        Tv.resize(n);
        wv.resize(n);
        double tt = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const Prepared2D& p = cache.prep[frags[i].pi];
          av[i] = std::min(p.opacity * frags[i].gauss, cfg.alpha_clamp);
          Tv[i] = tt;
          wv[i] = av[i] * tt;
          tt *= 1.0 - av[i];
        }

        const Vec3 gC = g_color.rgb(y, x);
        const Vec3 gM = g_premul.rgb(y, x);
        const double gZ = g_depth.at(y, x);
        const double gA = g_alpha.at(y, x);
        const double Z = out.depth.at(y, x);
        const double denom = out.alpha.at(y, x) + cfg.depth_eps;
        const Vec3 d = cam.pixel_dir_z1(x + 0.5, y + 0.5);

        double Q = 0.0;
        for (long long i = static_cast<long long>(n) - 1; i >= 0; --i) {
          const Frag2& f = frags[i];
          const Prepared2D& p = cache.prep[f.pi];
          double* A = acc.data() + static_cast<std::size_t>(slot[f.pi]) * kSlots2;

          const double gw = gC.dot(p.c) + gZ * (f.depth - Z) / denom + gM.dot(p.normal_c) + gA;
          const double da = gw * Tv[i] - Q / (1.0 - av[i]);
          Q += gw * wv[i];

          A[kDc0] += gC[0] * wv[i];
          A[kDc1] += gC[1] * wv[i];
          A[kDc2] += gC[2] * wv[i];
          A[kDn0] += gM[0] * wv[i];
          A[kDn1] += gM[1] * wv[i];
          A[kDn2] += gM[2] * wv[i];

          double dG = 0.0;
          if (p.opacity * f.gauss < cfg.alpha_clamp) {
            A[kDOp] += da * f.gauss;
            dG = da * p.opacity;
          }
          const double duL = -f.u * f.gauss * dG;
          const double dvL = -f.v * f.gauss * dG;

          const double D = p.normal_c.dot(d);
          const Vec3 q = f.depth * d - p.center_c;
          const Vec3 dqv = duL * p.axis_u / p.su + dvL * p.axis_v / p.sv;
          const double dt_total = gZ * wv[i] / denom + dqv.dot(d);

          const Vec3 dcc = -dqv + dt_total * (p.normal_c / D);
          const Vec3 dn = dt_total * (-q) / D;
          A[kDCc0] += dcc[0];
          A[kDCc1] += dcc[1];
          A[kDCc2] += dcc[2];
          A[kDn0] += dn[0];
          A[kDn1] += dn[1];
          A[kDn2] += dn[2];
          for (int c2 = 0; c2 < 3; ++c2) {
            A[kDAu0 + c2] += duL * q[c2] / p.su;
            A[kDAv0 + c2] += dvL * q[c2] / p.sv;
          }
          A[kDSu] += -duL * f.u / p.su;
          A[kDSv] += -dvL * f.v / p.sv;
        }
      }
    }
  }

  std::vector<double> inter(cache.prep.size() * kSlots2, 0.0);
  for (std::size_t t = 0; t < n_tiles; ++t) {
    if (tile_acc[t].empty()) continue;
    const std::vector<int>& list = cache.bins[t];
    for (std::size_t s = 0; s < list.size(); ++s) {
      double* dst = inter.data() + static_cast<std::size_t>(list[s]) * kSlots2;
      const double* src = tile_acc[t].data() + s * kSlots2;
      for (int k = 0; k < kSlots2; ++k) dst[k] += src[k];
    }
  }

  const Mat3 rot_t = cam.rotation().transpose();
#pragma omp parallel for schedule(static)
  for (long long k = 0; k < static_cast<long long>(cache.prep.size()); ++k) {
    const Prepared2D& p = cache.prep[k];
    const double* A = inter.data() + static_cast<std::size_t>(k) * kSlots2;
    const std::size_t id = static_cast<std::size_t>(p.id);
    const ActivatedSurfel a = cloud.activate(id);
    const double* raw = cloud.prim(id);
    double* gr = cloud.grad(id);
    const int basis = cloud.basis();

    double yb[16];
    Vec3 gyb[16];
    sh_basis_grad(basis, p.dir, yb, gyb);
    Vec3 ddir = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) {
      if (p.c_raw[ch] > 0.0) {
        const double dc = A[kDc0 + ch];
        Vec3 dpoly = Vec3::Zero();
        for (int b = 0; b < basis; ++b) {
          gr[cloud.sh_off(ch, b)] += dc * yb[b];
          dpoly += raw[cloud.sh_off(ch, b)] * gyb[b];
        }
        ddir += dc * dpoly;
      }
    }

    const Vec3 dcc(A[kDCc0], A[kDCc1], A[kDCc2]);
    const Vec3 dcenter =
        rot_t * dcc + (Mat3::Identity() - p.dir * p.dir.transpose()) / p.dist * ddir;
    for (int c = 0; c < 3; ++c) gr[SurfelCloud::kCenter + c] += dcenter[c];

    Mat3 d_rq;
    d_rq.col(0) = rot_t * Vec3(A[kDAu0], A[kDAu1], A[kDAu2]);
    d_rq.col(1) = rot_t * Vec3(A[kDAv0], A[kDAv1], A[kDAv2]);
    d_rq.col(2) = p.flip * (rot_t * Vec3(A[kDn0], A[kDn1], A[kDn2]));
    Mat3 dR[4];
    quat_to_rot_grads(a.quat, dR);
    Vec4 dq_unit;
    for (int c = 0; c < 4; ++c) dq_unit[c] = (d_rq.array() * dR[c].array()).sum();
    const Vec4 quat_raw(raw[SurfelCloud::kRot], raw[SurfelCloud::kRot + 1],
                        raw[SurfelCloud::kRot + 2], raw[SurfelCloud::kRot + 3]);
    const Vec4 dquat = backprop_quat_normalize(quat_raw, dq_unit);
    for (int c = 0; c < 4; ++c) gr[SurfelCloud::kRot + c] += dquat[c];

    gr[SurfelCloud::kLogScaleU] += A[kDSu] * a.scale_u;
    gr[SurfelCloud::kLogScaleV] += A[kDSv] * a.scale_v;
    gr[SurfelCloud::kOpacity] += A[kDOp] * a.opacity * (1.0 - a.opacity);

    cloud.densify_grad_accum[id] += dcc.norm();
    cloud.densify_grad_count[id] += 1;
  }
}

}  // namespace dsplat
