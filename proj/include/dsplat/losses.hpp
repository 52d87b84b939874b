#pragma once

#include "dsplat/camera.hpp"
#include "dsplat/image.hpp"
#include "dsplat/render.hpp"

namespace dsplat {

struct LossWeights {
  double l1_weight = 0.8;       // L1 vs D-SSIM blend inside the rendering loss
  double tv_transmitted = 0.1;  // transmitted-color TV (3D branch)
  double normal_block = 0.05;   // weight of the whole normal block (2D branch)
  double tv_normal = 0.05;      // normal TV inside the normal block
  double tv_depth = 0.05;       // depth TV
  double mutual_blend = 0.8;    // mutual target vs GT inside the mutual rendering loss
  double gamma_fg = 1.0, gamma_bg = 0.1;
  double w_2d = 0.5, w_3d = 0.5, w_depth_mutual = 0.01;

  void validate() const;
};

/// Named scalar per loss term plus the stage totals.
struct LossReport {
  double render_3d = 0, tv_tran = 0;
  double render_2d = 0, normal = 0, tv_normal = 0, tv_depth = 0;
  double mutual_render = 0, depth_mutual = 0;
  double loss_3d = 0, loss_2d = 0, loss_z = 0, total = 0;
  bool normal_all_invalid = false;
};

// --- elementary terms -------------------------------------------------------
// Every loss takes an optional gradient sink; `up` scales the accumulated
// gradient (pass the chain weight of the term).

double l1_loss(const Image& img, const Image& target, double up = 0.0, Image* d_img = nullptr,
               Image* d_target = nullptr);

/// Mean SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01 K2=0.03, symmetric
/// edge padding. Throws if the image is smaller than the window.
double ssim(const Image& img, const Image& ref);
double ssim_with_grad(const Image& img, const Image& ref, double up, Image* d_img,
                      Image* d_ref = nullptr);

/// l1_weight * L1 + (1 - l1_weight) * (1 - SSIM)/2.
double render_loss(const Image& img, const Image& target, double l1_weight, double up = 0.0,
                   Image* d_img = nullptr, Image* d_target = nullptr);

/// Anisotropic TV: mean |horizontal diff| + mean |vertical diff|. A degenerate
/// single-row (or single-column) map omits the corresponding term. An optional
/// mask restricts the means to difference pairs with both pixels valid.
double tv_loss(const Image& map, double up = 0.0, Image* d_map = nullptr,
               const Image* mask = nullptr);

struct DepthNormals {
  Image normal;  // H x W x 3, camera-facing unit normals
  Image valid;   // H x W, 1 where defined
};

/// Normals from the gradients of a depth map (camera-frame backprojection;
/// central differences inside, one-sided at the borders). Pixels with zero
/// depth in the stencil or a degenerate cross product are marked invalid.
DepthNormals depth_to_normal(const Image& depth, const Camera& cam);
void depth_to_normal_backward(const Image& depth, const Camera& cam, const DepthNormals& dn,
                              const Image& d_normal, Image* d_depth);

/// sum_i w_i (1 - n_i . N) realized on rendered maps as alpha - premul . N,
/// gamma-weighted and averaged over valid pixels. Returns 0 and sets
/// `all_invalid` when no pixel is valid.
double normal_loss(const Image& premul, const Image& alpha, const DepthNormals& dn,
                   const Image& gamma_map, double up = 0.0, Image* d_premul = nullptr,
                   Image* d_alpha = nullptr, Image* d_normal = nullptr,
                   bool* all_invalid = nullptr);

/// Gamma-weighted mean squared difference over pixels where neither depth is
/// the kNoDepth sentinel.
double depth_mutual_loss(const Image& z_a, const Image& z_b, const Image& gamma_map,
                         double up = 0.0, Image* d_za = nullptr, Image* d_zb = nullptr);

/// mutual_blend * render_loss(img, transmitted) + (1-mutual_blend) * render_loss(img, gt).
/// Gradients flow to the targets only through the explicit sinks.
double mutual_render_loss(const Image& img, const Image& transmitted, const Image& gt,
                          const LossWeights& w, double up = 0.0, Image* d_img = nullptr,
                          Image* d_transmitted = nullptr);

// --- branch objectives ------------------------------------------------------

/// 3D warm-up objective: render_loss(C, gt) + tv_transmitted * tv(C_tran).
double loss_3d(const RenderOutput& out, const Image& gt, const LossWeights& w,
               LossReport* report = nullptr, RenderGrads* grads = nullptr);

/// 2D warm-up objective:
/// render_loss + normal_block*(normal + tv_normal*n-TV) + tv_depth*d-TV.
double loss_2d_warmup(const RenderOutput& out, const Image& gt, const Image& gamma_map,
                      const Camera& cam, const LossWeights& w, LossReport* report = nullptr,
                      RenderGrads* grads = nullptr);

/// Mutual-stage 2D objective: the warm-up form with the render term replaced
/// by the mutual rendering loss and the TV terms restricted to the coverage of
/// the (detached) transmitted target.
double loss_2d_mutual(const RenderOutput& out, const Image& transmitted_target,
                      const Image& coverage_mask, const Image& gt, const Image& gamma_map,
                      const Camera& cam, const LossWeights& w, LossReport* report = nullptr,
                      RenderGrads* grads = nullptr, Image* d_transmitted_target = nullptr);

/// Total alternating-stage objective: w_2d*L_2D + w_3d*L_3D + w_depth_mutual*L_Z.
inline double total_mutual_loss(double l_2d, double l_3d, double l_z, const LossWeights& w) {
  return w.w_2d * l_2d + w.w_3d * l_3d + w.w_depth_mutual * l_z;
}

/// Per-pixel gamma weights from a foreground mask (gamma_fg on, gamma_bg off).
Image gamma_map_from_mask(const Image& mask, const LossWeights& w);

}  // namespace dsplat
