#pragma once

#include "dsplat/camera.hpp"
#include "dsplat/image.hpp"
#include "dsplat/primitives.hpp"

#include <vector>

namespace dsplat {

struct RenderConfig {
  double cutoff_sigma = 3.0;   // fragment admitted while maha <= cutoff^2
  double alpha_clamp = 0.999;  // blending alpha upper bound
  double depth_eps = 1e-8;     // stabilizer of the expected-depth ratio
  double dilation = 0.3;       // screen-space covariance floor, px^2
  int tile_size = 16;
  // Alternative reading of the confidence product: (1 - beta_j * alpha_ref_j)
  // instead of (1 - beta_j).
  bool confidence_product_includes_alpha = false;
};

/// Per-pixel maps produced by a render. The 3D branch fills the decomposition
/// maps (transmitted/reflected/confidence); the 2D branch fills depth/normal.
struct RenderOutput {
  int h = 0, w = 0;
  Image color;          // H x W x 3, C
  Image transmitted;    // H x W x 3, C_tran
  Image reflected;      // H x W x 3, C_ref
  Image confidence;     // H x W,     W
  Image depth;          // H x W,     expected depth (0 where empty)
  Image median_depth;   // H x W,     kNoDepth where accumulation never reaches 0.5
  Image normal;         // H x W x 3, unit camera-frame normals
  Image normal_premul;  // H x W x 3, sum_i w_i n_i before normalization
  Image alpha;          // H x W,     accumulated alpha (= sum_i w_i)
};

/// Upstream gradients w.r.t. rendered maps. Empty images are treated as zero.
/// median_depth is not differentiable.
struct RenderGrads {
  Image d_color, d_transmitted, d_reflected, d_confidence, d_depth, d_normal_premul, d_alpha;
};

struct Prepared3D {
  int id = 0;
  Vec2 mean2d;
  Mat2 cov_inv;
  double depth = 0;
  double op_t = 0, op_r = 0, beta = 0;
  Vec3 c_t, c_r;          // clamped view-dependent colors
  Vec3 c_t_raw, c_r_raw;  // before the non-negativity clamp
  Vec3 dir;               // unit view direction (camera -> primitive, world frame)
  double dist = 0;
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // pixel bbox, [x0,x1) x [y0,y1)
};

struct Frag {
  int pi;        // index into RenderCache3D::prep
  double gauss;  // exp(-maha/2)
};

struct RenderCache3D {
  int h = 0, w = 0;
  int tiles_x = 0, tiles_y = 0, tile = 16;
  std::vector<Prepared3D> prep;        // visible primitives, front-to-back
  std::vector<std::vector<int>> bins;  // per tile: indices into prep, front-to-back
  std::vector<std::vector<Frag>> px;   // per pixel: blended fragments, front-to-back
  bool valid() const { return h > 0 && w > 0 && px.size() == static_cast<std::size_t>(h) * w; }
};

struct Prepared2D {
  int id = 0;
  Vec3 center_c, axis_u, axis_v, normal_c;  // camera frame; normal_c is camera-facing
  double su = 0, sv = 0;
  double flip = 1.0;  // sign applied to axis_u x axis_v to face the camera
  double opacity = 0;
  Vec3 c, c_raw;
  Vec3 dir;
  double dist = 0;
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
};

struct Frag2 {
  int pi;
  double gauss, depth, u, v;
};

struct RenderCache2D {
  int h = 0, w = 0;
  int tiles_x = 0, tiles_y = 0, tile = 16;
  std::vector<Prepared2D> prep;
  std::vector<std::vector<int>> bins;
  std::vector<std::vector<Frag2>> px;
  bool valid() const { return h > 0 && w > 0 && px.size() == static_cast<std::size_t>(h) * w; }
};

/// Tiled forward renders (OpenMP over tiles). Pass a cache to keep the
/// fragment lists needed by the backward passes.
RenderOutput render_3d(const GaussianCloud& cloud, const Camera& cam, const RenderConfig& cfg = {},
                       RenderCache3D* cache = nullptr);
RenderOutput render_2d(const SurfelCloud& cloud, const Camera& cam, const RenderConfig& cfg = {},
                       RenderCache2D* cache = nullptr);

/// Analytic backward passes. Gradients accumulate into cloud.grads; per-tile
/// partial buffers are reduced in tile order, so results do not depend on the
/// number of worker threads.
void backward_3d(GaussianCloud& cloud, const Camera& cam, const RenderConfig& cfg,
                 const RenderOutput& out, const RenderCache3D& cache, const RenderGrads& grads);
void backward_2d(SurfelCloud& cloud, const Camera& cam, const RenderConfig& cfg,
                 const RenderOutput& out, const RenderCache2D& cache, const RenderGrads& grads);

/// Serial reference renderers: per pixel, every primitive is evaluated with no
/// tiling, binning or bounding boxes. Kept as the oracle for the tiled path.
RenderOutput reference_render_3d(const GaussianCloud& cloud, const Camera& cam,
                                 const RenderConfig& cfg = {});
RenderOutput reference_render_2d(const SurfelCloud& cloud, const Camera& cam,
                                 const RenderConfig& cfg = {});

}  // namespace dsplat
