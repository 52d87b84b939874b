#pragma once

#include "dsplat/camera.hpp"
#include "dsplat/common.hpp"

namespace dsplat {

/// Unit quaternion (w, x, y, z) -> rotation matrix.
Mat3 quat_to_rot(const Vec4& q);

/// Derivatives of quat_to_rot w.r.t. each component of the *unit* quaternion.
void quat_to_rot_grads(const Vec4& q, Mat3 dR[4]);

/// Normalize a raw quaternion; throws on (near-)zero norm.
Vec4 normalize_quat(const Vec4& q_raw);

/// Chain a gradient w.r.t. the unit quaternion back to the raw quaternion.
Vec4 backprop_quat_normalize(const Vec4& q_raw, const Vec4& d_unit);

struct ProjectedGaussian {
  bool culled = false;
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Zero();
  double depth = 0.0;  // camera-space z of the mean
};

/// EWA projection of an anisotropic Gaussian: cov2d = J R_wc Sigma R_wc^T J^T + dilation*I
/// with Sigma = R diag(scale^2) R^T. Means behind the near plane come back culled.
ProjectedGaussian project_gaussian(const Vec3& mean, const Vec3& scale, const Vec4& rot_quat,
                                   const Camera& cam, double dilation = 0.3);

struct ProjectGaussianGrads {
  Vec3 d_mean = Vec3::Zero();
  Vec3 d_scale = Vec3::Zero();
  Vec4 d_quat = Vec4::Zero();  // w.r.t. the raw (unnormalized) quaternion
};

ProjectGaussianGrads project_gaussian_backward(const Vec3& mean, const Vec3& scale, const Vec4& rot_quat,
                                               const Camera& cam, const Vec2& d_mean2d,
                                               const Mat2& d_cov2d, double d_depth);

struct SurfelHit {
  bool hit = false;
  double u = 0.0, v = 0.0;  // tangent-plane coords in units of the surfel scales
  double depth = 0.0;       // camera-space z of the hit point
  double gauss = 0.0;       // exp(-(u^2+v^2)/2)
};

/// Ray/surfel intersection in world space. `ray_dir` must be unit length;
/// rays parallel to the plane (|dir.n| < 1e-8) report no hit.
SurfelHit intersect_surfel(const Vec3& ray_origin, const Vec3& ray_dir, const Vec3& center,
                           const Vec3& tangent_u, const Vec3& tangent_v, double scale_u,
                           double scale_v, const Camera& cam);

}  // namespace dsplat
