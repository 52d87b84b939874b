#include "dsplat/geometry.hpp"

namespace dsplat {

Mat3 quat_to_rot(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

void quat_to_rot_grads(const Vec4& q, Mat3 dR[4]) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;
  dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  for (int i = 0; i < 4; ++i) dR[i] *= 2.0;
}

Vec4 normalize_quat(const Vec4& q_raw) {
  const double n = q_raw.norm();
  if (n < 1e-12) throw std::invalid_argument("normalize_quat: zero-norm quaternion");
  return q_raw / n;
}

Vec4 backprop_quat_normalize(const Vec4& q_raw, const Vec4& d_unit) {
  const double n = q_raw.norm();
  const Vec4 u = q_raw / n;
  return (d_unit - u * u.dot(d_unit)) / n;
}

namespace {

Mat23 perspective_jacobian(const Vec3& pc, double fx, double fy) {
  const double z = pc.z(), iz = 1.0 / z;
  Mat23 j;
  j << fx * iz, 0, -fx * pc.x() * iz * iz,
      0, fy * iz, -fy * pc.y() * iz * iz;
  return j;
}

}  // namespace

ProjectedGaussian project_gaussian(const Vec3& mean, const Vec3& scale, const Vec4& rot_quat,
                                   const Camera& cam, double dilation) {
  ProjectedGaussian out;
  const Vec3 pc = cam.to_camera(mean);
  if (pc.z() <= cam.near_z) {
    out.culled = true;
    return out;
  }
  out.depth = pc.z();
  out.mean2d = cam.project(pc);

  const Mat3 r = quat_to_rot(normalize_quat(rot_quat));
  const Mat3 sigma = r * scale.array().square().matrix().asDiagonal() * r.transpose();
  const Mat3 sigma_cam = cam.rotation() * sigma * cam.rotation().transpose();
  const Mat23 j = perspective_jacobian(pc, cam.fx, cam.fy);
  out.cov2d = j * sigma_cam * j.transpose() + dilation * Mat2::Identity();
  return out;
}

ProjectGaussianGrads project_gaussian_backward(const Vec3& mean, const Vec3& scale,
                                               const Vec4& rot_quat, const Camera& cam,
                                               const Vec2& d_mean2d, const Mat2& d_cov2d,
                                               double d_depth) {
  ProjectGaussianGrads g;
  const Vec3 pc = cam.to_camera(mean);
  const Vec4 q = normalize_quat(rot_quat);
  const Mat3 r = quat_to_rot(q);
  const Mat3 s2 = scale.array().square().matrix().asDiagonal();
  const Mat3 sigma = r * s2 * r.transpose();
  const Mat3 rot_wc = cam.rotation();
  const Mat3 sigma_cam = rot_wc * sigma * rot_wc.transpose();
  const Mat23 j = perspective_jacobian(pc, cam.fx, cam.fy);

  // Symmetrize the incoming covariance gradient; cov2d is produced symmetric.
  const Mat2 gc = 0.5 * (d_cov2d + d_cov2d.transpose());

  // cov2d = J M J^T  (+ const):  dM = J^T gc J,  dJ = 2 gc J M.
  const Mat3 d_sigma_cam = j.transpose() * gc * j;
  const Mat23 d_j = 2.0 * gc * j * sigma_cam;

  // J entries depend on pc.
  const double z = pc.z(), iz = 1.0 / z, iz2 = iz * iz;
  Vec3 d_pc = Vec3::Zero();
  d_pc.x() += d_j(0, 2) * (-cam.fx * iz2);
  d_pc.y() += d_j(1, 2) * (-cam.fy * iz2);
  d_pc.z() += d_j(0, 0) * (-cam.fx * iz2) + d_j(1, 1) * (-cam.fy * iz2) +
              d_j(0, 2) * (2.0 * cam.fx * pc.x() * iz2 * iz) +
              d_j(1, 2) * (2.0 * cam.fy * pc.y() * iz2 * iz);

  // mean2d = (fx x/z + cx, fy y/z + cy).
  d_pc.x() += d_mean2d.x() * cam.fx * iz;
  d_pc.y() += d_mean2d.y() * cam.fy * iz;
  d_pc.z() += -d_mean2d.x() * cam.fx * pc.x() * iz2 - d_mean2d.y() * cam.fy * pc.y() * iz2;

  d_pc.z() += d_depth;

  g.d_mean = rot_wc.transpose() * d_pc;

  // Sigma chain: Sigma = R S^2 R^T.
  const Mat3 d_sigma = rot_wc.transpose() * d_sigma_cam * rot_wc;
  const Mat3 d_r = (d_sigma + d_sigma.transpose()) * r * s2;
  const Mat3 rt_ds_r = r.transpose() * d_sigma * r;
  for (int k = 0; k < 3; ++k) g.d_scale[k] = 2.0 * scale[k] * rt_ds_r(k, k);

  Mat3 dR[4];
  quat_to_rot_grads(q, dR);
  Vec4 d_q_unit;
  for (int k = 0; k < 4; ++k) d_q_unit[k] = (d_r.array() * dR[k].array()).sum();
  g.d_quat = backprop_quat_normalize(rot_quat, d_q_unit);
  return g;
}

SurfelHit intersect_surfel(const Vec3& ray_origin, const Vec3& ray_dir, const Vec3& center,
                           const Vec3& tangent_u, const Vec3& tangent_v, double scale_u,
                           double scale_v, const Camera& cam) {
  SurfelHit out;
  const Vec3 n = tangent_u.cross(tangent_v);
  const double denom = n.dot(ray_dir);
  if (std::abs(denom) < 1e-8) return out;
  const double t = n.dot(center - ray_origin) / denom;
  const Vec3 p = ray_origin + t * ray_dir;
  const Vec3 q = p - center;
  out.hit = true;
  out.u = q.dot(tangent_u) / scale_u;
  out.v = q.dot(tangent_v) / scale_v;
  out.depth = cam.to_camera(p).z();
  out.gauss = std::exp(-0.5 * (out.u * out.u + out.v * out.v));
  return out;
}

}  // namespace dsplat
