#include "dsplat/camera.hpp"

namespace dsplat {

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("Camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("Camera: image size must be positive");
  if (!(near_z > 0.0) || !(near_z < far_z))
    throw std::invalid_argument("Camera: need 0 < near < far");
  const Mat3 r = rotation();
  if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(r.determinant() - 1.0) > 1e-6)
    throw std::invalid_argument("Camera: rotation block is not orthonormal");
  const Vec4 bottom = world_to_camera.row(3);
  if ((bottom - Vec4(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("Camera: last row of world_to_camera must be [0 0 0 1]");
}

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 fwd = (target - eye).normalized();
  Vec3 right = fwd.cross(up);
  if (right.norm() < 1e-9) right = fwd.cross(Vec3(1, 0, 0));
  right.normalize();
  const Vec3 down = fwd.cross(right);  // y axis points down in image space
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = fwd.transpose();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = -r * eye;
  return m;
}

}  // namespace dsplat
