#pragma once

#include "dsplat/common.hpp"

namespace dsplat {

/// Pinhole camera. world_to_camera maps world points into the camera frame
/// (x right, y down, z forward); pixel (ix, iy) samples at (ix+0.5, iy+0.5).
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat4 world_to_camera = Mat4::Identity();
  double near_z = 0.01, far_z = 1000.0;

  Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }

  Vec3 to_camera(const Vec3& pw) const { return rotation() * pw + translation(); }

  /// Camera center in world coordinates.
  Vec3 position() const { return -rotation().transpose() * translation(); }

  /// Camera-space point -> continuous pixel coordinates.
  Vec2 project(const Vec3& pc) const {
    return Vec2(fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy);
  }

  /// Camera-frame ray direction through pixel coords (px, py), scaled so z = 1.
  /// The ray parameter then equals camera-space depth.
  Vec3 pixel_dir_z1(double px, double py) const {
    return Vec3((px - cx) / fx, (py - cy) / fy, 1.0);
  }

  void validate() const;
};

/// Look-at pose: camera at `eye` looking toward `target` with `up` hint.
Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, 0, 1));

}  // namespace dsplat
