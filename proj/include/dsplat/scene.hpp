#pragma once

#include "dsplat/camera.hpp"
#include "dsplat/image.hpp"
#include "dsplat/mesh.hpp"

#include <string>
#include <vector>

namespace dsplat {

struct View {
  std::string file;
  Camera camera;
  Image image;  // H x W x 3 in [0,1]
  Image mask;   // H x W, empty when absent
};

struct Dataset {
  std::vector<View> views;
  std::vector<int> train_ids, test_ids;
  std::vector<Vec3> init_points;
  std::vector<Vec3> init_colors;
  TriangleMesh gt_mesh;               // empty when absent
  std::vector<Image> gt_transmitted;  // per view; empty images when absent
  std::vector<Image> gt_depth;

  Vec3 bbox_lo = Vec3::Zero(), bbox_hi = Vec3::Zero();
  double scene_extent() const { return (bbox_hi - bbox_lo).maxCoeff(); }
};

/// Directory layout: images/, cameras.json, optional masks/, points.ply, gt/.
/// cameras.json: {"views":[{file,fx,fy,cx,cy,w,h,world_to_camera:[16 floats]}],
///                "split":{"train":[...],"test":[...]}}
Dataset load_dataset(const std::string& dir);

struct SyntheticSceneSpec {
  enum class Shape { Sphere, Box, Composite };
  Shape shape = Shape::Sphere;
  int texture_id = 0;  // 0 smooth palette, 1 checker, 2 solid
  Vec3 lobe_dir = Vec3(0.45, -0.35, 0.82);
  double specular_sharpness = 8.0;
  double specular_strength = 0.0;
  int n_views = 32;
  int width = 64, height = 64;
  int n_init_points = 2000;
  double radius = 1.0;
  double camera_distance = 3.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Analytic ray-traced scene: per view a full image (shaded texture plus a
/// view-dependent specular lobe), reflection-free transmitted GT, exact depth
/// and mask; plus a GT mesh and a noisy init point cloud. Written to disk and
/// returned.
Dataset generate_synthetic(const SyntheticSceneSpec& spec, const std::string& out_dir);

/// Named presets for the CLI: sphere_default, sphere_specular, box_default,
/// composite_default.
SyntheticSceneSpec synthetic_preset(const std::string& name);

/// 10*log10(1/MSE) for images in [0,1]; capped at 99 dB.
double psnr(const Image& img, const Image& ref);

}  // namespace dsplat
