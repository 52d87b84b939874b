#pragma once

#include "dsplat/common.hpp"
#include "dsplat/sh.hpp"

#include <string>
#include <vector>

namespace dsplat {

/// Learning-rate groups shared by both primitive kinds.
enum class ParamGroup { Position, Scale, Rotation, Opacity, Sh };

struct ParamCorruption : std::runtime_error {
  std::size_t index;
  explicit ParamCorruption(std::size_t i)
      : std::runtime_error("non-finite parameter in primitive " + std::to_string(i)), index(i) {}
};

/// Activated (model-space) view of one 3D Gaussian.
struct ActivatedGaussian {
  Vec3 mean;
  Vec3 scale;
  Vec4 quat;  // normalized
  double opacity_tran, opacity_ref, beta;
  const double* sh_tran;  // channel-major, 3*basis
  const double* sh_ref;
};

struct ActivatedSurfel {
  Vec3 center;
  Vec4 quat;  // normalized; R columns = (tangent_u, tangent_v, normal)
  double scale_u, scale_v;
  double opacity;
  const double* sh;
};

/// Flat per-primitive parameter store in raw (unconstrained) space, with
/// parallel gradient and optimizer-moment buffers.
/// Gaussian layout: mean(3) log_scale(3) quat(4) logit_opacity_tran
///                  logit_opacity_ref logit_beta sh_tran(3B) sh_ref(3B)
class GaussianCloud {
 public:
  static constexpr int kMean = 0, kLogScale = 3, kRot = 6;
  static constexpr int kOpacityTran = 10, kOpacityRef = 11, kBeta = 12, kSh = 13;

  GaussianCloud() = default;
  GaussianCloud(int sh_degree, std::size_t count);

  int sh_degree = 3;
  std::vector<double> params, grads, adam_m, adam_v;
  std::vector<double> densify_grad_accum;
  std::vector<int> densify_grad_count;

  int basis() const { return sh_basis_count(sh_degree); }
  int stride() const { return kSh + 6 * basis(); }
  std::size_t size() const { return stride() == 0 ? 0 : params.size() / stride(); }

  double* prim(std::size_t i) { return params.data() + i * stride(); }
  const double* prim(std::size_t i) const { return params.data() + i * stride(); }
  double* grad(std::size_t i) { return grads.data() + i * stride(); }
  const double* grad(std::size_t i) const { return grads.data() + i * stride(); }

  int sh_tran_off(int ch, int i) const { return kSh + ch * basis() + i; }
  int sh_ref_off(int ch, int i) const { return kSh + (3 + ch) * basis() + i; }

  ActivatedGaussian activate(std::size_t i) const;
  ParamGroup group_of(int offset) const;

  void resize(std::size_t count);
  void zero_grads();
  void reset_densify_stats();
};

/// Surfel layout: center(3) quat(4) log_scale_u log_scale_v logit_opacity sh(3B)
class SurfelCloud {
 public:
  static constexpr int kCenter = 0, kRot = 3, kLogScaleU = 7, kLogScaleV = 8, kOpacity = 9, kSh = 10;

  SurfelCloud() = default;
  SurfelCloud(int sh_degree, std::size_t count);

  int sh_degree = 3;
  std::vector<double> params, grads, adam_m, adam_v;
  std::vector<double> densify_grad_accum;
  std::vector<int> densify_grad_count;

  int basis() const { return sh_basis_count(sh_degree); }
  int stride() const { return kSh + 3 * basis(); }
  std::size_t size() const { return stride() == 0 ? 0 : params.size() / stride(); }

  double* prim(std::size_t i) { return params.data() + i * stride(); }
  const double* prim(std::size_t i) const { return params.data() + i * stride(); }
  double* grad(std::size_t i) { return grads.data() + i * stride(); }
  const double* grad(std::size_t i) const { return grads.data() + i * stride(); }

  int sh_off(int ch, int i) const { return kSh + ch * basis() + i; }

  ActivatedSurfel activate(std::size_t i) const;
  ParamGroup group_of(int offset) const;

  void resize(std::size_t count);
  void zero_grads();
  void reset_densify_stats();
};

struct InitOptions {
  int sh_degree = 3;
  double opacity_tran = 0.1;
  double opacity_ref = 0.1;
  double beta = 0.01;
  std::uint64_t seed = 7;  // surfel orientations
};

/// One primitive per input point; scales from mean 3-NN distance (or
/// 0.01 * scene extent when there are no neighbors), DC SH from color.
GaussianCloud init_gaussians_from_points(const std::vector<Vec3>& points,
                                         const std::vector<Vec3>& colors,
                                         const InitOptions& opt = {});
SurfelCloud init_surfels_from_points(const std::vector<Vec3>& points,
                                     const std::vector<Vec3>& colors, const InitOptions& opt = {});

/// Mean distance to the 3 nearest neighbors per point (used by init).
std::vector<double> mean_knn_distance(const std::vector<Vec3>& points, int k = 3);

/// Checkpoint container: binary chunked file, column-major parameter blocks.
void save_gaussians(const std::string& path, const GaussianCloud& cloud);
void save_surfels(const std::string& path, const SurfelCloud& cloud);
GaussianCloud load_gaussians(const std::string& path);
SurfelCloud load_surfels(const std::string& path);

/// Point-cloud PLY export (positions + uchar colors) for quick inspection.
void export_point_ply(const std::string& path, const std::vector<Vec3>& points,
                      const std::vector<Vec3>& colors);
void export_means_ply(const std::string& path, const GaussianCloud& cloud);
void export_means_ply(const std::string& path, const SurfelCloud& cloud);

}  // namespace dsplat
