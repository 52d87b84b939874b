#pragma once

#include "dsplat/camera.hpp"
#include "dsplat/common.hpp"
#include "dsplat/image.hpp"

#include <string>
#include <vector>

namespace dsplat {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> colors;  // optional; empty or per-vertex
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  Vec3 face_normal(int t) const;
  double area() const;
};

/// Truncated signed distance volume with per-voxel color accumulators.
struct TsdfVolume {
  Vec3 origin = Vec3::Zero();
  double voxel_size = 0.0;
  double trunc = 0.0;
  int nx = 0, ny = 0, nz = 0;
  std::vector<float> tsdf;    // in [-1, 1], 1 = free
  std::vector<float> weight;  // >= 0
  std::vector<float> cw, cr, cg, cb;

  TsdfVolume() = default;
  TsdfVolume(const Vec3& origin, double voxel_size, int nx, int ny, int nz, double trunc);

  std::size_t idx(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return origin + voxel_size * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }
  std::size_t count() const { return static_cast<std::size_t>(nx) * ny * nz; }
};

/// Convenience: a volume whose voxel grid covers `lo..hi` with `resolution`
/// voxels along the longest side; truncation = 4 voxels.
TsdfVolume make_volume(const Vec3& lo, const Vec3& hi, int resolution);

/// Fuse one depth/color view. `depth` is a median-depth map (kNoDepth or <= 0
/// pixels are skipped); `color` may be empty. Returns the number of voxel
/// updates (0 means the volume does not see the view).
std::size_t tsdf_integrate(TsdfVolume& vol, const Image& depth, const Image& color,
                           const Camera& cam);

/// Marching cubes over the zero level set. Cubes touching zero-weight voxels
/// are skipped; vertex colors are trilinearly sampled from the accumulators.
TriangleMesh extract_mesh(const TsdfVolume& vol);

struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
};

/// Area-uniform surface samples with face normals, deterministic in `seed`.
SurfaceSamples sample_mesh_surface(const TriangleMesh& mesh, int n, std::uint64_t seed);

/// Symmetric mean nearest-neighbor distance between surface samples.
double chamfer_distance(const TriangleMesh& a, const TriangleMesh& b, int n_samples = 10000,
                        std::uint64_t seed = 0);

/// Symmetric mean |cos| between sample normals and their nearest neighbors'.
double normal_consistency(const TriangleMesh& a, const TriangleMesh& b, int n_samples = 10000,
                          std::uint64_t seed = 0);

/// Exact nearest-neighbor queries over a fixed point set (uniform grid).
class PointGrid {
 public:
  explicit PointGrid(const std::vector<Vec3>& points);
  int nearest(const Vec3& q) const;

 private:
  const std::vector<Vec3>* pts_;
  Vec3 lo_;
  double cell_ = 1.0;
  int gx_ = 1, gy_ = 1, gz_ = 1;
  std::vector<std::vector<int>> cells_;
  std::size_t cell_of(const Vec3& p) const;
};

void save_mesh_ply(const std::string& path, const TriangleMesh& mesh, bool binary = true);
TriangleMesh load_mesh_ply(const std::string& path);

/// Point-cloud PLY loader (vertex positions + optional colors).
void load_points_ply(const std::string& path, std::vector<Vec3>* points, std::vector<Vec3>* colors);

}  // namespace dsplat
