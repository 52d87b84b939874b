#include "dsplat/primitives.hpp"

#include "dsplat/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>

namespace dsplat {

namespace {

void check_finite(const double* p, int stride, std::size_t index) {
  for (int k = 0; k < stride; ++k)
    if (!std::isfinite(p[k])) throw ParamCorruption(index);
}

double scene_extent(const std::vector<Vec3>& points) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).maxCoeff();
}

}  // namespace

GaussianCloud::GaussianCloud(int sh_degree_, std::size_t count) : sh_degree(sh_degree_) {
  if (sh_degree < 0 || sh_degree > kMaxShDegree)
    throw std::invalid_argument("GaussianCloud: unsupported SH degree");
  resize(count);
}

void GaussianCloud::resize(std::size_t count) {
  params.resize(count * stride(), 0.0);
  grads.resize(count * stride(), 0.0);
  adam_m.resize(count * stride(), 0.0);
  adam_v.resize(count * stride(), 0.0);
  densify_grad_accum.resize(count, 0.0);
  densify_grad_count.resize(count, 0);
}

void GaussianCloud::zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }

void GaussianCloud::reset_densify_stats() {
  std::fill(densify_grad_accum.begin(), densify_grad_accum.end(), 0.0);
  std::fill(densify_grad_count.begin(), densify_grad_count.end(), 0);
}

ActivatedGaussian GaussianCloud::activate(std::size_t i) const {
  const double* p = prim(i);
  check_finite(p, stride(), i);
  ActivatedGaussian a;
  a.mean = Vec3(p[kMean], p[kMean + 1], p[kMean + 2]);
  a.scale = Vec3(std::exp(p[kLogScale]), std::exp(p[kLogScale + 1]), std::exp(p[kLogScale + 2]));
  a.quat = normalize_quat(Vec4(p[kRot], p[kRot + 1], p[kRot + 2], p[kRot + 3]));
  a.opacity_tran = sigmoid(p[kOpacityTran]);
  a.opacity_ref = sigmoid(p[kOpacityRef]);
  a.beta = sigmoid(p[kBeta]);
  a.sh_tran = p + kSh;
  a.sh_ref = p + kSh + 3 * basis();
  return a;
}

ParamGroup GaussianCloud::group_of(int offset) const {
  if (offset < kLogScale) return ParamGroup::Position;
  if (offset < kRot) return ParamGroup::Scale;
  if (offset < kOpacityTran) return ParamGroup::Rotation;
  if (offset < kSh) return ParamGroup::Opacity;
  return ParamGroup::Sh;
}

SurfelCloud::SurfelCloud(int sh_degree_, std::size_t count) : sh_degree(sh_degree_) {
  if (sh_degree < 0 || sh_degree > kMaxShDegree)
    throw std::invalid_argument("SurfelCloud: unsupported SH degree");
  resize(count);
}

void SurfelCloud::resize(std::size_t count) {
  params.resize(count * stride(), 0.0);
  grads.resize(count * stride(), 0.0);
  adam_m.resize(count * stride(), 0.0);
  adam_v.resize(count * stride(), 0.0);
  densify_grad_accum.resize(count, 0.0);
  densify_grad_count.resize(count, 0);
}

void SurfelCloud::zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }

void SurfelCloud::reset_densify_stats() {
  std::fill(densify_grad_accum.begin(), densify_grad_accum.end(), 0.0);
  std::fill(densify_grad_count.begin(), densify_grad_count.end(), 0);
}

ActivatedSurfel SurfelCloud::activate(std::size_t i) const {
  const double* p = prim(i);
  check_finite(p, stride(), i);
  ActivatedSurfel a;
  a.center = Vec3(p[kCenter], p[kCenter + 1], p[kCenter + 2]);
  a.quat = normalize_quat(Vec4(p[kRot], p[kRot + 1], p[kRot + 2], p[kRot + 3]));
  a.scale_u = std::exp(p[kLogScaleU]);
  a.scale_v = std::exp(p[kLogScaleV]);
  a.opacity = sigmoid(p[kOpacity]);
  a.sh = p + kSh;
  return a;
}

ParamGroup SurfelCloud::group_of(int offset) const {
  if (offset < kRot) return ParamGroup::Position;
  if (offset < kLogScaleU) return ParamGroup::Rotation;
  if (offset < kOpacity) return ParamGroup::Scale;
  if (offset < kSh) return ParamGroup::Opacity;
  return ParamGroup::Sh;
}

std::vector<double> mean_knn_distance(const std::vector<Vec3>& points, int k) {
  const std::size_t n = points.size();
  std::vector<double> out(n, 0.0);
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double best[3] = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
                      std::numeric_limits<double>::max()};
    const int kk = std::min<int>(k, static_cast<int>(n) - 1);
    if (kk <= 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d = (points[j] - points[i]).norm();
      for (int b = 0; b < kk; ++b) {
        if (d < best[b]) std::swap(d, best[b]);
      }
    }
    double s = 0.0;
    for (int b = 0; b < kk; ++b) s += best[b];
    out[i] = s / kk;
  }
  return out;
}

namespace {

std::vector<double> init_scales(const std::vector<Vec3>& points) {
  if (points.empty()) throw std::invalid_argument("init_from_points: empty point set");
  const std::size_t n = points.size();
  std::vector<double> s;
  if (n == 1) {
    const double extent = scene_extent(points);
    s.assign(1, 0.01 * (extent > 0.0 ? extent : 1.0));
  } else {
    s = mean_knn_distance(points, 3);
    const double extent = scene_extent(points);
    const double fallback = 0.01 * (extent > 0.0 ? extent : 1.0);
    for (double& v : s)
      if (!(v > 0.0)) v = fallback;
  }
  return s;
}

double dc_from_color(double c) { return (c - 0.5) / kShC0; }

}  // namespace

GaussianCloud init_gaussians_from_points(const std::vector<Vec3>& points,
                                         const std::vector<Vec3>& colors, const InitOptions& opt) {
  if (points.size() != colors.size())
    throw std::invalid_argument("init_from_points: points/colors size mismatch");
  const std::vector<double> scales = init_scales(points);
  GaussianCloud cloud(opt.sh_degree, points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    double* p = cloud.prim(i);
    for (int k = 0; k < 3; ++k) p[GaussianCloud::kMean + k] = points[i][k];
    for (int k = 0; k < 3; ++k) p[GaussianCloud::kLogScale + k] = std::log(scales[i]);
    p[GaussianCloud::kRot] = 1.0;  // identity quaternion
    p[GaussianCloud::kOpacityTran] = logit(opt.opacity_tran);
    p[GaussianCloud::kOpacityRef] = logit(opt.opacity_ref);
    p[GaussianCloud::kBeta] = logit(opt.beta);
    for (int ch = 0; ch < 3; ++ch) p[cloud.sh_tran_off(ch, 0)] = dc_from_color(colors[i][ch]);
  }
  return cloud;
}

SurfelCloud init_surfels_from_points(const std::vector<Vec3>& points,
                                     const std::vector<Vec3>& colors, const InitOptions& opt) {
  if (points.size() != colors.size())
    throw std::invalid_argument("init_from_points: points/colors size mismatch");
  const std::vector<double> scales = init_scales(points);
  SurfelCloud cloud(opt.sh_degree, points.size());
  Rng rng(opt.seed);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double* p = cloud.prim(i);
    for (int k = 0; k < 3; ++k) p[SurfelCloud::kCenter + k] = points[i][k];
    const Vec4 q = rng.unit_quaternion();
    for (int k = 0; k < 4; ++k) p[SurfelCloud::kRot + k] = q[k];
    p[SurfelCloud::kLogScaleU] = std::log(scales[i]);
    p[SurfelCloud::kLogScaleV] = std::log(scales[i]);
    p[SurfelCloud::kOpacity] = logit(opt.opacity_tran);
    for (int ch = 0; ch < 3; ++ch) p[cloud.sh_off(ch, 0)] = dc_from_color(colors[i][ch]);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kCkptMagic[4] = {'D', 'S', 'C', 'P'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint32_t kKindGaussian = 0;
constexpr std::uint32_t kKindSurfel = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_column_major(std::FILE* f, const std::vector<double>& params, std::size_t count,
                        int stride) {
  std::vector<double> col(count);
  for (int k = 0; k < stride; ++k) {
    for (std::size_t i = 0; i < count; ++i) col[i] = params[i * stride + k];
    if (std::fwrite(col.data(), sizeof(double), count, f) != count)
      throw std::runtime_error("checkpoint: short write");
  }
}

void read_column_major(std::FILE* f, std::vector<double>& params, std::size_t count, int stride) {
  std::vector<double> col(count);
  for (int k = 0; k < stride; ++k) {
    if (std::fread(col.data(), sizeof(double), count, f) != count)
      throw std::runtime_error("checkpoint: truncated parameter block");
    for (std::size_t i = 0; i < count; ++i) params[i * stride + k] = col[i];
  }
}

void write_header(std::FILE* f, std::uint32_t kind, std::uint32_t sh_degree, std::uint64_t count) {
  const std::uint32_t version = kCkptVersion;
  if (std::fwrite(kCkptMagic, 1, 4, f) != 4 || std::fwrite(&version, 4, 1, f) != 1 ||
      std::fwrite(&kind, 4, 1, f) != 1 || std::fwrite(&sh_degree, 4, 1, f) != 1 ||
      std::fwrite(&count, 8, 1, f) != 1)
    throw std::runtime_error("checkpoint: short header write");
}

void read_header(std::FILE* f, const std::string& path, std::uint32_t expected_kind,
                 std::uint32_t& sh_degree, std::uint64_t& count) {
  char magic[4];
  std::uint32_t version = 0, kind = 0;
  if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  if (std::fread(&version, 4, 1, f) != 1 || version != kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  if (std::fread(&kind, 4, 1, f) != 1 || kind != expected_kind)
    throw std::runtime_error("checkpoint: wrong primitive kind in " + path);
  if (std::fread(&sh_degree, 4, 1, f) != 1 || std::fread(&count, 8, 1, f) != 1)
    throw std::runtime_error("checkpoint: truncated header in " + path);
}

}  // namespace

void save_gaussians(const std::string& path, const GaussianCloud& cloud) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  write_header(f.get(), kKindGaussian, cloud.sh_degree, cloud.size());
  write_column_major(f.get(), cloud.params, cloud.size(), cloud.stride());
}

void save_surfels(const std::string& path, const SurfelCloud& cloud) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  write_header(f.get(), kKindSurfel, cloud.sh_degree, cloud.size());
  write_column_major(f.get(), cloud.params, cloud.size(), cloud.stride());
}

GaussianCloud load_gaussians(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::uint32_t sh_degree = 0;
  std::uint64_t count = 0;
  read_header(f.get(), path, kKindGaussian, sh_degree, count);
  GaussianCloud cloud(static_cast<int>(sh_degree), count);
  read_column_major(f.get(), cloud.params, count, cloud.stride());
  return cloud;
}

SurfelCloud load_surfels(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::uint32_t sh_degree = 0;
  std::uint64_t count = 0;
  read_header(f.get(), path, kKindSurfel, sh_degree, count);
  SurfelCloud cloud(static_cast<int>(sh_degree), count);
  read_column_major(f.get(), cloud.params, count, cloud.stride());
  return cloud;
}

void export_point_ply(const std::string& path, const std::vector<Vec3>& points,
                      const std::vector<Vec3>& colors) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("ply: cannot open " + path);
  std::fprintf(f.get(),
               "ply\nformat ascii 1.0\nelement vertex %zu\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
               points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 c = i < colors.size() ? colors[i] : Vec3(0.5, 0.5, 0.5);
    std::fprintf(f.get(), "%.9g %.9g %.9g %d %d %d\n", points[i].x(), points[i].y(), points[i].z(),
                 (int)std::lround(std::clamp(c.x(), 0.0, 1.0) * 255),
                 (int)std::lround(std::clamp(c.y(), 0.0, 1.0) * 255),
                 (int)std::lround(std::clamp(c.z(), 0.0, 1.0) * 255));
  }
}

namespace {

template <typename Cloud>
void export_means_impl(const std::string& path, const Cloud& cloud) {
  std::vector<Vec3> pts(cloud.size()), cols(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double* p = cloud.prim(i);
    pts[i] = Vec3(p[0], p[1], p[2]);
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch) c[ch] = kShC0 * p[Cloud::kSh + ch * cloud.basis()] + 0.5;
    cols[i] = c;
  }
  export_point_ply(path, pts, cols);
}

}  // namespace

void export_means_ply(const std::string& path, const GaussianCloud& cloud) {
  export_means_impl(path, cloud);
}
void export_means_ply(const std::string& path, const SurfelCloud& cloud) {
  export_means_impl(path, cloud);
}

}  // namespace dsplat
