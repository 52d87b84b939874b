#include "dsplat/mesh.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace dsplat {

#include "mc_tables.inc"

Vec3 TriangleMesh::face_normal(int t) const {
  const auto& tri = triangles[t];
  const Vec3 e1 = vertices[tri[1]] - vertices[tri[0]];
  const Vec3 e2 = vertices[tri[2]] - vertices[tri[0]];
  const Vec3 n = e1.cross(e2);
  const double l = n.norm();
  return l > 0.0 ? Vec3(n / l) : Vec3(0, 0, 1);
}

double TriangleMesh::area() const {
  double a = 0.0;
  for (const auto& tri : triangles)
    a += 0.5 * (vertices[tri[1]] - vertices[tri[0]])
                   .cross(vertices[tri[2]] - vertices[tri[0]])
                   .norm();
  return a;
}

TsdfVolume::TsdfVolume(const Vec3& origin_, double voxel_size_, int nx_, int ny_, int nz_,
                       double trunc_)
    : origin(origin_), voxel_size(voxel_size_), trunc(trunc_), nx(nx_), ny(ny_), nz(nz_) {
  if (nx < 2 || ny < 2 || nz < 2) throw std::invalid_argument("TsdfVolume: dims must be >= 2");
  if (!(voxel_size > 0.0) || !(trunc > 0.0))
    throw std::invalid_argument("TsdfVolume: voxel size and truncation must be positive");
  tsdf.assign(count(), 1.0f);
  weight.assign(count(), 0.0f);
  cw.assign(count(), 0.0f);
  cr.assign(count(), 0.0f);
  cg.assign(count(), 0.0f);
  cb.assign(count(), 0.0f);
}

TsdfVolume make_volume(const Vec3& lo, const Vec3& hi, int resolution) {
  const Vec3 extent = hi - lo;
  const double voxel = extent.maxCoeff() / resolution;
  const int nx = std::max(2, (int)std::ceil(extent.x() / voxel));
  const int ny = std::max(2, (int)std::ceil(extent.y() / voxel));
  const int nz = std::max(2, (int)std::ceil(extent.z() / voxel));
  return TsdfVolume(lo, voxel, nx, ny, nz, 4.0 * voxel);
}

std::size_t tsdf_integrate(TsdfVolume& vol, const Image& depth, const Image& color,
                           const Camera& cam) {
  cam.validate();
  if (depth.h != cam.height || depth.w != cam.width)
    throw std::invalid_argument("tsdf_integrate: depth map does not match the camera");
  std::vector<std::size_t> slab_updates(vol.nz, 0);
#pragma omp parallel for schedule(dynamic)
  for (long long k = 0; k < vol.nz; ++k) {
    std::size_t updates = 0;
    for (int j = 0; j < vol.ny; ++j)
      for (int i = 0; i < vol.nx; ++i) {
        const Vec3 pc = cam.to_camera(vol.voxel_center(i, j, (int)k));
        if (pc.z() <= cam.near_z || pc.z() >= cam.far_z) continue;
        const Vec2 uv = cam.project(pc);
        const int px = (int)std::floor(uv.x());
        const int py = (int)std::floor(uv.y());
        if (px < 0 || px >= cam.width || py < 0 || py >= cam.height) continue;
        const double d = depth.at(py, px);
        if (d == kNoDepth || d <= 0.0) continue;
        const double sdf = d - pc.z();
        if (sdf <= -vol.trunc) continue;
        const double t = std::min(1.0, sdf / vol.trunc);
        const std::size_t id = vol.idx(i, j, (int)k);
        const float w_old = vol.weight[id];
        vol.tsdf[id] = (float)((vol.tsdf[id] * w_old + t) / (w_old + 1.0f));
        vol.weight[id] = w_old + 1.0f;
        if (!color.empty() && std::abs(sdf) <= vol.trunc) {
          const float cwo = vol.cw[id];
          vol.cr[id] = (float)((vol.cr[id] * cwo + color.at(py, px, 0)) / (cwo + 1.0f));
          vol.cg[id] = (float)((vol.cg[id] * cwo + color.at(py, px, 1)) / (cwo + 1.0f));
          vol.cb[id] = (float)((vol.cb[id] * cwo + color.at(py, px, 2)) / (cwo + 1.0f));
          vol.cw[id] = cwo + 1.0f;
        }
        ++updates;
      }
    slab_updates[k] = updates;
  }
  std::size_t total = 0;
  for (std::size_t u : slab_updates) total += u;
  return total;
}

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

// Canonical lattice-edge key: base corner linear index * 4 + axis.
std::uint64_t edge_key(const TsdfVolume& vol, int ci, int cj, int ck, int corner_a, int corner_b) {
  int a[3] = {ci + kCorner[corner_a][0], cj + kCorner[corner_a][1], ck + kCorner[corner_a][2]};
  int b[3] = {ci + kCorner[corner_b][0], cj + kCorner[corner_b][1], ck + kCorner[corner_b][2]};
  int axis = 0;
  for (int d = 0; d < 3; ++d)
    if (a[d] != b[d]) axis = d;
  if (std::tie(b[0], b[1], b[2]) < std::tie(a[0], a[1], a[2])) std::swap(a, b);
  const std::uint64_t lin =
      (static_cast<std::uint64_t>(a[2]) * (vol.ny + 1) + a[1]) * (vol.nx + 1) + a[0];
  return lin * 4 + axis;
}

Vec3 sample_volume_color(const TsdfVolume& vol, const Vec3& p) {
  const Vec3 g = (p - vol.origin) / vol.voxel_size - Vec3(0.5, 0.5, 0.5);
  const int i0 = (int)std::floor(g.x()), j0 = (int)std::floor(g.y()), k0 = (int)std::floor(g.z());
  const double fx = g.x() - i0, fy = g.y() - j0, fz = g.z() - k0;
  double wsum = 0.0;
  Vec3 c = Vec3::Zero();
  for (int dk = 0; dk < 2; ++dk)
    for (int dj = 0; dj < 2; ++dj)
      for (int di = 0; di < 2; ++di) {
        const int i = i0 + di, j = j0 + dj, k = k0 + dk;
        if (i < 0 || j < 0 || k < 0 || i >= vol.nx || j >= vol.ny || k >= vol.nz) continue;
        const std::size_t id = vol.idx(i, j, k);
        if (vol.cw[id] <= 0.0f) continue;
        const double w = (di ? fx : 1.0 - fx) * (dj ? fy : 1.0 - fy) * (dk ? fz : 1.0 - fz);
        c += w * Vec3(vol.cr[id], vol.cg[id], vol.cb[id]);
        wsum += w;
      }
  return wsum > 1e-12 ? Vec3(c / wsum) : Vec3(0.5, 0.5, 0.5);
}

struct SlabMesh {
  std::vector<std::uint64_t> keys;  // one per emitted vertex
  std::vector<Vec3> verts;
  std::vector<std::array<std::uint64_t, 3>> tris;  // by key
};

}  // namespace

TriangleMesh extract_mesh(const TsdfVolume& vol) {
  const int nz_cells = vol.nz - 1;
  std::vector<SlabMesh> slabs(nz_cells);

#pragma omp parallel for schedule(dynamic)
  for (long long ck = 0; ck < nz_cells; ++ck) {
    SlabMesh& slab = slabs[ck];
    for (int cj = 0; cj + 1 < vol.ny; ++cj)
      for (int ci = 0; ci + 1 < vol.nx; ++ci) {
        double val[8];
        bool ok = true;
        for (int c = 0; c < 8; ++c) {
          const std::size_t id =
              vol.idx(ci + kCorner[c][0], cj + kCorner[c][1], (int)ck + kCorner[c][2]);
          if (vol.weight[id] <= 0.0f) {
            ok = false;
            break;
          }
          val[c] = vol.tsdf[id];
        }
        if (!ok) continue;
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (val[c] < 0.0) cube |= 1 << c;
        const int edges = kEdgeTable[cube];
        if (edges == 0) continue;

        Vec3 everts[12];
        std::uint64_t ekeys[12];
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const int a = kEdgeCorners[e][0], b = kEdgeCorners[e][1];
          const double va = val[a], vb = val[b];
          const double t = std::clamp(va / (va - vb), 0.0, 1.0);
          const Vec3 pa = vol.voxel_center(ci + kCorner[a][0], cj + kCorner[a][1],
                                           (int)ck + kCorner[a][2]);
          const Vec3 pb = vol.voxel_center(ci + kCorner[b][0], cj + kCorner[b][1],
                                           (int)ck + kCorner[b][2]);
          everts[e] = pa + t * (pb - pa);
          ekeys[e] = edge_key(vol, ci, cj, (int)ck, a, b);
        }
        for (int t = 0; kTriTable[cube][t] != -1; t += 3) {
          const int e0 = kTriTable[cube][t], e1 = kTriTable[cube][t + 1],
                    e2 = kTriTable[cube][t + 2];
          if (ekeys[e0] == ekeys[e1] || ekeys[e1] == ekeys[e2] || ekeys[e0] == ekeys[e2]) continue;
          const Vec3 cross = (everts[e1] - everts[e0]).cross(everts[e2] - everts[e0]);
          if (cross.squaredNorm() < 1e-30) continue;
          for (int e : {e0, e1, e2}) {
            slab.keys.push_back(ekeys[e]);
            slab.verts.push_back(everts[e]);
          }
          slab.tris.push_back({ekeys[e0], ekeys[e1], ekeys[e2]});
        }
      }
  }

  // Serial weld in slab order keeps the output independent of thread count.
  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, int> index;
  for (const SlabMesh& slab : slabs) {
    for (std::size_t v = 0; v < slab.keys.size(); ++v) {
      if (index.emplace(slab.keys[v], (int)mesh.vertices.size()).second)
        mesh.vertices.push_back(slab.verts[v]);
    }
    for (const auto& t : slab.tris)
      mesh.triangles.push_back(
          {index.at(t[0]), index.at(t[1]), index.at(t[2])});
  }
  mesh.colors.resize(mesh.vertices.size());
#pragma omp parallel for schedule(static)
  for (long long v = 0; v < (long long)mesh.vertices.size(); ++v)
    mesh.colors[v] = sample_volume_color(vol, mesh.vertices[v]);
  return mesh;
}

SurfaceSamples sample_mesh_surface(const TriangleMesh& mesh, int n, std::uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("sample_mesh_surface: empty mesh");
  std::vector<double> cum(mesh.triangles.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    acc += 0.5 * (mesh.vertices[tri[1]] - mesh.vertices[tri[0]])
                     .cross(mesh.vertices[tri[2]] - mesh.vertices[tri[0]])
                     .norm();
    cum[t] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("sample_mesh_surface: zero-area mesh");

  SurfaceSamples out;
  out.points.resize(n);
  out.normals.resize(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double r = rng.uniform() * acc;
    const std::size_t t =
        std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    const auto& tri = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    out.points[i] = mesh.vertices[tri[0]] +
                    u * (mesh.vertices[tri[1]] - mesh.vertices[tri[0]]) +
                    v * (mesh.vertices[tri[2]] - mesh.vertices[tri[0]]);
    out.normals[i] = mesh.face_normal((int)std::min(t, mesh.triangles.size() - 1));
  }
  return out;
}

std::size_t PointGrid::cell_of(const Vec3& p) const {
  const int i = std::clamp((int)std::floor((p.x() - lo_.x()) / cell_), 0, gx_ - 1);
  const int j = std::clamp((int)std::floor((p.y() - lo_.y()) / cell_), 0, gy_ - 1);
  const int k = std::clamp((int)std::floor((p.z() - lo_.z()) / cell_), 0, gz_ - 1);
  return (static_cast<std::size_t>(k) * gy_ + j) * gx_ + i;
}

PointGrid::PointGrid(const std::vector<Vec3>& points) : pts_(&points) {
  if (points.empty()) throw std::invalid_argument("PointGrid: empty point set");
  Vec3 hi = points[0];
  lo_ = points[0];
  for (const Vec3& p : points) {
    lo_ = lo_.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max((hi - lo_).maxCoeff(), 1e-9);
  const int target = std::max(1, (int)std::cbrt((double)points.size() / 2.0));
  cell_ = extent / std::min(target, 64);
  gx_ = std::max(1, (int)std::ceil((hi.x() - lo_.x()) / cell_));
  gy_ = std::max(1, (int)std::ceil((hi.y() - lo_.y()) / cell_));
  gz_ = std::max(1, (int)std::ceil((hi.z() - lo_.z()) / cell_));
  cells_.assign(static_cast<std::size_t>(gx_) * gy_ * gz_, {});
  for (std::size_t i = 0; i < points.size(); ++i)
    cells_[cell_of(points[i])].push_back((int)i);
}

int PointGrid::nearest(const Vec3& q) const {
  const auto& pts = *pts_;
  const int qi = std::clamp((int)std::floor((q.x() - lo_.x()) / cell_), 0, gx_ - 1);
  const int qj = std::clamp((int)std::floor((q.y() - lo_.y()) / cell_), 0, gy_ - 1);
  const int qk = std::clamp((int)std::floor((q.z() - lo_.z()) / cell_), 0, gz_ - 1);
  int best = -1;
  double best_d2 = std::numeric_limits<double>::max();
  const int max_ring = std::max({gx_, gy_, gz_});
  for (int ring = 0; ring <= max_ring; ++ring) {
    // Once a candidate is known, stop when the ring cannot contain a closer point.
    if (best >= 0) {
      const double ring_min = (ring - 1) * cell_;
      if (ring_min > 0.0 && ring_min * ring_min > best_d2) break;
    }
    for (int k = std::max(0, qk - ring); k <= std::min(gz_ - 1, qk + ring); ++k)
      for (int j = std::max(0, qj - ring); j <= std::min(gy_ - 1, qj + ring); ++j)
        for (int i = std::max(0, qi - ring); i <= std::min(gx_ - 1, qi + ring); ++i) {
          const bool on_shell = std::max({std::abs(i - qi), std::abs(j - qj), std::abs(k - qk)}) ==
                                ring;
          if (!on_shell) continue;
          for (int idx : cells_[(static_cast<std::size_t>(k) * gy_ + j) * gx_ + i]) {
            const double d2 = (pts[idx] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
              best_d2 = d2;
              best = idx;
            }
          }
        }
  }
  return best;
}

namespace {

void check_nonempty(const TriangleMesh& a, const TriangleMesh& b, const char* what) {
  if (a.empty() || b.empty())
    throw std::invalid_argument(std::string(what) + ": metric undefined for an empty mesh");
}

double mean_nn_distance(const SurfaceSamples& from, const SurfaceSamples& to) {
  const PointGrid grid(to.points);
  std::vector<double> partial(from.points.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < (long long)from.points.size(); ++i)
    partial[i] = (from.points[i] - to.points[grid.nearest(from.points[i])]).norm();
  double s = 0.0;
  for (double v : partial) s += v;
  return s / (double)from.points.size();
}

double mean_nn_abs_cos(const SurfaceSamples& from, const SurfaceSamples& to) {
  const PointGrid grid(to.points);
  std::vector<double> partial(from.points.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < (long long)from.points.size(); ++i)
    partial[i] = std::abs(from.normals[i].dot(to.normals[grid.nearest(from.points[i])]));
  double s = 0.0;
  for (double v : partial) s += v;
  return s / (double)from.points.size();
}

}  // namespace

double chamfer_distance(const TriangleMesh& a, const TriangleMesh& b, int n_samples,
                        std::uint64_t seed) {
  check_nonempty(a, b, "chamfer_distance");
  const SurfaceSamples sa = sample_mesh_surface(a, n_samples, seed);
  const SurfaceSamples sb = sample_mesh_surface(b, n_samples, seed);
  return 0.5 * (mean_nn_distance(sa, sb) + mean_nn_distance(sb, sa));
}

double normal_consistency(const TriangleMesh& a, const TriangleMesh& b, int n_samples,
                          std::uint64_t seed) {
  check_nonempty(a, b, "normal_consistency");
  const SurfaceSamples sa = sample_mesh_surface(a, n_samples, seed);
  const SurfaceSamples sb = sample_mesh_surface(b, n_samples, seed);
  return 0.5 * (mean_nn_abs_cos(sa, sb) + mean_nn_abs_cos(sb, sa));
}

// ---------------------------------------------------------------------------
// PLY IO

void save_mesh_ply(const std::string& path, const TriangleMesh& mesh, bool binary) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("save_mesh_ply: cannot open " + path);
  const bool has_color = mesh.colors.size() == mesh.vertices.size();
  std::fprintf(f, "ply\nformat %s 1.0\nelement vertex %zu\n",
               binary ? "binary_little_endian" : "ascii", mesh.vertices.size());
  std::fprintf(f, "property float x\nproperty float y\nproperty float z\n");
  if (has_color)
    std::fprintf(f, "property uchar red\nproperty uchar green\nproperty uchar blue\n");
  std::fprintf(f, "element face %zu\nproperty list uchar int vertex_indices\nend_header\n",
               mesh.triangles.size());
  const auto to_byte = [](double v) {
    return (unsigned char)std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  };
  if (binary) {
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const float xyz[3] = {(float)mesh.vertices[i].x(), (float)mesh.vertices[i].y(),
                            (float)mesh.vertices[i].z()};
      std::fwrite(xyz, 4, 3, f);
      if (has_color) {
        const unsigned char rgb[3] = {to_byte(mesh.colors[i].x()), to_byte(mesh.colors[i].y()),
                                      to_byte(mesh.colors[i].z())};
        std::fwrite(rgb, 1, 3, f);
      }
    }
    for (const auto& t : mesh.triangles) {
      const unsigned char n = 3;
      std::fwrite(&n, 1, 1, f);
      const int idx[3] = {t[0], t[1], t[2]};
      std::fwrite(idx, 4, 3, f);
    }
  } else {
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      std::fprintf(f, "%.9g %.9g %.9g", mesh.vertices[i].x(), mesh.vertices[i].y(),
                   mesh.vertices[i].z());
      if (has_color)
        std::fprintf(f, " %d %d %d", to_byte(mesh.colors[i].x()), to_byte(mesh.colors[i].y()),
                     to_byte(mesh.colors[i].z()));
      std::fprintf(f, "\n");
    }
    for (const auto& t : mesh.triangles) std::fprintf(f, "3 %d %d %d\n", t[0], t[1], t[2]);
  }
  std::fclose(f);
}

namespace {

struct PlyProperty {
  std::string type, name;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

std::size_t type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw std::runtime_error("ply: unsupported type " + t);
}

double read_binary_value(std::istream& in, const std::string& t) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), (std::streamsize)type_size(t));
  if (t == "char" || t == "int8") return (double)(signed char)buf[0];
  if (t == "uchar" || t == "uint8") return (double)buf[0];
  if (t == "short" || t == "int16") {
    std::int16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (t == "ushort" || t == "uint16") {
    std::uint16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (t == "int" || t == "int32") {
    std::int32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  if (t == "uint" || t == "uint32") {
    std::uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  if (t == "float" || t == "float32") {
    float v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  double v;
  std::memcpy(&v, buf, 8);
  return v;
}

struct PlyFile {
  bool binary = false;
  std::vector<PlyElement> elements;
};

PlyFile read_ply_header(std::istream& in, const std::string& path) {
  PlyFile ply;
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw std::runtime_error("ply: bad magic in " + path);
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "binary_little_endian")
        ply.binary = true;
      else if (fmt != "ascii")
        throw std::runtime_error("ply: unsupported format in " + path);
    } else if (tok == "element") {
      PlyElement el;
      ss >> el.name >> el.count;
      ply.elements.push_back(el);
    } else if (tok == "property") {
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        std::string count_t;
        ss >> count_t >> p.type >> p.name;
        p.is_list = true;
        p.type = count_t + ":" + p.type;  // count type : index type
      } else {
        p.type = t;
        ss >> p.name;
      }
      if (!ply.elements.empty()) ply.elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }
  return ply;
}

void read_ply(const std::string& path, std::vector<Vec3>* points, std::vector<Vec3>* colors,
              std::vector<std::array<int, 3>>* faces) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ply: cannot open " + path);
  const PlyFile ply = read_ply_header(in, path);

  for (const PlyElement& el : ply.elements) {
    if (el.name == "vertex") {
      int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
      for (std::size_t p = 0; p < el.props.size(); ++p) {
        const std::string& n = el.props[p].name;
        if (n == "x") ix = (int)p;
        if (n == "y") iy = (int)p;
        if (n == "z") iz = (int)p;
        if (n == "red") ir = (int)p;
        if (n == "green") ig = (int)p;
        if (n == "blue") ib = (int)p;
      }
      if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error("ply: missing xyz in " + path);
      std::vector<double> vals(el.props.size());
      for (std::size_t v = 0; v < el.count; ++v) {
        if (ply.binary) {
          for (std::size_t p = 0; p < el.props.size(); ++p)
            vals[p] = read_binary_value(in, el.props[p].type);
        } else {
          for (std::size_t p = 0; p < el.props.size(); ++p) in >> vals[p];
        }
        points->push_back(Vec3(vals[ix], vals[iy], vals[iz]));
        if (colors && ir >= 0)
          colors->push_back(Vec3(vals[ir] / 255.0, vals[ig] / 255.0, vals[ib] / 255.0));
      }
    } else if (el.name == "face" && faces) {
      for (std::size_t v = 0; v < el.count; ++v) {
        long long n;
        std::vector<long long> idx;
        if (ply.binary) {
          const std::string& lt = el.props.at(0).type;  // "countType:indexType"
          const auto colon = lt.find(':');
          n = (long long)read_binary_value(in, lt.substr(0, colon));
          for (long long i = 0; i < n; ++i)
            idx.push_back((long long)read_binary_value(in, lt.substr(colon + 1)));
        } else {
          in >> n;
          idx.resize(n);
          for (auto& i : idx) in >> i;
        }
        for (long long i = 2; i < n; ++i)
          faces->push_back({(int)idx[0], (int)idx[i - 1], (int)idx[i]});
      }
    } else {
      if (ply.binary) throw std::runtime_error("ply: unsupported extra element in " + path);
      std::string skip;
      for (std::size_t v = 0; v < el.count; ++v) std::getline(in, skip);
    }
    if (!in) throw std::runtime_error("ply: truncated file " + path);
  }
}

}  // namespace

TriangleMesh load_mesh_ply(const std::string& path) {
  TriangleMesh mesh;
  read_ply(path, &mesh.vertices, &mesh.colors, &mesh.triangles);
  if (mesh.colors.size() != mesh.vertices.size()) mesh.colors.clear();
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= (int)mesh.vertices.size())
        throw std::runtime_error("ply: face index out of range in " + path);
  return mesh;
}

void load_points_ply(const std::string& path, std::vector<Vec3>* points,
                     std::vector<Vec3>* colors) {
  read_ply(path, points, colors, nullptr);
  if (colors && colors->size() != points->size()) colors->assign(points->size(), Vec3(0.5, 0.5, 0.5));
}

}  // namespace dsplat
