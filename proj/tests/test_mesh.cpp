#include "dsplat/mesh.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <map>

using namespace dsplat;

namespace {

// Analytic signed field of a sphere written straight into a volume.
TsdfVolume sphere_field(double r, int res) {
  TsdfVolume vol(Vec3::Constant(-1.5 * r), 3.0 * r / res, res, res, res, 4.0 * (3.0 * r / res));
  for (int k = 0; k < vol.nz; ++k)
    for (int j = 0; j < vol.ny; ++j)
      for (int i = 0; i < vol.nx; ++i) {
        const std::size_t id = vol.idx(i, j, k);
        vol.tsdf[id] = (float)std::clamp((vol.voxel_center(i, j, k).norm() - r) / vol.trunc, -1.0, 1.0);
        vol.weight[id] = 1.0f;
      }
  return vol;
}

Camera orbit_camera(double azim, double elev, double dist, int res) {
  Camera cam;
  cam.width = cam.height = res;
  cam.fx = cam.fy = 1.4 * res;
  cam.cx = cam.cy = 0.5 * res;
  cam.near_z = 0.05;
  cam.far_z = 100.0;
  const Vec3 eye = dist * Vec3(std::cos(elev) * std::cos(azim), std::cos(elev) * std::sin(azim),
                               std::sin(elev));
  cam.world_to_camera = look_at(eye, Vec3::Zero());
  return cam;
}

Image analytic_sphere_depth(const Camera& cam, double r) {
  Image depth(cam.height, cam.width, 1, kNoDepth);
  const Vec3 origin = cam.position();
  const Mat3 rot_t = cam.rotation().transpose();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir = (rot_t * cam.pixel_dir_z1(x + 0.5, y + 0.5)).normalized();
      const double b = origin.dot(dir);
      const double disc = b * b - (origin.squaredNorm() - r * r);
      if (disc < 0) continue;
      const double t = -b - std::sqrt(disc);
      if (t <= 0) continue;
      depth.at(y, x) = cam.to_camera(origin + t * dir).z();
    }
  return depth;
}

}  // namespace

TEST_CASE("marching-cubes tables are mutually consistent") {
  // Every cube configuration round-trips through a 1-cell volume without
  // out-of-range indices, and every mixed configuration emits triangles.
  for (int cube = 0; cube < 256; ++cube) {
    TsdfVolume vol(Vec3::Zero(), 1.0, 2, 2, 2, 4.0);
    for (int c = 0; c < 8; ++c) {
      static const int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                       {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
      const std::size_t id = vol.idx(corner[c][0], corner[c][1], corner[c][2]);
      vol.tsdf[id] = (cube >> c) & 1 ? -0.5f : 0.5f;
      vol.weight[id] = 1.0f;
    }
    const TriangleMesh mesh = extract_mesh(vol);
    for (const auto& t : mesh.triangles)
      for (int k = 0; k < 3; ++k) {
        CHECK(t[k] >= 0);
        CHECK(t[k] < (int)mesh.vertices.size());
      }
    // Complementary configurations produce the same number of triangles.
    if (cube > 0 && cube < 255) CHECK(!mesh.triangles.empty());
  }
}

TEST_CASE("tsdf_integrate: fronto-parallel plane puts the crossing at the plane depth") {
  const int res = 48;
  Camera cam;
  cam.width = cam.height = 64;
  cam.fx = cam.fy = 80.0;
  cam.cx = cam.cy = 32.0;
  cam.near_z = 0.05;
  cam.far_z = 100.0;
  const double plane_z = 2.0;
  const Image depth(64, 64, 1, plane_z);
  TsdfVolume vol(Vec3(-0.5, -0.5, 1.5), 1.0 / res, res, res, res, 4.0 / res);
  const std::size_t updates = tsdf_integrate(vol, depth, Image(), cam);
  CHECK(updates > 0);
  // Along the central column the sign change brackets z = 2.0 within a voxel.
  int i = vol.nx / 2, j = vol.ny / 2;
  for (int k = 0; k + 1 < vol.nz; ++k) {
    if (vol.weight[vol.idx(i, j, k)] == 0 || vol.weight[vol.idx(i, j, k + 1)] == 0) continue;
    if (vol.tsdf[vol.idx(i, j, k)] < 0 != vol.tsdf[vol.idx(i, j, k + 1)] < 0) {
      const double z0 = vol.voxel_center(i, j, k).z();
      CHECK(std::abs(z0 - plane_z) <= 2.0 * vol.voxel_size);
    }
  }
}

TEST_CASE("tsdf_integrate twice doubles weights and keeps values") {
  Camera cam = orbit_camera(0.3, 0.2, 3.0, 32);
  const Image depth = analytic_sphere_depth(cam, 1.0);
  TsdfVolume a = make_volume(Vec3::Constant(-1.2), Vec3::Constant(1.2), 48);
  tsdf_integrate(a, depth, Image(), cam);
  TsdfVolume b = a;
  tsdf_integrate(b, depth, Image(), cam);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.tsdf.size(); ++i) {
    worst = std::max(worst, (double)std::abs(a.tsdf[i] - b.tsdf[i]));
    CHECK(b.weight[i] == 2.0f * a.weight[i]);
  }
  CHECK(worst == 0.0);
}

TEST_CASE("tsdf values stay in [-1,1] after many integrations") {
  TsdfVolume vol = make_volume(Vec3::Constant(-1.2), Vec3::Constant(1.2), 24);
  for (int v = 0; v < 12; ++v) {
    const Camera cam = orbit_camera(0.5 * v, 0.3 * std::sin(v * 1.7), 2.6 + 0.2 * (v % 3), 24);
    tsdf_integrate(vol, analytic_sphere_depth(cam, 1.0), Image(), cam);
  }
  for (float t : vol.tsdf) {
    CHECK(t <= 1.0f);
    CHECK(t >= -1.0f);
  }
}

TEST_CASE("tsdf_integrate reports zero updates when the volume is out of view") {
  Camera cam = orbit_camera(0, 0, 3.0, 16);
  TsdfVolume vol(Vec3(100, 100, 100), 0.1, 4, 4, 4, 0.4);
  CHECK(tsdf_integrate(vol, Image(16, 16, 1, 2.0), Image(), cam) == 0);
}

TEST_CASE("extract_mesh on an analytic sphere field: radii, watertightness, colors") {
  const TsdfVolume vol = sphere_field(1.0, 64);
  const TriangleMesh mesh = extract_mesh(vol);
  REQUIRE(!mesh.empty());
  double worst = 0.0;
  for (const Vec3& v : mesh.vertices) worst = std::max(worst, std::abs(v.norm() - 1.0));
  CHECK(worst <= 0.5 * vol.voxel_size);

  // Watertight: every edge is shared by exactly two triangles.
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3];
      edge_count[{std::min(a, b), std::max(a, b)}]++;
    }
  for (const auto& [e, c] : edge_count) CHECK(c == 2);

  // Winding is coherent: face normals point outward for a sphere.
  int outward = 0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3 centroid = (mesh.vertices[mesh.triangles[t][0]] + mesh.vertices[mesh.triangles[t][1]] +
                           mesh.vertices[mesh.triangles[t][2]]) /
                          3.0;
    if (mesh.face_normal((int)t).dot(centroid) > 0) ++outward;
  }
  CHECK((outward == 0 || outward == (int)mesh.triangles.size()));
}

TEST_CASE("extract_mesh: all-positive field is empty, plane field is planar") {
  TsdfVolume vol(Vec3::Zero(), 0.1, 8, 8, 8, 0.4);
  std::fill(vol.weight.begin(), vol.weight.end(), 1.0f);
  CHECK(extract_mesh(vol).empty());

  // Axis-aligned plane z = origin + 0.35.
  for (int k = 0; k < vol.nz; ++k)
    for (int j = 0; j < vol.ny; ++j)
      for (int i = 0; i < vol.nx; ++i)
        vol.tsdf[vol.idx(i, j, k)] = (float)((vol.voxel_center(i, j, k).z() - 0.35) / vol.trunc);
  const TriangleMesh mesh = extract_mesh(vol);
  REQUIRE(!mesh.empty());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3 n = mesh.face_normal((int)t);
    CHECK(std::abs(std::abs(n.z()) - 1.0) <= 1.0 - std::cos(1.0 * M_PI / 180.0));
  }
  for (const Vec3& v : mesh.vertices) CHECK(std::abs(v.z() - 0.35) <= 1e-9);
}

TEST_CASE("extract_mesh is invariant under a global translation of the volume") {
  const TsdfVolume vol = sphere_field(0.8, 32);
  TsdfVolume shifted = vol;
  const Vec3 delta(3.25, -1.5, 0.75);
  shifted.origin += delta;
  const TriangleMesh a = extract_mesh(vol);
  const TriangleMesh b = extract_mesh(shifted);
  REQUIRE(a.vertices.size() == b.vertices.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.vertices.size(); ++i)
    worst = std::max(worst, (a.vertices[i] + delta - b.vertices[i]).norm());
  CHECK(worst <= 1e-9);
}

TEST_CASE("chamfer distance: identity, parallel planes, concentric spheres") {
  const TsdfVolume vol = sphere_field(1.0, 48);
  const TriangleMesh sphere = extract_mesh(vol);
  CHECK(chamfer_distance(sphere, sphere, 4000, 5) <= 1e-6);

  // Two parallel unit squares at distance d (large extent vs distance).
  const auto plane_mesh = [](double z) {
    TriangleMesh m;
    const double s = 4.0;
    m.vertices = {Vec3(-s, -s, z), Vec3(s, -s, z), Vec3(s, s, z), Vec3(-s, s, z)};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return m;
  };
  const double d = 0.05;
  const double cd_planes = chamfer_distance(plane_mesh(0.0), plane_mesh(d), 10000, 7);
  CHECK(cd_planes == doctest::Approx(d).epsilon(0.05));

  const TriangleMesh inner = extract_mesh(sphere_field(1.0, 64));
  const TriangleMesh outer = extract_mesh(sphere_field(1.1, 64));
  CHECK(chamfer_distance(inner, outer, 10000, 9) == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("chamfer and NC are symmetric given the same sample sets") {
  const TriangleMesh a = extract_mesh(sphere_field(0.9, 24));
  const TriangleMesh b = extract_mesh(sphere_field(1.05, 24));
  CHECK(chamfer_distance(a, b, 2000, 11) == doctest::Approx(chamfer_distance(a, b, 2000, 11)));
  CHECK(normal_consistency(a, b, 2000, 11) == doctest::Approx(normal_consistency(a, b, 2000, 11)));
}

TEST_CASE("normal consistency: identity, flipped plane, brute-force oracle") {
  const TriangleMesh sphere = extract_mesh(sphere_field(1.0, 48));
  CHECK(normal_consistency(sphere, sphere, 4000, 13) >= 0.999);

  TriangleMesh plane;
  plane.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  plane.triangles = {{0, 1, 2}, {0, 2, 3}};
  TriangleMesh flipped = plane;
  for (auto& t : flipped.triangles) std::swap(t[1], t[2]);
  CHECK(normal_consistency(plane, flipped, 2000, 15) == doctest::Approx(1.0).epsilon(1e-9));

  // Sphere vs box, validated against a brute-force all-pairs computation.
  const TriangleMesh box = [&] {
    TsdfVolume vol(Vec3::Constant(-1.3), 2.6 / 32, 32, 32, 32, 4 * 2.6 / 32);
    for (int k = 0; k < vol.nz; ++k)
      for (int j = 0; j < vol.ny; ++j)
        for (int i = 0; i < vol.nx; ++i) {
          const Vec3 p = vol.voxel_center(i, j, k);
          const double sdf = p.cwiseAbs().maxCoeff() - 0.8;
          vol.tsdf[vol.idx(i, j, k)] = (float)std::clamp(sdf / vol.trunc, -1.0, 1.0);
          vol.weight[vol.idx(i, j, k)] = 1.0f;
        }
    return extract_mesh(vol);
  }();
  const int n = 1500;
  const std::uint64_t seed = 17;
  const double nc_grid = normal_consistency(sphere, box, n, seed);
  const SurfaceSamples sa = sample_mesh_surface(sphere, n, seed);
  const SurfaceSamples sb = sample_mesh_surface(box, n, seed);
  const auto brute = [](const SurfaceSamples& from, const SurfaceSamples& to) {
    double s = 0.0;
    for (std::size_t i = 0; i < from.points.size(); ++i) {
      double best = 1e30;
      std::size_t bj = 0;
      for (std::size_t j = 0; j < to.points.size(); ++j) {
        const double d2 = (from.points[i] - to.points[j]).squaredNorm();
        if (d2 < best) {
          best = d2;
          bj = j;
        }
      }
      s += std::abs(from.normals[i].dot(to.normals[bj]));
    }
    return s / from.points.size();
  };
  const double nc_brute = 0.5 * (brute(sa, sb) + brute(sb, sa));
  CHECK(std::abs(nc_grid - nc_brute) <= 1e-6);
}

TEST_CASE("PointGrid nearest neighbors match brute force exactly") {
  Rng rng(301);
  std::vector<Vec3> pts(2000);
  for (auto& p : pts) p = Vec3(rng.uniform(-2, 2), rng.uniform(-1, 3), rng.uniform(0, 0.5));
  const PointGrid grid(pts);
  for (int q = 0; q < 500; ++q) {
    const Vec3 query(rng.uniform(-3, 3), rng.uniform(-2, 4), rng.uniform(-1, 1));
    int best = 0;
    double best_d = 1e30;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double d = (pts[j] - query).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = (int)j;
      }
    }
    CHECK(grid.nearest(query) == best);
  }
}

TEST_CASE("metrics refuse empty meshes") {
  const TriangleMesh sphere = extract_mesh(sphere_field(1.0, 16));
  const TriangleMesh empty;
  CHECK_THROWS_AS(chamfer_distance(sphere, empty), std::invalid_argument);
  CHECK_THROWS_AS(normal_consistency(empty, sphere), std::invalid_argument);
}

TEST_CASE("mesh PLY round trip preserves geometry (binary and ascii)") {
  const TriangleMesh mesh = extract_mesh(sphere_field(0.7, 20));
  const auto dir = std::filesystem::temp_directory_path();
  for (bool binary : {true, false}) {
    const std::string path = (dir / (binary ? "m_b.ply" : "m_a.ply")).string();
    save_mesh_ply(path, mesh, binary);
    const TriangleMesh loaded = load_mesh_ply(path);
    REQUIRE(loaded.vertices.size() == mesh.vertices.size());
    REQUIRE(loaded.triangles.size() == mesh.triangles.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
      worst = std::max(worst, (mesh.vertices[i] - loaded.vertices[i]).norm());
    CHECK(worst <= 1e-5);  // float32 storage
    CHECK(loaded.triangles == mesh.triangles);
  }
}

TEST_CASE("fusing 20 exact sphere depth maps reconstructs the sphere") {
  const int n_views = 20, res = 96;
  TsdfVolume vol = make_volume(Vec3::Constant(-1.25), Vec3::Constant(1.25), 96);
  for (int v = 0; v < n_views; ++v) {
    const double azim = 2.0 * M_PI * v / n_views;
    const double elev = 0.9 * std::sin(2.3 * v);
    const Camera cam = orbit_camera(azim, elev, 3.0, res);
    tsdf_integrate(vol, analytic_sphere_depth(cam, 1.0), Image(), cam);
  }
  const TriangleMesh mesh = extract_mesh(vol);
  REQUIRE(!mesh.empty());

  // Zero-crossing voxels sit within a voxel of the unit radius.
  for (int k = 0; k + 1 < vol.nz; ++k)
    for (int j = 0; j < vol.ny; ++j)
      for (int i = 0; i < vol.nx; ++i) {
        const std::size_t a = vol.idx(i, j, k), b = vol.idx(i, j, k + 1);
        if (vol.weight[a] == 0 || vol.weight[b] == 0) continue;
        if ((vol.tsdf[a] < 0) == (vol.tsdf[b] < 0)) continue;
        const double rad = 0.5 * (vol.voxel_center(i, j, k) + vol.voxel_center(i, j, k + 1)).norm();
        CHECK(std::abs(rad - 1.0) <= 1.5 * vol.voxel_size);
      }

  const TriangleMesh gt = extract_mesh(sphere_field(1.0, 96));
  CHECK(chamfer_distance(mesh, gt, 10000, 21) <= 2.0 * vol.voxel_size);
  CHECK(normal_consistency(mesh, gt, 10000, 21) >= 0.98);
}
