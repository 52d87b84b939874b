#include "dsplat/scene.hpp"

#include "dsplat/primitives.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace dsplat {

namespace fs = std::filesystem;
using nlohmann::json;

double psnr(const Image& img, const Image& ref) {
  if (!img.same_shape(ref)) throw std::invalid_argument("psnr: shape mismatch");
  const double m = mse(img, ref);
  if (m <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / m));
}

void SyntheticSceneSpec::validate() const {
  if (n_views < 1 || width < 8 || height < 8)
    throw std::invalid_argument("SyntheticSceneSpec: need n_views >= 1 and size >= 8");
  if (!(radius > 0.0) || !(camera_distance > radius))
    throw std::invalid_argument("SyntheticSceneSpec: camera must sit outside the object");
  if (specular_strength < 0.0)
    throw std::invalid_argument("SyntheticSceneSpec: specular strength must be >= 0");
  if (n_init_points < 1) throw std::invalid_argument("SyntheticSceneSpec: need init points");
}

// ---------------------------------------------------------------------------
// Loading

namespace {

Mat4 mat_from_row_major(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.size() != 16)
    throw std::runtime_error(where + ": world_to_camera must have 16 floats");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = arr[4 * r + c].get<double>();
  return m;
}

void update_bbox(Dataset* ds) {
  if (ds->init_points.empty()) {
    // Fall back to the camera positions.
    ds->bbox_lo = Vec3::Constant(-1.0);
    ds->bbox_hi = Vec3::Constant(1.0);
    return;
  }
  ds->bbox_lo = Vec3::Constant(std::numeric_limits<double>::max());
  ds->bbox_hi = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (const Vec3& p : ds->init_points) {
    ds->bbox_lo = ds->bbox_lo.cwiseMin(p);
    ds->bbox_hi = ds->bbox_hi.cwiseMax(p);
  }
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path cam_path = root / "cameras.json";
  std::ifstream in(cam_path);
  if (!in) throw std::runtime_error("load_dataset: missing " + cam_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("load_dataset: malformed cameras.json: " + std::string(e.what()));
  }
  if (!doc.contains("views") || !doc["views"].is_array())
    throw std::runtime_error("load_dataset: cameras.json lacks a views array");

  Dataset ds;
  int view_idx = 0;
  for (const json& v : doc["views"]) {
    const std::string where = "view " + std::to_string(view_idx);
    for (const char* key : {"file", "fx", "fy", "cx", "cy", "w", "h", "world_to_camera"})
      if (!v.contains(key))
        throw std::runtime_error("load_dataset: " + where + " lacks field '" + key + "'");
    View view;
    view.file = v["file"].get<std::string>();
    view.camera.fx = v["fx"].get<double>();
    view.camera.fy = v["fy"].get<double>();
    view.camera.cx = v["cx"].get<double>();
    view.camera.cy = v["cy"].get<double>();
    view.camera.width = v["w"].get<int>();
    view.camera.height = v["h"].get<int>();
    view.camera.world_to_camera = mat_from_row_major(v["world_to_camera"], where);
    if (v.contains("near")) view.camera.near_z = v["near"].get<double>();
    if (v.contains("far")) view.camera.far_z = v["far"].get<double>();
    try {
      view.camera.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: " + where + ": " + e.what());
    }

    const fs::path img_path = root / view.file;
    view.image = read_png(img_path.string());
    if (view.image.w != view.camera.width || view.image.h != view.camera.height)
      throw std::runtime_error("load_dataset: " + where + ": image resolution mismatch for " +
                               view.file);
    if (v.contains("mask")) {
      view.mask = read_png((root / v["mask"].get<std::string>()).string());
      if (view.mask.w != view.image.w || view.mask.h != view.image.h)
        throw std::runtime_error("load_dataset: " + where + ": mask resolution mismatch");
    }
    if (v.contains("transmitted"))
      ds.gt_transmitted.push_back(read_fmap((root / v["transmitted"].get<std::string>()).string()));
    else
      ds.gt_transmitted.push_back(Image());
    if (v.contains("depth"))
      ds.gt_depth.push_back(read_fmap((root / v["depth"].get<std::string>()).string()));
    else
      ds.gt_depth.push_back(Image());
    ds.views.push_back(std::move(view));
    ++view_idx;
  }
  if (ds.views.empty()) throw std::runtime_error("load_dataset: no views in " + dir);
  for (std::size_t i = 1; i < ds.views.size(); ++i)
    if (ds.views[i].image.w != ds.views[0].image.w || ds.views[i].image.h != ds.views[0].image.h)
      throw std::runtime_error("load_dataset: all views must share one resolution");

  if (doc.contains("split")) {
    for (const auto& i : doc["split"]["train"]) ds.train_ids.push_back(i.get<int>());
    for (const auto& i : doc["split"]["test"]) ds.test_ids.push_back(i.get<int>());
    for (int i : ds.train_ids)
      for (int j : ds.test_ids)
        if (i == j) throw std::runtime_error("load_dataset: train/test split overlaps");
  } else {
    for (int i = 0; i < (int)ds.views.size(); ++i) ds.train_ids.push_back(i);
  }

  if (fs::exists(root / "points.ply"))
    load_points_ply((root / "points.ply").string(), &ds.init_points, &ds.init_colors);
  if (fs::exists(root / "gt" / "mesh.ply")) ds.gt_mesh = load_mesh_ply((root / "gt" / "mesh.ply").string());
  update_bbox(&ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

struct RayHit {
  bool hit = false;
  double t = 0.0;  // ray parameter = distance along the unit direction
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
};

RayHit ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  RayHit out;
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - r * r);
  if (disc < 0.0) return out;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t <= 1e-9) t = -b + s;
  if (t <= 1e-9) return out;
  out.hit = true;
  out.t = t;
  out.point = o + t * d;
  out.normal = (out.point - c).normalized();
  return out;
}

RayHit ray_box(const Vec3& o, const Vec3& d, const Vec3& c, const Vec3& half) {
  RayHit out;
  double t0 = -1e30, t1 = 1e30;
  int axis0 = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (std::abs(o[a] - c[a]) > half[a]) return out;
      continue;
    }
    double ta = (c[a] - half[a] - o[a]) / d[a];
    double tb = (c[a] + half[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis0 = a;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return out;
  }
  if (t0 <= 1e-9 || axis0 < 0) return out;
  out.hit = true;
  out.t = t0;
  out.point = o + t0 * d;
  Vec3 n = Vec3::Zero();
  n[axis0] = out.point[axis0] > c[axis0] ? 1.0 : -1.0;
  out.normal = n;
  return out;
}

RayHit trace_shape(const SyntheticSceneSpec& spec, const Vec3& o, const Vec3& d) {
  switch (spec.shape) {
    case SyntheticSceneSpec::Shape::Sphere:
      return ray_sphere(o, d, Vec3::Zero(), spec.radius);
    case SyntheticSceneSpec::Shape::Box:
      return ray_box(o, d, Vec3::Zero(), Vec3::Constant(spec.radius * 0.75));
    case SyntheticSceneSpec::Shape::Composite: {
      const RayHit a = ray_sphere(o, d, Vec3(-0.45 * spec.radius, 0, 0), 0.62 * spec.radius);
      const RayHit b =
          ray_box(o, d, Vec3(0.55 * spec.radius, 0, 0), Vec3::Constant(0.5 * spec.radius));
      if (!a.hit) return b;
      if (!b.hit) return a;
      return a.t < b.t ? a : b;
    }
  }
  return {};
}

Vec3 albedo(const SyntheticSceneSpec& spec, const Vec3& p) {
  const Vec3 q = p / spec.radius;
  switch (spec.texture_id) {
    case 1: {
      const int par = ((int)std::floor(q.x() * 2.0 + 100.0) + (int)std::floor(q.y() * 2.0 + 100.0) +
                       (int)std::floor(q.z() * 2.0 + 100.0)) &
                      1;
      return par ? Vec3(0.85, 0.55, 0.25) : Vec3(0.2, 0.45, 0.75);
    }
    case 2:
      return Vec3(0.7, 0.45, 0.3);
    default:
      return Vec3(0.55 + 0.3 * std::sin(2.1 * q.x() + 0.4),
                  0.5 + 0.3 * std::sin(1.7 * q.y() + 2.1),
                  0.5 + 0.3 * std::sin(2.5 * q.z() + 4.0));
  }
}

Vec3 shade_diffuse(const SyntheticSceneSpec& spec, const Vec3& p, const Vec3& n) {
  const Vec3 light = spec.lobe_dir.normalized();
  const double lambert = 0.4 + 0.6 * std::max(0.0, n.dot(light));
  return (albedo(spec, p) * lambert).cwiseMin(1.0);
}

double specular_term(const SyntheticSceneSpec& spec, const Vec3& view_dir, const Vec3& n) {
  if (spec.specular_strength <= 0.0) return 0.0;
  const Vec3 refl = view_dir - 2.0 * view_dir.dot(n) * n;
  const double c = std::max(0.0, refl.dot(spec.lobe_dir.normalized()));
  return spec.specular_strength * std::pow(c, spec.specular_sharpness);
}

std::vector<Camera> make_cameras(const SyntheticSceneSpec& spec) {
  std::vector<Camera> cams(spec.n_views);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < spec.n_views; ++i) {
    const double frac = spec.n_views > 1 ? (double)i / (spec.n_views - 1) : 0.5;
    const double elev = (-0.45 + 0.95 * frac) * M_PI * 0.5;  // -40 to +45 degrees-ish
    const double azim = golden * i;
    const Vec3 eye = spec.camera_distance *
                     Vec3(std::cos(elev) * std::cos(azim), std::cos(elev) * std::sin(azim),
                          std::sin(elev));
    Camera& cam = cams[i];
    cam.width = spec.width;
    cam.height = spec.height;
    cam.fx = cam.fy = 1.2 * spec.width;
    cam.cx = 0.5 * spec.width;
    cam.cy = 0.5 * spec.height;
    cam.near_z = 0.05;
    cam.far_z = 20.0 * spec.camera_distance;
    cam.world_to_camera = look_at(eye, Vec3::Zero());
  }
  return cams;
}

TriangleMesh uv_sphere(const Vec3& center, double r, int stacks, int slices) {
  TriangleMesh mesh;
  for (int s = 0; s <= stacks; ++s) {
    const double phi = M_PI * s / stacks;
    for (int l = 0; l < slices; ++l) {
      const double th = 2.0 * M_PI * l / slices;
      mesh.vertices.push_back(center + r * Vec3(std::sin(phi) * std::cos(th),
                                                std::sin(phi) * std::sin(th), std::cos(phi)));
    }
  }
  const auto vid = [&](int s, int l) { return s * slices + (l % slices); };
  for (int s = 0; s < stacks; ++s)
    for (int l = 0; l < slices; ++l) {
      if (s > 0) mesh.triangles.push_back({vid(s, l), vid(s, l + 1), vid(s + 1, l)});
      if (s < stacks - 1) mesh.triangles.push_back({vid(s, l + 1), vid(s + 1, l + 1), vid(s + 1, l)});
    }
  return mesh;
}

TriangleMesh box_mesh(const Vec3& center, const Vec3& half, int sub) {
  TriangleMesh mesh;
  for (int axis = 0; axis < 3; ++axis)
    for (int side = -1; side <= 1; side += 2) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      const int base = (int)mesh.vertices.size();
      for (int j = 0; j <= sub; ++j)
        for (int i = 0; i <= sub; ++i) {
          Vec3 p = center;
          p[axis] += side * half[axis];
          p[u] += (-1.0 + 2.0 * i / sub) * half[u];
          p[v] += (-1.0 + 2.0 * j / sub) * half[v];
          mesh.vertices.push_back(p);
        }
      for (int j = 0; j < sub; ++j)
        for (int i = 0; i < sub; ++i) {
          const int a = base + j * (sub + 1) + i;
          const int b = a + 1, c = a + sub + 1, d = c + 1;
          if (side > 0) {
            mesh.triangles.push_back({a, b, c});
            mesh.triangles.push_back({b, d, c});
          } else {
            mesh.triangles.push_back({a, c, b});
            mesh.triangles.push_back({b, c, d});
          }
        }
    }
  return mesh;
}

TriangleMesh gt_mesh_for(const SyntheticSceneSpec& spec) {
  switch (spec.shape) {
    case SyntheticSceneSpec::Shape::Sphere:
      return uv_sphere(Vec3::Zero(), spec.radius, 64, 128);
    case SyntheticSceneSpec::Shape::Box:
      return box_mesh(Vec3::Zero(), Vec3::Constant(spec.radius * 0.75), 16);
    case SyntheticSceneSpec::Shape::Composite: {
      TriangleMesh m = uv_sphere(Vec3(-0.45 * spec.radius, 0, 0), 0.62 * spec.radius, 48, 96);
      const TriangleMesh b =
          box_mesh(Vec3(0.55 * spec.radius, 0, 0), Vec3::Constant(0.5 * spec.radius), 12);
      const int off = (int)m.vertices.size();
      m.vertices.insert(m.vertices.end(), b.vertices.begin(), b.vertices.end());
      for (const auto& t : b.triangles) m.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
      return m;
    }
  }
  return {};
}

}  // namespace

SyntheticSceneSpec synthetic_preset(const std::string& name) {
  SyntheticSceneSpec spec;
  if (name == "sphere_default") {
    // defaults
  } else if (name == "sphere_specular") {
    spec.specular_strength = 0.5;
  } else if (name == "box_default") {
    spec.shape = SyntheticSceneSpec::Shape::Box;
  } else if (name == "composite_default") {
    spec.shape = SyntheticSceneSpec::Shape::Composite;
    spec.texture_id = 1;
  } else {
    throw std::invalid_argument("unknown synthetic preset '" + name + "'");
  }
  return spec;
}

Dataset generate_synthetic(const SyntheticSceneSpec& spec, const std::string& out_dir) {
  spec.validate();
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  fs::create_directories(root / "gt");

  const std::vector<Camera> cams = make_cameras(spec);
  Dataset ds;
  json jviews = json::array();

  for (int vi = 0; vi < spec.n_views; ++vi) {
    const Camera& cam = cams[vi];
    const Vec3 origin = cam.position();
    const Mat3 rot_t = cam.rotation().transpose();
    Image full(cam.height, cam.width, 3);
    Image transmitted(cam.height, cam.width, 3);
    Image depth(cam.height, cam.width, 1);
    Image mask(cam.height, cam.width, 1);

#pragma omp parallel for schedule(static)
    for (long long y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Vec3 dir = (rot_t * cam.pixel_dir_z1(x + 0.5, y + 0.5)).normalized();
        const RayHit hit = trace_shape(spec, origin, dir);
        if (!hit.hit) continue;
        const Vec3 diffuse = shade_diffuse(spec, hit.point, hit.normal);
        const double s = specular_term(spec, dir, hit.normal);
        full.set_rgb((int)y, x, (diffuse + Vec3::Constant(s)).cwiseMin(1.0));
        transmitted.set_rgb((int)y, x, diffuse);
        depth.at((int)y, x) = cam.to_camera(hit.point).z();
        mask.at((int)y, x) = 1.0;
      }

    char name[64];
    std::snprintf(name, sizeof(name), "view_%03d", vi);
    const std::string img_rel = std::string("images/") + name + ".png";
    const std::string mask_rel = std::string("masks/") + name + ".png";
    const std::string tran_rel = std::string("gt/transmitted_") + name + ".fmap";
    const std::string depth_rel = std::string("gt/depth_") + name + ".fmap";
    write_png((root / img_rel).string(), full);
    write_png((root / mask_rel).string(), mask);
    write_fmap((root / tran_rel).string(), transmitted);
    write_fmap((root / depth_rel).string(), depth);

    json jv;
    jv["file"] = img_rel;
    jv["mask"] = mask_rel;
    jv["transmitted"] = tran_rel;
    jv["depth"] = depth_rel;
    jv["fx"] = cam.fx;
    jv["fy"] = cam.fy;
    jv["cx"] = cam.cx;
    jv["cy"] = cam.cy;
    jv["w"] = cam.width;
    jv["h"] = cam.height;
    jv["near"] = cam.near_z;
    jv["far"] = cam.far_z;
    std::vector<double> m16(16);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m16[4 * r + c] = cam.world_to_camera(r, c);
    jv["world_to_camera"] = m16;
    jviews.push_back(jv);
  }

  json split;
  for (int i = 0; i < spec.n_views; ++i) {
    if (spec.n_views >= 8 && i % 8 == 7)
      split["test"].push_back(i);
    else
      split["train"].push_back(i);
  }
  if (!split.contains("test")) split["test"] = json::array();

  // Init point cloud: surface samples with noise, colored by the diffuse term.
  const TriangleMesh gt = gt_mesh_for(spec);
  const SurfaceSamples samples = sample_mesh_surface(gt, spec.n_init_points, spec.seed + 101);
  Rng rng(spec.seed + 17);
  std::vector<Vec3> pts(samples.points.size()), cols(samples.points.size());
  const double noise = 0.01 * 2.0 * spec.radius;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = samples.points[i] + noise * rng.normal3();
    cols[i] = shade_diffuse(spec, samples.points[i], samples.normals[i]);
  }
  export_point_ply((root / "points.ply").string(), pts, cols);
  save_mesh_ply((root / "gt" / "mesh.ply").string(), gt, true);

  json doc;
  doc["views"] = jviews;
  doc["split"] = split;
  std::ofstream out(root / "cameras.json");
  out << doc.dump(1) << "\n";
  out.close();

  return load_dataset(out_dir);
}

}  // namespace dsplat
