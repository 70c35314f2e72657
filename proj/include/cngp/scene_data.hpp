#pragma once

// Cameras, rays, datasets in the transforms-manifest layout, procedural
// analytic scenes, and a dense-quadrature reference renderer for them.
//
// Conventions: camera-to-world poses, right-handed, the camera looks down its
// local -z axis with +y up. Scene content lives in the unit cube [0,1]^3.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cngp/common.hpp"
#include "cngp/image_io.hpp"

namespace cngp {

using Color = std::array<float, 3>;

inline constexpr double kDefaultNear = 0.1;
inline constexpr double kDefaultFar = 4.0;

struct Camera {
  int width = 0;
  int height = 0;
  double focal = 0.0;
  Mat4 pose = identity4();
  double near = kDefaultNear;
  double far = kDefaultFar;

  Vec3 origin() const { return {pose[0][3], pose[1][3], pose[2][3]}; }
  Vec3 rotate(Vec3 v) const {
    return {pose[0][0] * v.x + pose[0][1] * v.y + pose[0][2] * v.z,
            pose[1][0] * v.x + pose[1][1] * v.y + pose[1][2] * v.z,
            pose[2][0] * v.x + pose[2][1] * v.y + pose[2][2] * v.z};
  }
  double camera_angle_x() const { return 2.0 * std::atan(0.5 * width / focal); }

  friend bool operator==(const Camera&, const Camera&) = default;
};

inline double focal_from_angle(double camera_angle_x, int width) {
  return 0.5 * width / std::tan(0.5 * camera_angle_x);
}

inline void validate(const Camera& cam) {
  if (cam.width <= 0 || cam.height <= 0) throw ValidationError("camera: non-positive resolution");
  if (!(cam.focal > 0.0)) throw ValidationError("camera: focal must be positive");
  if (!(cam.near > 0.0 && cam.near < cam.far)) throw ValidationError("camera: require 0 < near < far");
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double rtr = 0.0;
      for (int k = 0; k < 3; ++k) rtr += cam.pose[k][i] * cam.pose[k][j];
      worst = std::max(worst, std::abs(rtr - (i == j ? 1.0 : 0.0)));
    }
  }
  if (!(worst < 1e-5)) throw ValidationError("camera: rotation block is not orthonormal");
}

struct Ray {
  Vec3 origin;
  Vec3 direction;
  double near = kDefaultNear;
  double far = kDefaultFar;
};

struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;
  std::vector<double> near;
  std::vector<double> far;
  std::vector<std::size_t> pixel_ids;

  std::size_t size() const { return origins.size(); }
  Ray ray(std::size_t i) const { return {origins[i], directions[i], near[i], far[i]}; }
};

struct Pixel {
  int row = 0;
  int col = 0;
};

inline Ray camera_ray(const Camera& cam, int row, int col) {
  const double cx = 0.5 * cam.width;
  const double cy = 0.5 * cam.height;
  const Vec3 local{(col + 0.5 - cx) / cam.focal, -(row + 0.5 - cy) / cam.focal, -1.0};
  return {cam.origin(), normalize(cam.rotate(local)), cam.near, cam.far};
}

inline RayBatch generate_rays(const Camera& cam, std::span<const Pixel> pixels) {
  RayBatch batch;
  batch.origins.reserve(pixels.size());
  for (const Pixel& p : pixels) {
    if (p.row < 0 || p.row >= cam.height || p.col < 0 || p.col >= cam.width) {
      throw ValidationError("generate_rays: pixel (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                            ") outside " + std::to_string(cam.height) + "x" + std::to_string(cam.width));
    }
    const Ray r = camera_ray(cam, p.row, p.col);
    batch.origins.push_back(r.origin);
    batch.directions.push_back(r.direction);
    batch.near.push_back(r.near);
    batch.far.push_back(r.far);
    batch.pixel_ids.push_back(static_cast<std::size_t>(p.row) * cam.width + p.col);
  }
  return batch;
}

// Pose whose -z axis points from `eye` toward `target`, world +y up.
inline Mat4 look_at(Vec3 eye, Vec3 target, Vec3 world_up = {0, 1, 0}) {
  const Vec3 forward = normalize(target - eye);
  const Vec3 right = normalize(cross(forward, world_up));
  const Vec3 up = cross(right, forward);
  Mat4 m = identity4();
  for (int i = 0; i < 3; ++i) {
    m[i][0] = right[i];
    m[i][1] = up[i];
    m[i][2] = -forward[i];
    m[i][3] = eye[i];
  }
  return m;
}

struct SceneDataset {
  std::vector<Image> images;
  std::vector<Camera> cameras;
  int label = 0;
  Color background{1.0f, 1.0f, 1.0f};

  std::size_t size() const { return images.size(); }
};

inline void validate(const SceneDataset& ds) {
  if (ds.images.size() != ds.cameras.size()) throw ValidationError("dataset: image/camera count mismatch");
  if (ds.label < 0) throw ValidationError("dataset: label must be non-negative");
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const Image& img = ds.images[i];
    if (img.width != ds.images.front().width || img.height != ds.images.front().height) {
      throw ValidationError("dataset: images do not share one resolution");
    }
    if (img.width != ds.cameras[i].width || img.height != ds.cameras[i].height) {
      throw ValidationError("dataset: camera resolution differs from image " + std::to_string(i));
    }
    validate(ds.cameras[i]);
  }
}

struct DatasetSplits {
  SceneDataset train;
  SceneDataset test;
};

// --- Analytic scenes -------------------------------------------------------

enum class Shape { Sphere, Box };

// Sphere: `size.x` is the radius. Box: `size` holds the half extents.
struct Primitive {
  Shape shape = Shape::Sphere;
  Vec3 center{0.5, 0.5, 0.5};
  Vec3 size{0.25, 0.25, 0.25};
  double density = 1.0;
  Color color{1.0f, 1.0f, 1.0f};

  bool contains(Vec3 p) const {
    const Vec3 d = p - center;
    if (shape == Shape::Sphere) return dot(d, d) <= size.x * size.x;
    return std::abs(d.x) <= size.x && std::abs(d.y) <= size.y && std::abs(d.z) <= size.z;
  }
};

struct AnalyticField {
  std::vector<Primitive> primitives;

  // Overlapping primitives add densities; the color is the density-weighted mix.
  std::pair<double, Vec3> query(Vec3 p) const {
    double sigma = 0.0;
    Vec3 c{};
    for (const Primitive& prim : primitives) {
      if (prim.contains(p)) {
        sigma += prim.density;
        c = c + Vec3{prim.color[0], prim.color[1], prim.color[2]} * prim.density;
      }
    }
    if (sigma > 0.0) c = c * (1.0 / sigma);
    return {sigma, c};
  }
};

inline void validate(const AnalyticField& field) {
  if (field.primitives.empty()) throw ValidationError("analytic field has no primitives");
  for (const Primitive& p : field.primitives) {
    if (!std::isfinite(p.density) || p.density < 0.0) throw ValidationError("primitive density must be finite and >= 0");
    const Vec3 ext = p.shape == Shape::Sphere ? Vec3{p.size.x, p.size.x, p.size.x} : p.size;
    for (int k = 0; k < 3; ++k) {
      if (p.center[k] - ext[k] < -1e-9 || p.center[k] + ext[k] > 1.0 + 1e-9) {
        throw ValidationError("primitive extends outside the unit cube");
      }
    }
    for (float c : p.color) {
      if (!(c >= 0.0f && c <= 1.0f)) throw ValidationError("primitive color outside [0,1]");
    }
  }
}

// Reference renderer: midpoint quadrature of the emission-absorption integral
// on n uniform segments of [near, far], evaluated directly on the analytic
// field. Kept separate from the learned-field renderer on purpose.
inline Vec3 oracle_ray_color(const AnalyticField& field, const Ray& ray, int n_quadrature, Vec3 background) {
  const double dt = (ray.far - ray.near) / n_quadrature;
  double transmittance = 1.0;
  Vec3 acc{};
  for (int i = 0; i < n_quadrature; ++i) {
    const double t = ray.near + (i + 0.5) * dt;
    const auto [sigma, c] = field.query(ray.origin + ray.direction * t);
    if (sigma <= 0.0) continue;
    const double alpha = 1.0 - std::exp(-sigma * dt);
    acc = acc + c * (transmittance * alpha);
    transmittance *= 1.0 - alpha;
  }
  return acc + background * transmittance;
}

inline Image oracle_render(const AnalyticField& field, const Camera& camera, int n_quadrature, Color background) {
  validate(camera);
  if (n_quadrature < 1) throw ValidationError("oracle_render: n_quadrature must be >= 1");
  const Vec3 bg{background[0], background[1], background[2]};
  Image img(camera.width, camera.height);
  for (int r = 0; r < camera.height; ++r) {
    for (int c = 0; c < camera.width; ++c) {
      const Vec3 col = oracle_ray_color(field, camera_ray(camera, r, c), n_quadrature, bg);
      float* px = img.at(r, c);
      for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(col[k]);
    }
  }
  return img;
}

struct ProceduralOptions {
  int width = 64;
  int height = 64;
  double camera_angle_x = 0.8;
  double orbit_radius = 2.0;
  double min_elevation = 0.15;  // radians above the horizontal plane
  double max_elevation = 1.2;
  double near = kDefaultNear;
  double far = kDefaultFar;
  int n_quadrature = 512;
  Color background{1.0f, 1.0f, 1.0f};
};

inline constexpr Vec3 kCubeCenter{0.5, 0.5, 0.5};

// Cameras on the upper hemisphere of the orbit around the cube center. The
// first n_train poses form the train split, the next n_test the test split;
// images are quantized to 8 bits so they survive a PNG round trip exactly.
inline DatasetSplits make_procedural_scene(const AnalyticField& field, int n_train, int n_test,
                                           const ProceduralOptions& opt, std::uint64_t seed, int label = 0) {
  validate(field);
  if (n_train <= 0 || n_test <= 0) throw ValidationError("make_procedural_scene: counts must be positive");
  Rng rng(seed);
  const double focal = focal_from_angle(opt.camera_angle_x, opt.width);
  auto make_split = [&](int count) {
    SceneDataset ds;
    ds.label = label;
    ds.background = opt.background;
    for (int i = 0; i < count; ++i) {
      const double azimuth = 2.0 * std::numbers::pi * uniform01(rng);
      const double elevation = opt.min_elevation + (opt.max_elevation - opt.min_elevation) * uniform01(rng);
      const Vec3 offset{std::cos(elevation) * std::sin(azimuth), std::sin(elevation),
                        std::cos(elevation) * std::cos(azimuth)};
      Camera cam;
      cam.width = opt.width;
      cam.height = opt.height;
      cam.focal = focal;
      cam.near = opt.near;
      cam.far = opt.far;
      cam.pose = look_at(kCubeCenter + offset * opt.orbit_radius, kCubeCenter);
      Image img = oracle_render(field, cam, opt.n_quadrature, opt.background);
      quantize_8bit(img);
      ds.cameras.push_back(cam);
      ds.images.push_back(std::move(img));
    }
    return ds;
  };
  DatasetSplits out;
  out.train = make_split(n_train);
  out.test = make_split(n_test);
  return out;
}

// --- Transforms manifest ---------------------------------------------------

// Manifest shape: {"camera_angle_x": float, "frames": [{"file_path": str,
// "transform_matrix": 4x4 nested lists}]}. Paths are relative and carry no
// extension; images are PNG.
inline nlohmann::json cameras_to_manifest(std::span<const Camera> cameras, std::span<const std::string> file_paths) {
  nlohmann::json j;
  j["camera_angle_x"] = cameras.empty() ? 0.0 : cameras.front().camera_angle_x();
  j["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& row : cameras[i].pose) m.push_back(row);
    j["frames"].push_back({{"file_path", file_paths[i]}, {"transform_matrix", m}});
  }
  return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct ManifestFrame {
  std::string file_path;
  Mat4 pose;
};

struct Manifest {
  double camera_angle_x = 0.0;
  std::vector<ManifestFrame> frames;
};

inline Manifest parse_manifest(const nlohmann::json& j, const std::string& where) {
  try {
    Manifest m;
    m.camera_angle_x = j.at("camera_angle_x").get<double>();
    for (const auto& f : j.at("frames")) {
      ManifestFrame fr;
      fr.file_path = f.at("file_path").get<std::string>();
      const auto& tm = f.at("transform_matrix");
      if (tm.size() != 4) throw FormatError(where + ": transform_matrix must be 4x4");
      for (int r = 0; r < 4; ++r) {
        if (tm[r].size() != 4) throw FormatError(where + ": transform_matrix must be 4x4");
        for (int c = 0; c < 4; ++c) fr.pose[r][c] = tm[r][c].get<double>();
      }
      m.frames.push_back(std::move(fr));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

// Cameras from a manifest file; resolution and clip planes are not part of
// the format and come from the caller.
inline std::vector<Camera> load_cameras(const std::filesystem::path& manifest_path, int width, int height,
                                        double near = kDefaultNear, double far = kDefaultFar) {
  const Manifest m = parse_manifest(read_json(manifest_path), manifest_path.string());
  std::vector<Camera> cams;
  for (const auto& fr : m.frames) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal = focal_from_angle(m.camera_angle_x, width);
    cam.pose = fr.pose;
    cam.near = near;
    cam.far = far;
    validate(cam);
    cams.push_back(cam);
  }
  return cams;
}

inline std::filesystem::path manifest_path_for(const std::filesystem::path& dir, const std::string& split) {
  const auto specific = dir / ("transforms_" + split + ".json");
  if (std::filesystem::exists(specific)) return specific;
  const auto generic = dir / "transforms.json";
  if (std::filesystem::exists(generic)) return generic;
  throw FormatError("no transforms manifest in " + dir.string() + " (looked for transforms_" + split +
                    ".json and transforms.json)");
}

// Writes `ds` as <dir>/transforms_<split>.json plus <dir>/<split>/r_<i>.png.
inline void write_dataset(const std::filesystem::path& dir, const SceneDataset& ds, const std::string& split) {
  validate(ds);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    paths.push_back("./" + split + "/r_" + std::to_string(i));
    write_png(dir / split / ("r_" + std::to_string(i) + ".png"), ds.images[i]);
  }
  write_json(dir / ("transforms_" + split + ".json"), cameras_to_manifest(ds.cameras, paths));
}

inline void write_dataset(const std::filesystem::path& dir, const DatasetSplits& splits) {
  write_dataset(dir, splits.train, "train");
  write_dataset(dir, splits.test, "test");
}

inline SceneDataset load_dataset(const std::filesystem::path& dir, int label, const std::string& split = "train",
                                 Color background = {1.0f, 1.0f, 1.0f}, double near = kDefaultNear,
                                 double far = kDefaultFar) {
  const auto mpath = manifest_path_for(dir, split);
  const Manifest m = parse_manifest(read_json(mpath), mpath.string());
  if (m.frames.empty()) throw ValidationError(mpath.string() + ": manifest lists no frames");
  SceneDataset ds;
  ds.label = label;
  ds.background = background;
  for (const auto& fr : m.frames) {
    std::filesystem::path img_path = dir / fr.file_path;
    if (img_path.extension() != ".png") img_path += ".png";
    if (!std::filesystem::exists(img_path)) {
      throw ValidationError("frame image missing: " + img_path.string());
    }
    Image img = read_png(img_path, background);
    Camera cam;
    cam.width = img.width;
    cam.height = img.height;
    cam.focal = focal_from_angle(m.camera_angle_x, img.width);
    cam.pose = fr.pose;
    cam.near = near;
    cam.far = far;
    ds.cameras.push_back(cam);
    ds.images.push_back(std::move(img));
  }
  validate(ds);
  return ds;
}

// --- Scene description files (make-synthetic) -------------------------------

struct SceneSpec {
  AnalyticField field;
  int n_train = 16;
  int n_test = 4;
  ProceduralOptions options;
};

inline Vec3 vec3_from_json(const nlohmann::json& j) {
  if (j.is_number()) {
    const double v = j.get<double>();
    return {v, v, v};
  }
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a number or a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Color color_from_json(const nlohmann::json& j) {
  const Vec3 v = vec3_from_json(j);
  return {static_cast<float>(v.x), static_cast<float>(v.y), static_cast<float>(v.z)};
}

inline SceneSpec parse_scene_spec(const nlohmann::json& j) {
  try {
    SceneSpec s;
    for (const auto& p : j.at("primitives")) {
      Primitive prim;
      const std::string shape = p.at("shape").get<std::string>();
      if (shape == "sphere") {
        prim.shape = Shape::Sphere;
      } else if (shape == "box") {
        prim.shape = Shape::Box;
      } else {
        throw FormatError("unknown primitive shape '" + shape + "'");
      }
      prim.center = vec3_from_json(p.at("center"));
      prim.size = vec3_from_json(p.at("size"));
      prim.density = p.at("density").get<double>();
      prim.color = color_from_json(p.at("color"));
      s.field.primitives.push_back(prim);
    }
    auto& o = s.options;
    s.n_train = j.value("n_train", s.n_train);
    s.n_test = j.value("n_test", s.n_test);
    o.width = j.value("width", o.width);
    o.height = j.value("height", o.height);
    o.camera_angle_x = j.value("camera_angle_x", o.camera_angle_x);
    o.orbit_radius = j.value("orbit_radius", o.orbit_radius);
    o.min_elevation = j.value("min_elevation", o.min_elevation);
    o.max_elevation = j.value("max_elevation", o.max_elevation);
    o.near = j.value("near", o.near);
    o.far = j.value("far", o.far);
    o.n_quadrature = j.value("n_quadrature", o.n_quadrature);
    if (j.contains("background")) o.background = color_from_json(j["background"]);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene spec: ") + e.what());
  }
}

}  // namespace cngp
