// File formats and config plumbing: binary PGM (8/16-bit), raw float64
// grids with JSON sidecars, ASCII PLY and CSV point clouds, JSON configs
// with include/override semantics, and simulation-frame directories.
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "projref/estimator.hpp"
#include "projref/presets.hpp"
#include "projref/registration.hpp"
#include "projref/scene.hpp"

namespace projref {

using Json = nlohmann::json;
namespace fs = std::filesystem;

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

/// Shortest-round-trip decimal formatting for doubles.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// PGM (binary P5; 16-bit samples are big-endian per the format)

inline void write_pgm(const fs::path& path, const ImageF& img, int maxval = 65535) {
  if (maxval != 255 && maxval != 65535) throw IoError("PGM maxval must be 255 or 65535");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
  for (double v : img.data) {
    long q = std::lround(std::clamp(v, 0.0, 1.0) * maxval);
    if (maxval == 255) {
      f.put(char(q));
    } else {
      f.put(char(q >> 8));
      f.put(char(q & 0xff));
    }
  }
  if (!f) throw IoError("write failed: " + path.string());
}

inline ImageF read_pgm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw IoError("not a binary PGM: " + path.string());
  auto next_int = [&]() {
    int c = f.get();
    while (c == '#' || std::isspace(c)) {
      if (c == '#')
        while (c != '\n' && c != EOF) c = f.get();
      c = f.get();
    }
    f.unget();
    long v;
    f >> v;
    return v;
  };
  long w = next_int(), h = next_int(), maxval = next_int();
  f.get();  // single whitespace after maxval
  if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535))
    throw IoError("unsupported PGM header: " + path.string());
  ImageF img{int(w), int(h)};
  for (double& v : img.data) {
    int hi = f.get();
    if (maxval == 255) {
      v = hi / 255.0;
    } else {
      int lo = f.get();
      v = ((hi << 8) | lo) / 65535.0;
    }
  }
  if (!f) throw IoError("truncated PGM: " + path.string());
  return img;
}

// ---------------------------------------------------------------------------
// Raw float64 grid + JSON sidecar (<path> and <path>.json)

inline void write_raw_grid(const fs::path& path, const ImageF& img,
                           const std::string& units = "") {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(img.data.data()),
          std::streamsize(img.data.size() * sizeof(double)));
  if (!f) throw IoError("write failed: " + path.string());
  Json side{{"schema", "grid-v1"},
            {"width", img.width},
            {"height", img.height},
            {"dtype", "float64"},
            {"order", "row-major"},
            {"units", units}};
  std::ofstream sf(path.string() + ".json");
  if (!sf) throw IoError("cannot write sidecar for: " + path.string());
  sf << side.dump(2) << "\n";
}

inline ImageF read_raw_grid(const fs::path& path) {
  std::ifstream sf(path.string() + ".json");
  if (!sf) throw IoError("missing sidecar: " + path.string() + ".json");
  Json side = Json::parse(sf, nullptr, false);
  if (side.is_discarded()) throw IoError("malformed sidecar: " + path.string() + ".json");
  if (side.value("dtype", "") != "float64" || side.value("order", "") != "row-major")
    throw IoError("unsupported grid encoding: " + path.string());
  int w = side.value("width", 0), h = side.value("height", 0);
  if (w <= 0 || h <= 0) throw IoError("bad grid dimensions: " + path.string());
  ImageF img(w, h);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  f.read(reinterpret_cast<char*>(img.data.data()),
         std::streamsize(img.data.size() * sizeof(double)));
  if (f.gcount() != std::streamsize(img.data.size() * sizeof(double)))
    throw IoError("truncated grid: " + path.string());
  return img;
}

// ---------------------------------------------------------------------------
// Point clouds: ASCII PLY (x y z + pixel provenance) and CSV

inline void write_ply(const fs::path& path, const PointCloud& cloud) {
  cloud.check_parallel();
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "ply\nformat ascii 1.0\n";
  f << "element vertex " << cloud.size() << "\n";
  for (const char* p : {"x", "y", "z", "camera_u", "camera_v", "local_coord", "global_u",
                        "global_v"})
    f << "property double " << p << "\n";
  f << "property uchar has_global\nend_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    f << fmt_double(cloud.points[i].x()) << " " << fmt_double(cloud.points[i].y()) << " "
      << fmt_double(cloud.points[i].z()) << " " << fmt_double(cloud.camera_px[i].u) << " "
      << fmt_double(cloud.camera_px[i].v) << " " << fmt_double(cloud.local_coord[i]) << " "
      << fmt_double(cloud.global_px[i].u) << " " << fmt_double(cloud.global_px[i].v) << " "
      << int(cloud.has_global[i]) << "\n";
  }
  if (!f) throw IoError("write failed: " + path.string());
}

inline PointCloud read_ply(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != "ply") throw IoError("not a PLY file: " + path.string());
  size_t count = 0;
  std::vector<std::string> props;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "end_header") break;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") throw IoError("only ASCII PLY supported: " + path.string());
    } else if (tok == "element") {
      std::string what;
      ss >> what >> count;
      if (what != "vertex") throw IoError("unsupported PLY element: " + what);
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      props.push_back(name);
    }
  }
  auto prop_index = [&](const std::string& name) {
    for (size_t i = 0; i < props.size(); ++i)
      if (props[i] == name) return long(i);
    return -1L;
  };
  long ix = prop_index("x"), iy = prop_index("y"), iz = prop_index("z");
  if (ix < 0 || iy < 0 || iz < 0) throw IoError("PLY missing x/y/z: " + path.string());
  long icu = prop_index("camera_u"), icv = prop_index("camera_v"), ilc = prop_index("local_coord");
  long igu = prop_index("global_u"), igv = prop_index("global_v"), ihg = prop_index("has_global");
  PointCloud cloud;
  std::vector<double> row(props.size());
  for (size_t i = 0; i < count; ++i) {
    for (double& v : row) f >> v;
    if (!f) throw IoError("truncated PLY: " + path.string());
    auto get = [&](long idx) { return idx >= 0 ? row[size_t(idx)] : 0.0; };
    cloud.push(Vec3(row[size_t(ix)], row[size_t(iy)], row[size_t(iz)]),
               {get(icu), get(icv)}, get(ilc), {get(igu), get(igv)},
               ihg >= 0 ? row[size_t(ihg)] != 0.0 : false);
  }
  return cloud;
}

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  for (size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_cloud_csv(const fs::path& path, const PointCloud& cloud) {
  cloud.check_parallel();
  std::vector<std::vector<std::string>> rows;
  rows.reserve(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i)
    rows.push_back({fmt_double(cloud.points[i].x()), fmt_double(cloud.points[i].y()),
                    fmt_double(cloud.points[i].z()), fmt_double(cloud.camera_px[i].u),
                    fmt_double(cloud.camera_px[i].v), fmt_double(cloud.local_coord[i]),
                    fmt_double(cloud.global_px[i].u), fmt_double(cloud.global_px[i].v),
                    std::to_string(int(cloud.has_global[i]))});
  write_csv(path, {"x", "y", "z", "camera_u", "camera_v", "local_coord", "global_u", "global_v",
                   "has_global"},
            rows);
}

inline PointCloud read_cloud_csv(const fs::path& path) {
  auto rows = read_csv(path);
  if (rows.empty()) throw IoError("empty cloud CSV: " + path.string());
  PointCloud cloud;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() < 9) throw IoError("malformed cloud CSV row in " + path.string());
    cloud.push(Vec3(std::stod(r[0]), std::stod(r[1]), std::stod(r[2])),
               {std::stod(r[3]), std::stod(r[4])}, std::stod(r[5]),
               {std::stod(r[6]), std::stod(r[7])}, std::stoi(r[8]) != 0);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// JSON configs with include/override semantics

namespace detail {

inline void deep_merge(Json& base, const Json& over) {
  if (!base.is_object() || !over.is_object()) {
    base = over;
    return;
  }
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (base.contains(it.key()))
      deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

}  // namespace detail

/// Loads a JSON config. An "include" key (path relative to the file) is
/// resolved first, recursively; the including file's keys override it.
inline Json load_config(const fs::path& path, int depth = 0) {
  if (depth > 16) throw ConfigError("config include chain too deep at " + path.string());
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path.string());
  Json j = Json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed JSON in config: " + path.string());
  if (!j.is_object()) throw ConfigError("config root must be an object: " + path.string());
  if (j.contains("include")) {
    if (!j["include"].is_string())
      throw ConfigError("field 'include' must be a string in " + path.string());
    fs::path inc = path.parent_path() / j["include"].get<std::string>();
    Json base = load_config(inc, depth + 1);
    j.erase("include");
    detail::deep_merge(base, j);
    return base;
  }
  return j;
}

/// FNV-1a over the canonical (sorted-key) dump; stable across semantically
/// identical configs.
inline std::string config_hash(const Json& j) {
  std::string s = j.dump();  // nlohmann objects iterate in sorted key order
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// JSON <-> domain types

inline Json to_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"skew", k.skew},
          {"k1", k.k1}, {"k2", k.k2}, {"width", k.width}, {"height", k.height}};
}

inline Intrinsics intrinsics_from_json(const Json& j) {
  Intrinsics k;
  k.fx = j.value("fx", 0.0);
  k.fy = j.value("fy", 0.0);
  k.cx = j.value("cx", 0.0);
  k.cy = j.value("cy", 0.0);
  k.skew = j.value("skew", 0.0);
  k.k1 = j.value("k1", 0.0);
  k.k2 = j.value("k2", 0.0);
  k.width = j.value("width", 0);
  k.height = j.value("height", 0);
  if (k.fx <= 0.0 || k.fy <= 0.0 || k.width <= 0 || k.height <= 0)
    throw ConfigError("intrinsics require positive fx, fy, width, height");
  return k;
}

inline Json to_json(const RigidTransform& t) {
  Json rows = Json::array();
  for (int i = 0; i < 3; ++i) {
    Json row = Json::array();
    for (int j = 0; j < 3; ++j) row.push_back(t.R(i, j));
    row.push_back(t.t[i]);
    rows.push_back(row);
  }
  rows.push_back({0.0, 0.0, 0.0, 1.0});
  return {{"matrix", rows}};
}

inline RigidTransform transform_from_json(const Json& j) {
  if (j.contains("euler")) {
    const Json& e = j["euler"];
    if (!e.is_array() || e.size() != 6)
      throw ConfigError("field 'euler' must be a 6-element array");
    return pose_to_transform(EulerPose{e[0], e[1], e[2], e[3], e[4], e[5]});
  }
  if (!j.contains("matrix")) throw ConfigError("transform needs 'matrix' or 'euler'");
  const Json& m = j["matrix"];
  if (!m.is_array() || m.size() < 3) throw ConfigError("field 'matrix' must be 4x4 rows");
  RigidTransform t;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 4; ++c) {
      double v = m[i][c];
      if (c < 3)
        t.R(i, c) = v;
      else
        t.t[i] = v;
    }
  if (!is_rotation(t.R, 1e-6)) throw ConfigError("transform rotation block is not orthonormal");
  return t;
}

inline Json to_json(const PatternSpec& p) {
  return {{"steps", p.steps},   {"period_h", p.period_h}, {"period_v", p.period_v},
          {"gray_bits", p.gray_bits}, {"width", p.width},  {"height", p.height},
          {"mean_intensity", p.mean_intensity}, {"modulation", p.modulation}};
}

inline PatternSpec pattern_from_json(const Json& j, const PatternSpec& def = {}) {
  PatternSpec p = def;
  p.steps = j.value("steps", p.steps);
  p.period_h = j.value("period_h", p.period_h);
  p.period_v = j.value("period_v", p.period_v);
  p.gray_bits = j.value("gray_bits", p.gray_bits);
  p.width = j.value("width", p.width);
  p.height = j.value("height", p.height);
  p.mean_intensity = j.value("mean_intensity", p.mean_intensity);
  p.modulation = j.value("modulation", p.modulation);
  p.validate();
  return p;
}

inline std::string axis_name(FringeAxis a) {
  return a == FringeAxis::Horizontal ? "horizontal" : "vertical";
}

inline FringeAxis axis_from_name(const std::string& s) {
  if (s == "horizontal") return FringeAxis::Horizontal;
  if (s == "vertical") return FringeAxis::Vertical;
  throw ConfigError("unknown fringe axis: '" + s + "' (horizontal|vertical)");
}

inline Json to_json(const RigSpec& r) {
  return {{"camera", to_json(r.camera)},
          {"local_projector", to_json(r.local_projector)},
          {"global_projector", to_json(r.global_projector)},
          {"cam_to_local", to_json(r.cam_to_local)},
          {"working_distance", r.working_distance},
          {"local_pattern", to_json(r.local_pattern)},
          {"global_pattern", to_json(r.global_pattern)},
          {"local_axis", axis_name(r.local_axis)}};
}

inline RigSpec rig_from_json(const Json& j) {
  if (j.contains("preset")) {
    std::string p = j["preset"];
    if (p == "small") return small_rig();
    if (p == "full") return full_rig();
    throw ConfigError("unknown rig preset: '" + p + "' (small|full)");
  }
  for (const char* field : {"camera", "local_projector", "global_projector"})
    if (!j.contains(field)) throw ConfigError(std::string("rig missing field '") + field + "'");
  RigSpec r;
  r.camera = intrinsics_from_json(j["camera"]);
  r.local_projector = intrinsics_from_json(j["local_projector"]);
  r.global_projector = intrinsics_from_json(j["global_projector"]);
  if (j.contains("cam_to_local")) r.cam_to_local = transform_from_json(j["cam_to_local"]);
  r.working_distance = j.value("working_distance", r.working_distance);
  if (j.contains("local_pattern")) r.local_pattern = pattern_from_json(j["local_pattern"]);
  if (j.contains("global_pattern")) r.global_pattern = pattern_from_json(j["global_pattern"]);
  if (j.contains("local_axis")) r.local_axis = axis_from_name(j["local_axis"]);
  return r;
}

inline Json to_json(const NoiseSpec& n) {
  return {{"sigma_intensity", n.sigma_intensity},
          {"quant_bits", n.quant_bits},
          {"sigma_cloud", n.sigma_cloud},
          {"cloud_mode", n.cloud_mode == CloudNoiseMode::ConstantOffset ? "constant-offset"
                                                                        : "smooth-field"},
          {"sigma_px", n.sigma_px},
          {"field_scale_frac", n.field_scale_frac},
          {"seed", n.seed}};
}

inline NoiseSpec noise_from_json(const Json& j) {
  NoiseSpec n;
  n.sigma_intensity = j.value("sigma_intensity", 0.0);
  n.quant_bits = j.value("quant_bits", 0);
  n.sigma_cloud = j.value("sigma_cloud", 0.0);
  std::string mode = j.value("cloud_mode", "constant-offset");
  if (mode == "constant-offset")
    n.cloud_mode = CloudNoiseMode::ConstantOffset;
  else if (mode == "smooth-field")
    n.cloud_mode = CloudNoiseMode::SmoothField;
  else
    throw ConfigError("unknown cloud_mode: '" + mode + "' (constant-offset|smooth-field)");
  n.sigma_px = j.value("sigma_px", 0.0);
  n.field_scale_frac = j.value("field_scale_frac", 0.25);
  n.seed = j.value("seed", uint64_t{0});
  if (n.sigma_intensity < 0 || n.sigma_cloud < 0 || n.sigma_px < 0 || n.quant_bits < 0)
    throw ConfigError("noise parameters must be non-negative");
  return n;
}

inline Json to_json(const Scene& s) {
  Json surf;
  if (const auto* p = std::get_if<PlaneSurface>(&s.surface)) {
    surf = {{"type", "plane"},
            {"point", {p->point.x(), p->point.y(), p->point.z()}},
            {"normal", {p->normal.x(), p->normal.y(), p->normal.z()}},
            {"ripple_amp", p->ripple_amp},
            {"ripple_period", p->ripple_period}};
  } else if (const auto* sp = std::get_if<SphereSurface>(&s.surface)) {
    surf = {{"type", "sphere"},
            {"center", {sp->center.x(), sp->center.y(), sp->center.z()}},
            {"radius", sp->radius}};
  } else {
    surf = {{"type", "statue"}};  // relief presets round-trip by seed only
  }
  return {{"surface", surf}};
}

inline Scene scene_from_json(const Json& j) {
  if (!j.contains("surface")) throw ConfigError("scene missing field 'surface'");
  const Json& s = j["surface"];
  std::string type = s.value("type", "");
  auto vec3 = [&](const char* key, Vec3 def) {
    if (!s.contains(key)) return def;
    const Json& a = s[key];
    if (!a.is_array() || a.size() != 3)
      throw ConfigError(std::string("surface field '") + key + "' must be a 3-array");
    return Vec3(a[0], a[1], a[2]);
  };
  if (type == "plane") {
    PlaneSurface p;
    p.point = vec3("point", p.point);
    p.normal = vec3("normal", p.normal).normalized();
    p.ripple_amp = s.value("ripple_amp", 0.0);
    p.ripple_period = s.value("ripple_period", 0.01);
    Scene sc;
    sc.surface = p;
    return sc;
  }
  if (type == "sphere") {
    SphereSurface sp;
    sp.center = vec3("center", sp.center);
    sp.radius = s.value("radius", sp.radius);
    Scene sc;
    sc.surface = sp;
    return sc;
  }
  if (type == "statue") return statue_scene(s.value("seed", uint64_t{7}));
  throw ConfigError("unknown surface type: '" + type + "' (plane|sphere|statue)");
}

inline SamplingScheme scheme_from_name(const std::string& s) {
  if (s == "grid") return SamplingScheme::Grid;
  if (s == "random") return SamplingScheme::Random;
  if (s == "uniform") return SamplingScheme::Uniform;
  if (s == "voxel-nearest") return SamplingScheme::VoxelNearest;
  throw ConfigError("unknown sampling scheme: '" + s + "' (grid|random|uniform|voxel-nearest)");
}

inline Json to_json(const EstimatorConfig& c) {
  return {{"batches", c.batches},
          {"batch_size", c.batch_size},
          {"max_iters", c.max_iters},
          {"alpha0", c.alpha0},
          {"warmup_iters", c.warmup_iters},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"lambda_stage2", c.lambda_stage2},
          {"early_stop_threshold", c.early_stop_threshold},
          {"patience", c.patience},
          {"convergence_rms_px", c.convergence_rms_px},
          {"scheme", sampling_scheme_name(c.scheme)},
          {"use_bounded_translation", c.use_bounded_translation},
          {"median_aggregation", c.median_aggregation},
          {"run_stage2", c.run_stage2},
          {"stage2_trust_dt", c.stage2_trust_dt},
          {"stage2_trust_dr", c.stage2_trust_dr},
          {"stage2_axis", axis_name(c.stage2_axis)},
          {"pool_target", c.pool_target},
          {"voxel_size", c.voxel_size},
          {"seed", c.seed},
          {"workers", c.workers}};
}

inline EstimatorConfig estimator_from_json(const Json& j) {
  EstimatorConfig c;
  c.batches = j.value("batches", c.batches);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.alpha0 = j.value("alpha0", c.alpha0);
  c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.lambda_stage2 = j.value("lambda_stage2", c.lambda_stage2);
  c.early_stop_threshold = j.value("early_stop_threshold", c.early_stop_threshold);
  c.patience = j.value("patience", c.patience);
  c.convergence_rms_px = j.value("convergence_rms_px", c.convergence_rms_px);
  if (j.contains("scheme")) c.scheme = scheme_from_name(j["scheme"]);
  c.use_bounded_translation = j.value("use_bounded_translation", c.use_bounded_translation);
  c.median_aggregation = j.value("median_aggregation", c.median_aggregation);
  c.run_stage2 = j.value("run_stage2", c.run_stage2);
  c.stage2_trust_dt = j.value("stage2_trust_dt", c.stage2_trust_dt);
  c.stage2_trust_dr = j.value("stage2_trust_dr", c.stage2_trust_dr);
  if (j.contains("stage2_axis")) c.stage2_axis = axis_from_name(j["stage2_axis"]);
  c.pool_target = j.value("pool_target", c.pool_target);
  c.voxel_size = j.value("voxel_size", c.voxel_size);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  if (c.batches < 2 || c.batch_size < 6 || c.max_iters < 1 || c.alpha0 <= 0.0)
    throw ConfigError("estimator config: need batches >= 2, batch_size >= 6, positive iters/step");
  return c;
}

inline Json to_json(const IcpConfig& c) {
  return {{"max_iters", c.max_iters}, {"rel_change", c.rel_change}, {"normal_k", c.normal_k},
          {"max_corr_dist", c.max_corr_dist}, {"seed", c.seed}, {"workers", c.workers}};
}

inline IcpConfig icp_from_json(const Json& j) {
  IcpConfig c;
  c.max_iters = j.value("max_iters", c.max_iters);
  c.rel_change = j.value("rel_change", c.rel_change);
  c.normal_k = j.value("normal_k", c.normal_k);
  c.max_corr_dist = j.value("max_corr_dist", c.max_corr_dist);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  c.validate();
  return c;
}

inline Json to_json(const MaskConfig& c) {
  return {{"saturation", c.saturation},
          {"underexposure", c.underexposure},
          {"modulation_min", c.modulation_min},
          {"fringe_edge_gradient", c.fringe_edge_gradient}};
}

inline MaskConfig mask_from_json(const Json& j, const MaskConfig& def = {}) {
  MaskConfig c = def;
  c.saturation = j.value("saturation", c.saturation);
  c.underexposure = j.value("underexposure", c.underexposure);
  c.modulation_min = j.value("modulation_min", c.modulation_min);
  c.fringe_edge_gradient = j.value("fringe_edge_gradient", c.fringe_edge_gradient);
  return c;
}

inline Json pose_estimate_to_json(const PoseEstimate& e) {
  Json theta = {e.theta.roll, e.theta.pitch, e.theta.yaw, e.theta.tx, e.theta.ty, e.theta.tz};
  Json j = {{"success", e.success},
            {"failure_reason", e.failure_reason},
            {"theta", theta},
            {"pose", to_json(e.pose)},
            {"stage1_loss", e.stage1_loss},
            {"rms_px", e.rms_px},
            {"inlier_count", e.inlier_count},
            {"rejected_count", e.rejected_count},
            {"failed_batches", e.failed_batches},
            {"stage2_applied", e.stage2_applied},
            {"elapsed_seconds", e.elapsed_seconds}};
  Json hyps = Json::array();
  for (const auto& h : e.hypotheses)
    hyps.push_back({{"batch_id", h.batch_id},
                    {"loss", h.loss},
                    {"rms_px", h.rms_px},
                    {"iterations", h.iterations},
                    {"converged", h.converged},
                    {"failed", h.failed}});
  j["hypotheses"] = hyps;
  return j;
}

// ---------------------------------------------------------------------------
// Simulation frame directory

namespace detail {

inline void write_stack(const fs::path& dir, const std::string& stem,
                        const std::vector<ImageF>& stack) {
  for (size_t i = 0; i < stack.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%02zu.pgm", stem.c_str(), i);
    write_pgm(dir / name, stack[i], 65535);
  }
}

inline std::vector<ImageF> read_stack(const fs::path& dir, const std::string& stem, int count) {
  std::vector<ImageF> stack;
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%02d.pgm", stem.c_str(), i);
    stack.push_back(read_pgm(dir / name));
  }
  return stack;
}

inline void write_mask_pgm(const fs::path& path, const GridU8& g) {
  ImageF img(g.width, g.height);
  for (size_t i = 0; i < g.data.size(); ++i) img.data[i] = g.data[i] ? 1.0 : 0.0;
  write_pgm(path, img, 255);
}

inline GridU8 read_mask_pgm(const fs::path& path) {
  ImageF img = read_pgm(path);
  GridU8 g(img.width, img.height);
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = img.data[i] > 0.5 ? 1 : 0;
  return g;
}

}  // namespace detail

/// Persists a rendered frame: pattern stacks as 16-bit PGM, ground truth as
/// raw float64 grids, and a frame.json tying them together.
inline void save_frame(const fs::path& dir, const SimFrame& f) {
  fs::create_directories(dir);
  Json meta = {{"schema", "frame-v1"},
               {"rig", to_json(f.rig)},
               {"camera_pose", to_json(f.camera_pose)},
               {"noise", to_json(f.noise)}};
  std::ofstream mf(dir / "frame.json");
  if (!mf) throw IoError("cannot write frame.json in " + dir.string());
  mf << meta.dump(2) << "\n";

  detail::write_stack(dir, "local_fringe", f.local_fringe);
  detail::write_stack(dir, "local_gray", f.local_gray);
  detail::write_stack(dir, "global_fringe_h", f.global_fringe_h);
  detail::write_stack(dir, "global_gray_h", f.global_gray_h);
  detail::write_stack(dir, "global_fringe_v", f.global_fringe_v);
  detail::write_stack(dir, "global_gray_v", f.global_gray_v);

  detail::write_mask_pgm(dir / "hit.pgm", f.hit);
  detail::write_mask_pgm(dir / "occl_local.pgm", f.occl_local);
  detail::write_mask_pgm(dir / "occl_global.pgm", f.occl_global);
  write_raw_grid(dir / "gt_x.f64", f.gt_x, "m");
  write_raw_grid(dir / "gt_y.f64", f.gt_y, "m");
  write_raw_grid(dir / "gt_z.f64", f.gt_z, "m");
  write_raw_grid(dir / "gt_phase_local.f64", f.gt_phase_local, "rad");
  write_raw_grid(dir / "gt_phase_global_h.f64", f.gt_phase_global_h, "rad");
  write_raw_grid(dir / "gt_phase_global_v.f64", f.gt_phase_global_v, "rad");
}

inline SimFrame load_frame(const fs::path& dir) {
  std::ifstream mf(dir / "frame.json");
  if (!mf) throw IoError("missing frame.json in " + dir.string());
  Json meta = Json::parse(mf, nullptr, false);
  if (meta.is_discarded()) throw IoError("malformed frame.json in " + dir.string());
  SimFrame f;
  f.rig = rig_from_json(meta.at("rig"));
  f.camera_pose = transform_from_json(meta.at("camera_pose"));
  f.noise = noise_from_json(meta.at("noise"));

  f.local_fringe = detail::read_stack(dir, "local_fringe", f.rig.local_pattern.steps);
  f.local_gray = detail::read_stack(dir, "local_gray", 2 * f.rig.local_pattern.gray_bits);
  f.global_fringe_h = detail::read_stack(dir, "global_fringe_h", f.rig.global_pattern.steps);
  f.global_gray_h = detail::read_stack(dir, "global_gray_h", 2 * f.rig.global_pattern.gray_bits);
  f.global_fringe_v = detail::read_stack(dir, "global_fringe_v", f.rig.global_pattern.steps);
  f.global_gray_v = detail::read_stack(dir, "global_gray_v", 2 * f.rig.global_pattern.gray_bits);

  f.hit = detail::read_mask_pgm(dir / "hit.pgm");
  f.occl_local = detail::read_mask_pgm(dir / "occl_local.pgm");
  f.occl_global = detail::read_mask_pgm(dir / "occl_global.pgm");
  f.gt_x = read_raw_grid(dir / "gt_x.f64");
  f.gt_y = read_raw_grid(dir / "gt_y.f64");
  f.gt_z = read_raw_grid(dir / "gt_z.f64");
  f.gt_phase_local = read_raw_grid(dir / "gt_phase_local.f64");
  f.gt_phase_global_h = read_raw_grid(dir / "gt_phase_global_h.f64");
  f.gt_phase_global_v = read_raw_grid(dir / "gt_phase_global_v.f64");
  return f;
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
  std::string subcommand;
  std::string config_path;
  std::string config_hash;
  uint64_t seed = 0;
  std::string output_dir;
  std::string version = "1.0.0";
  std::string timestamp;
};

inline void write_manifest(const fs::path& dir, const RunManifest& m, const Json& resolved) {
  fs::create_directories(dir);
  Json j = {{"schema", "manifest-v1"}, {"subcommand", m.subcommand},
            {"config_path", m.config_path}, {"config_hash", m.config_hash},
            {"seed", m.seed}, {"output_dir", m.output_dir},
            {"version", m.version}, {"timestamp", m.timestamp}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write manifest in " + dir.string());
  f << j.dump(2) << "\n";
  std::ofstream cf(dir / "config.json");
  if (!cf) throw IoError("cannot write config snapshot in " + dir.string());
  cf << resolved.dump(2) << "\n";
}

}  // namespace projref
