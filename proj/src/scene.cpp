#include "lttr/scene.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace lttr {

std::array<int64_t, 3> VoxelConfig::extents() const {
  std::array<int64_t, 3> e;
  for (int i = 0; i < 3; ++i) {
    const double span = range_max[i] - range_min[i];
    if (!(span > 0.0) || !(voxel_size[i] > 0.0))
      throw ConfigError("voxel range/size must be positive");
    const double n = span / voxel_size[i];
    const int64_t ni = static_cast<int64_t>(std::llround(n));
    if (ni < 1 || std::fabs(n - static_cast<double>(ni)) > 1e-9)
      throw ConfigError("voxel size does not divide range on axis " +
                        std::to_string(i));
    e[i] = ni;
  }
  return e;
}

namespace {

Vec3 sample_shell_point(const Vec3& size, Rng& rng) {
  const double hx = size[0] * 0.5, hy = size[1] * 0.5, hz = size[2] * 0.5;
  const double ax = size[1] * size[2];
  const double ay = size[0] * size[2];
  const double az = size[0] * size[1];
  const double total = 2.0 * (ax + ay + az);
  double u = rng.uniform(0.0, total);
  const double su = rng.uniform(-1.0, 1.0);  // position along one free axis
  const double sv = rng.uniform(-1.0, 1.0);
  Vec3 p;
  if (u < 2.0 * ax) {
    const double sign = u < ax ? 1.0 : -1.0;
    p = {sign * hx, su * hy, sv * hz};
  } else if (u -= 2.0 * ax; u < 2.0 * ay) {
    const double sign = u < ay ? 1.0 : -1.0;
    p = {su * hx, sign * hy, sv * hz};
  } else {
    const double sign = u - 2.0 * ay < az ? 1.0 : -1.0;
    p = {su * hx, sv * hy, sign * hz};
  }
  // a hair inside the face so closed-interval containment survives the
  // local/world rotation round trip at any pose
  for (double& c : p) c *= 1.0 - 1e-9;
  return p;
}

}  // namespace

Sequence generate_sequence(uint64_t seed, int64_t n_frames,
                           double clutter_density, int64_t point_budget) {
  if (n_frames < 2) throw ConfigError("generate_sequence: n_frames must be >= 2");
  if (point_budget <= 0)
    throw ConfigError("generate_sequence: point_budget must be positive");
  if (clutter_density < 0.0)
    throw ConfigError("generate_sequence: clutter_density must be >= 0");

  Rng rng(seed);
  Sequence seq;
  Box3D box;
  box.size = {rng.uniform(1.2, 2.2), rng.uniform(0.9, 1.5),
              rng.uniform(0.9, 1.6)};
  seq.object_size = box.size;
  box.center = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                rng.uniform(-0.4, 0.4)};
  box.yaw = rng.uniform(-M_PI, M_PI);

  const int64_t n_shell = std::max<int64_t>(16, point_budget / 2);
  std::vector<Vec3> shell(n_shell);
  for (Vec3& p : shell) p = sample_shell_point(box.size, rng);

  const int64_t n_clutter =
      std::min<int64_t>(std::llround(clutter_density * 200.0),
                        std::max<int64_t>(0, point_budget / 2));

  for (int64_t f = 0; f < n_frames; ++f) {
    if (f > 0) {
      // r <= 0.38 plus |dz| <= 0.04 keeps total translation under 0.4 m
      const double r = rng.uniform(0.08, 0.38);
      const double phi = box.yaw + rng.uniform(-0.7, 0.7);
      box.center[0] += r * std::cos(phi);
      box.center[1] += r * std::sin(phi);
      box.center[2] += rng.uniform(-0.04, 0.04);
      box.yaw = wrap_angle(box.yaw + rng.uniform(-0.15, 0.15));
    }
    Frame fr;
    fr.gt_box = box;
    const double keep = rng.uniform(0.55, 0.95);
    bool any = false;
    for (const Vec3& p : shell) {
      if (rng.uniform01() < keep) {
        fr.cloud.push_back(box_to_world(box, p));
        any = true;
      }
    }
    if (!any) fr.cloud.push_back(box_to_world(box, shell[0]));
    for (int64_t i = 0; i < n_clutter; ++i) {
      const Vec3 q{box.center[0] + rng.uniform(-4.0, 4.0),
                   box.center[1] + rng.uniform(-4.0, 4.0),
                   box.center[2] + rng.uniform(-2.0, 2.0)};
      if (box_contains(box, q)) continue;  // object points stay rigid
      fr.cloud.push_back(q);
    }
    seq.frames.push_back(std::move(fr));
  }
  return seq;
}

Vec3 crop_to_world(const CropFrame& f, const Vec3& p) {
  const double c = std::cos(f.yaw), s = std::sin(f.yaw);
  return {f.center[0] + c * p[0] - s * p[1],
          f.center[1] + s * p[0] + c * p[1], f.center[2] + p[2]};
}

Vec3 world_to_crop(const CropFrame& f, const Vec3& p) {
  const double c = std::cos(f.yaw), s = std::sin(f.yaw);
  const double dx = p[0] - f.center[0];
  const double dy = p[1] - f.center[1];
  return {c * dx + s * dy, -s * dx + c * dy, p[2] - f.center[2]};
}

Box3D crop_to_world_box(const CropFrame& f, const Box3D& local_box) {
  Box3D out;
  out.center = crop_to_world(f, local_box.center);
  out.size = local_box.size;
  out.yaw = wrap_angle(local_box.yaw + f.yaw);
  return out;
}

Canonical canonicalize(const Frame& frame, const Box3D& ref_box,
                       const VoxelConfig& range, Rng& rng, bool train_mode) {
  validate_box(ref_box);
  CropFrame crop;
  crop.yaw = ref_box.yaw;
  Vec3 shift{0.0, 0.0, 0.0};
  if (train_mode) {
    shift[0] = rng.uniform(-0.8, 0.8);
    shift[1] = rng.uniform(-0.8, 0.8);
  }
  // Shift lives in the ref-aligned plane, so the label center is exactly
  // -shift when ref_box is the ground truth.
  const double c = std::cos(ref_box.yaw), s = std::sin(ref_box.yaw);
  crop.center = {ref_box.center[0] + c * shift[0] - s * shift[1],
                 ref_box.center[1] + s * shift[0] + c * shift[1],
                 ref_box.center[2]};

  Canonical out;
  out.crop = crop;
  for (const Vec3& p : frame.cloud) {
    const Vec3 q = world_to_crop(crop, p);
    bool in = true;
    for (int i = 0; i < 3; ++i)
      if (q[i] < range.range_min[i] || q[i] >= range.range_max[i]) in = false;
    if (in) out.cloud.push_back(q);
  }
  out.label.center = world_to_crop(crop, frame.gt_box.center);
  out.label.size = frame.gt_box.size;
  out.label.yaw = wrap_angle(frame.gt_box.yaw - crop.yaw);
  return out;
}

PointCloud make_template(const Frame& frame, const Box3D& gt_box) {
  validate_box(gt_box);
  PointCloud out;
  for (const Vec3& p : frame.cloud)
    if (box_contains(gt_box, p)) out.push_back(box_to_local(gt_box, p));
  return out;
}

VoxelGrid voxelize(const PointCloud& cloud, const VoxelConfig& cfg, Rng& rng) {
  if (cfg.max_points <= 0) throw ConfigError("voxelize: max_points must be positive");
  VoxelGrid g;
  g.extents = cfg.extents();
  g.voxel_size = cfg.voxel_size;
  g.origin = cfg.range_min;

  std::map<std::array<int64_t, 3>, std::vector<Vec3>> buckets;
  for (const Vec3& p : cloud) {
    bool in = true;
    std::array<int64_t, 3> cell;
    for (int i = 0; i < 3; ++i) {
      if (p[i] < cfg.range_min[i] || p[i] >= cfg.range_max[i]) {
        in = false;
        break;
      }
      cell[i] = static_cast<int64_t>(
          std::floor((p[i] - cfg.range_min[i]) / cfg.voxel_size[i]));
      if (cell[i] >= g.extents[i]) cell[i] = g.extents[i] - 1;
    }
    if (in) buckets[cell].push_back(p);
  }

  Tensor feat = Tensor::zeros({g.extents[0], g.extents[1], g.extents[2], 4});
  std::vector<double>& data = feat.raw_value();
  const double inv_max = 1.0 / static_cast<double>(cfg.max_points);
  for (auto& [cell, pts] : buckets) {
    std::vector<Vec3> kept = std::move(pts);
    if (static_cast<int64_t>(kept.size()) > cfg.max_points) {
      for (int64_t i = 0; i < cfg.max_points; ++i) {
        const int64_t j =
            i + rng.randint(static_cast<int64_t>(kept.size()) - i);
        std::swap(kept[i], kept[j]);
      }
      kept.resize(cfg.max_points);
    }
    Vec3 mean{0.0, 0.0, 0.0};
    for (const Vec3& p : kept)
      for (int i = 0; i < 3; ++i) mean[i] += p[i];
    for (int i = 0; i < 3; ++i) mean[i] /= static_cast<double>(kept.size());
    const int64_t base =
        ((cell[0] * g.extents[1] + cell[1]) * g.extents[2] + cell[2]) * 4;
    for (int i = 0; i < 3; ++i) {
      const double cell_center =
          g.origin[i] + (static_cast<double>(cell[i]) + 0.5) * g.voxel_size[i];
      data[base + i] = mean[i] - cell_center;
    }
    data[base + 3] = static_cast<double>(kept.size()) * inv_max;
    g.voxels.emplace(cell, std::move(kept));
  }
  g.features = feat;
  return g;
}

void save_sequence(const Sequence& seq, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const Frame& f : seq.frames) {
    nlohmann::json j;
    j["points"] = nlohmann::json::array();
    for (const Vec3& p : f.cloud) j["points"].push_back({p[0], p[1], p[2]});
    j["box"] = {{"center", {f.gt_box.center[0], f.gt_box.center[1],
                            f.gt_box.center[2]}},
                {"size", {f.gt_box.size[0], f.gt_box.size[1], f.gt_box.size[2]}},
                {"yaw", f.gt_box.yaw}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

Sequence load_sequence(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Sequence seq;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Frame f;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      for (const auto& p : j.at("points"))
        f.cloud.push_back({p.at(0).get<double>(), p.at(1).get<double>(),
                           p.at(2).get<double>()});
      const auto& b = j.at("box");
      for (int i = 0; i < 3; ++i) {
        f.gt_box.center[i] = b.at("center").at(i).get<double>();
        f.gt_box.size[i] = b.at("size").at(i).get<double>();
      }
      f.gt_box.yaw = b.at("yaw").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    validate_box(f.gt_box);
    if (seq.frames.empty()) {
      seq.object_size = f.gt_box.size;
    } else if (f.gt_box.size != seq.object_size) {
      throw IoError(path + ": object size changes at frame " +
                    std::to_string(lineno));
    }
    seq.frames.push_back(std::move(f));
  }
  if (seq.frames.empty()) throw IoError(path + ": no frames");
  return seq;
}

}  // namespace lttr
