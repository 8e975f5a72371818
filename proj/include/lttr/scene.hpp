#pragma once

#include <map>
#include <string>
#include <vector>

#include "lttr/geometry.hpp"
#include "lttr/nn.hpp"
#include "lttr/tensor.hpp"

namespace lttr {

struct Frame {
  PointCloud cloud;
  Box3D gt_box;
};

struct Sequence {
  std::vector<Frame> frames;
  Vec3 object_size{1.0, 1.0, 1.0};
};

struct VoxelConfig {
  Vec3 range_min{-3.2, -3.2, -3.0};
  Vec3 range_max{3.2, 3.2, 1.0};
  Vec3 voxel_size{0.1, 0.1, 0.25};
  int64_t max_points = 5;

  std::array<int64_t, 3> extents() const;  // throws unless size divides range
};

struct VoxelGrid {
  std::array<int64_t, 3> extents{0, 0, 0};
  Vec3 voxel_size{0, 0, 0};
  Vec3 origin{0, 0, 0};
  // Ordered cell map keeps downstream RNG consumption deterministic.
  std::map<std::array<int64_t, 3>, std::vector<Vec3>> voxels;
  Tensor features;  // (W, L, H, 4): mean xyz offset from cell center, count/max
};

// Rigid box-shell object on a smooth random walk (per-frame translation
// <= 0.4 m, yaw delta <= 0.15 rad), uniform clutter, per-frame dropout.
Sequence generate_sequence(uint64_t seed, int64_t n_frames,
                           double clutter_density, int64_t point_budget);

// The crop's pose in world coordinates; local axes are yaw-aligned to ref.
struct CropFrame {
  Vec3 center{0, 0, 0};
  double yaw = 0.0;
};

Vec3 crop_to_world(const CropFrame& f, const Vec3& p_local);
Vec3 world_to_crop(const CropFrame& f, const Vec3& p_world);
Box3D crop_to_world_box(const CropFrame& f, const Box3D& local_box);

struct Canonical {
  PointCloud cloud;  // crop-local, range-filtered
  Box3D label;       // gt box in the crop frame
  CropFrame crop;
};

// train_mode shifts the crop center by U(-0.8, 0.8) m per axis in the
// ref-aligned local (x,y) plane before canonicalizing; the label moves
// opposite the shift.
Canonical canonicalize(const Frame& frame, const Box3D& ref_box,
                       const VoxelConfig& range, Rng& rng, bool train_mode);

// Points inside gt_box, expressed in the box frame (heading on +x).
// May be empty; callers skip such samples.
PointCloud make_template(const Frame& frame, const Box3D& gt_box);

VoxelGrid voxelize(const PointCloud& cloud, const VoxelConfig& cfg, Rng& rng);

// JSON-lines, one frame per line:
//   {"points": [[x,y,z], ...], "box": {"center": [...], "size": [...], "yaw": r}}
void save_sequence(const Sequence& seq, const std::string& path);
Sequence load_sequence(const std::string& path);

}  // namespace lttr
