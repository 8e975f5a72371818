#pragma once

#include <vector>

#include "lttr/nn.hpp"
#include "lttr/scene.hpp"

namespace lttr {

struct BackboneConfig {
  std::vector<int64_t> channels_3d{8, 16, 32};  // three stride-2 stages
  std::vector<int64_t> channels_2d{32, 32};
  int64_t feature_width() const { return channels_2d.back(); }
};

struct FeatureMap {
  Tensor tensor;    // (W/8, L/8, F)
  double stride_m;  // meters per BEV cell, 8 * voxel edge
  Vec2 origin;      // crop coordinates of the map's min corner
};

struct ConvBlock {
  Tensor w;
  Tensor b;
  LayerNormParams ln;  // per-position normalization over channels
};

struct BackboneParams {
  std::vector<ConvBlock> blocks3d;
  std::vector<ConvBlock> blocks2d;
};

// grid_z is the voxel grid's vertical extent in cells; after 8x
// downsampling the remaining z slabs fold into the 2D input channels.
BackboneParams make_backbone(ParamStore& ps, const BackboneConfig& cfg,
                             int64_t c_in, int64_t grid_z, Rng& rng);

FeatureMap extract(const VoxelGrid& grid, const BackboneParams& params);
std::pair<FeatureMap, FeatureMap> siamese_extract(const VoxelGrid& search,
                                                  const VoxelGrid& tmpl,
                                                  const BackboneParams& params);

}  // namespace lttr
