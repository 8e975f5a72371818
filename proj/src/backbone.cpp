#include "lttr/backbone.hpp"

namespace lttr {

BackboneParams make_backbone(ParamStore& ps, const BackboneConfig& cfg,
                             int64_t c_in, int64_t grid_z, Rng& rng) {
  if (cfg.channels_3d.size() != 3)
    throw ConfigError("backbone needs exactly three 3D stages (8x total)");
  if (cfg.channels_2d.empty())
    throw ConfigError("backbone needs at least one 2D stage");
  if (grid_z % 8 != 0)
    throw ConfigError("grid z extent must be divisible by 8");

  BackboneParams p;
  int64_t ci = c_in;
  for (size_t i = 0; i < cfg.channels_3d.size(); ++i) {
    const int64_t co = cfg.channels_3d[i];
    const std::string pre = "backbone.c3." + std::to_string(i);
    ConvBlock b;
    b.w = make_weight(ps, pre + ".w", {3, 3, 3, ci, co}, 27 * ci, rng);
    b.b = make_bias(ps, pre + ".b", co);
    b.ln = make_layer_norm(ps, pre + ".ln", co);
    p.blocks3d.push_back(std::move(b));
    ci = co;
  }
  ci = ci * (grid_z / 8);  // z slabs fold into channels
  for (size_t i = 0; i < cfg.channels_2d.size(); ++i) {
    const int64_t co = cfg.channels_2d[i];
    const std::string pre = "backbone.c2." + std::to_string(i);
    ConvBlock b;
    b.w = make_weight(ps, pre + ".w", {3, 3, ci, co}, 9 * ci, rng);
    b.b = make_bias(ps, pre + ".b", co);
    b.ln = make_layer_norm(ps, pre + ".ln", co);
    p.blocks2d.push_back(std::move(b));
    ci = co;
  }
  return p;
}

FeatureMap extract(const VoxelGrid& grid, const BackboneParams& params) {
  for (int i = 0; i < 3; ++i)
    if (grid.extents[i] % 8 != 0)
      throw ConfigError("grid extent " + std::to_string(grid.extents[i]) +
                        " on axis " + std::to_string(i) +
                        " is not divisible by 8");
  if (grid.voxel_size[0] != grid.voxel_size[1])
    throw ConfigError("BEV stride requires square xy voxels");

  Tensor x = grid.features;
  for (const ConvBlock& b : params.blocks3d)
    x = relu(apply_layer_norm(b.ln, conv3d(x, b.w, b.b, 2, 1)));

  const Shape& s = x.shape();  // (W/8, L/8, Z/8, C)
  Tensor bev = reshape(x, {s[0], s[1], s[2] * s[3]});
  for (const ConvBlock& b : params.blocks2d)
    bev = relu(apply_layer_norm(b.ln, conv2d(bev, b.w, b.b, 1, 1)));

  FeatureMap m;
  m.tensor = bev;
  m.stride_m = 8.0 * grid.voxel_size[0];
  m.origin = {grid.origin[0], grid.origin[1]};
  return m;
}

std::pair<FeatureMap, FeatureMap> siamese_extract(const VoxelGrid& search,
                                                  const VoxelGrid& tmpl,
                                                  const BackboneParams& params) {
  if (search.extents != tmpl.extents || search.voxel_size != tmpl.voxel_size)
    throw ConfigError("siamese branches must share grid geometry");
  return {extract(search, params), extract(tmpl, params)};
}

}  // namespace lttr
