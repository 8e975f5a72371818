#pragma once

#include <array>

#include "lttr/backbone.hpp"
#include "lttr/geometry.hpp"
#include "lttr/nn.hpp"

namespace lttr {

struct HeadStack {
  std::array<Tensor, 4> w;
  std::array<Tensor, 4> b;
};

struct HeadsParams {
  HeadStack heat;  // 1 channel, sigmoid
  HeadStack off;   // 2 channels, cell fractions
  HeadStack z;     // 1 channel, meters
  HeadStack ori;   // 2 channels, (sin, cos)
};

HeadsParams make_heads(ParamStore& ps, int64_t F, Rng& rng);

struct PredictionMaps {
  Tensor heat;  // (H, W, 1), values in (0, 1)
  Tensor off;   // (H, W, 2)
  Tensor z;     // (H, W, 1)
  Tensor ori;   // (H, W, 2)
};

PredictionMaps heads_forward(const Tensor& bev, const HeadsParams& p);

struct MapGeometry {
  int64_t h = 0, w = 0;
  double stride_m = 0.0;
  Vec2 origin{0.0, 0.0};
};
MapGeometry map_geometry(const FeatureMap& m);

struct TargetMaps {
  Tensor heat;  // (H, W, 1) constants
  std::array<int64_t, 2> center_cell{0, 0};
  Vec2 offset{0.0, 0.0};  // components in [0, 1)
  double z = 0.0;
  Vec2 ori{0.0, 1.0};  // (sin, cos)
  bool valid = false;  // false: center outside the map, skip the sample
};

// H = 1 at the center cell, 0.8 at cell distance exactly 1, else 1/d;
// d is the integer-grid Euclidean distance between cells.
TargetMaps build_targets(const Box3D& label, const MapGeometry& geo);

// Penalty-reduced focal loss, averaged over positive cells (one here);
// predictions are clamped to [1e-6, 1-1e-6] before the logs.
Tensor focal_loss(const Tensor& pred_heat, const Tensor& target_heat,
                  double alpha, double beta);

// Mean absolute error over the channel components at one cell.
Tensor l1_loss_at(const Tensor& pred, const std::array<int64_t, 2>& cell,
                  const std::vector<double>& target);

struct LossWeights {
  double alpha = 2.0;
  double beta = 4.0;
  double lambda_off = 1.0;
  double lambda_z = 1.5;
  double lambda_ori = 1.0;
};

Tensor total_loss(const Tensor& heat, const Tensor& off, const Tensor& z,
                  const Tensor& ori, const LossWeights& w);

struct LossParts {
  Tensor total, heat, off, z, ori;
};
LossParts compute_loss(const PredictionMaps& preds, const TargetMaps& targets,
                       const LossWeights& w);

struct DecodedBox {
  Box3D box;  // crop-frame coordinates
  double confidence = 0.0;
};

// Argmax decoding; ties resolve to the lowest row-major cell.
DecodedBox decode_box(const PredictionMaps& preds, const MapGeometry& geo,
                      const Vec3& known_size);

}  // namespace lttr
