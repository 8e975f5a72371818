#include "lttr/model.hpp"

namespace lttr {

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "encoder_only") return Variant::encoder_only;
  if (s == "encoder_decoder_max") return Variant::encoder_decoder_max;
  if (s == "encoder_decoder") return Variant::encoder_decoder;
  throw ConfigError("unknown variant: " + s);
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::encoder_only: return "encoder_only";
    case Variant::encoder_decoder_max: return "encoder_decoder_max";
    case Variant::encoder_decoder: return "encoder_decoder";
  }
  throw ConfigError("unknown variant enum value");
}

LttrModel::LttrModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  const auto ext = cfg_.voxel.extents();
  for (int i = 0; i < 3; ++i)
    if (ext[i] % 8 != 0)
      throw ConfigError("grid extent must be divisible by 8 on axis " +
                        std::to_string(i));
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  backbone_ = make_backbone(ps_, cfg_.backbone, 4, ext[2], rng);
  if (cfg_.variant != Variant::baseline) {
    encoder_ = make_encoder(ps_, cfg_.tf, ext[0] / 8, ext[1] / 8,
                            cfg_.backbone.feature_width(), rng);
    if (cfg_.variant != Variant::encoder_only)
      decoder_ = make_decoder(ps_, cfg_.tf.D, cfg_.tf.heads, rng);
    fusion_fc_ = make_linear(ps_, "fusion.fc", cfg_.tf.D, 1, rng);
  }
  heads_ = make_heads(ps_, cfg_.backbone.feature_width(), rng);
}

MapGeometry LttrModel::geometry() const {
  const auto ext = cfg_.voxel.extents();
  MapGeometry g;
  g.h = ext[0] / 8;
  g.w = ext[1] / 8;
  g.stride_m = 8.0 * cfg_.voxel.voxel_size[0];
  g.origin = {cfg_.voxel.range_min[0], cfg_.voxel.range_min[1]};
  return g;
}

bool LttrModel::supports(Variant v) const {
  switch (v) {
    case Variant::baseline: return true;
    case Variant::encoder_only: return encoder_ && fusion_fc_;
    case Variant::encoder_decoder_max:
    case Variant::encoder_decoder: return encoder_ && decoder_ && fusion_fc_;
  }
  return false;
}

PredictionMaps LttrModel::forward(const VoxelGrid& search, const VoxelGrid& tmpl,
                                  Variant v, ForwardTrace* trace) {
  if (!supports(v))
    throw ConfigError("model has no parameters for variant " +
                      variant_to_string(v));
  auto [ms, mt] = siamese_extract(search, tmpl, backbone_);

  Tensor fused;
  if (v == Variant::baseline) {
    Tensor sim = depthwise_xcorr(ms.tensor, mt.tensor);
    if (trace) trace->sim = sim;
    fused = fuse(ms.tensor, sim);
  } else {
    Tensor gs = encode(ms, *encoder_, trace ? &trace->enc_s : nullptr);
    Tensor gt = encode(mt, *encoder_, trace ? &trace->enc_t : nullptr);
    const int64_t n = encoder_->n_regions;
    Tensor gs_r = slice(gs, 0, 1, n);
    Tensor gt_r = slice(gt, 0, 1, n);

    Tensor gs_out = gs_r;
    if (v == Variant::encoder_decoder)
      gs_out = decode(gs_r, gt_r, *decoder_, trace ? &trace->dec : nullptr);
    else if (v == Variant::encoder_decoder_max)
      gs_out = decode(gs_r, slice(gt, 0, 0, 1), *decoder_,
                      trace ? &trace->dec : nullptr);

    Tensor ws = region_attention(gs_out, *fusion_fc_);
    Tensor wt = region_attention(gt_r, *fusion_fc_);
    if (trace) {
      trace->weights_s = ws;
      trace->weights_t = wt;
    }
    Tensor ms_w = apply_region_weights(ms.tensor, ws, cfg_.tf.R);
    Tensor mt_w = apply_region_weights(mt.tensor, wt, cfg_.tf.R);
    Tensor sim = depthwise_xcorr(ms_w, mt_w);
    if (trace) trace->sim = sim;
    fused = fuse(ms_w, sim);
  }
  PredictionMaps preds = heads_forward(fused, heads_);
  if (trace) trace->preds = preds;
  return preds;
}

}  // namespace lttr
