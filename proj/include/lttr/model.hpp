#pragma once

#include <optional>
#include <string>

#include "lttr/backbone.hpp"
#include "lttr/fusion.hpp"
#include "lttr/heads.hpp"
#include "lttr/scene.hpp"
#include "lttr/transformer.hpp"

namespace lttr {

enum class Variant {
  baseline,            // correlation only, no transformer
  encoder_only,        // region weighting from encoder tokens
  encoder_decoder_max, // decoder sees only the template class token
  encoder_decoder,
};

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

struct ModelConfig {
  VoxelConfig voxel;
  BackboneConfig backbone;
  TransformerConfig tf;
  Variant variant = Variant::encoder_decoder;
};

struct ForwardTrace {
  EncodeTrace enc_s, enc_t;
  DecodeTrace dec;
  Tensor weights_s, weights_t;
  Tensor sim;
  PredictionMaps preds;
};

// Owns every learnable tensor; the construction order fixes the
// checkpoint layout. Only the parameters the configured variant can
// reach are created, so a baseline checkpoint carries no transformer.
class LttrModel {
 public:
  LttrModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  MapGeometry geometry() const;

  bool supports(Variant v) const;
  // v may be any variant the stored parameters cover; it gates the
  // transformer path at run time.
  PredictionMaps forward(const VoxelGrid& search, const VoxelGrid& tmpl,
                         Variant v, ForwardTrace* trace = nullptr);

 private:
  ModelConfig cfg_;
  ParamStore ps_;
  BackboneParams backbone_;
  std::optional<EncoderParams> encoder_;
  std::optional<DecoderParams> decoder_;
  std::optional<Linear> fusion_fc_;
  HeadsParams heads_;
};

}  // namespace lttr
