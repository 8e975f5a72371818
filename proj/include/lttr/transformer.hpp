#pragma once

#include <vector>

#include "lttr/backbone.hpp"
#include "lttr/nn.hpp"

namespace lttr {

struct TransformerConfig {
  int64_t R = 4;       // region side, BEV cells
  int64_t Rp = 2;      // point-grid side inside a region
  int64_t D = 64;      // region token width
  int64_t S = 64;      // point token width
  int64_t heads = 2;
  int64_t layers = 1;
};

// Eq-5 scaled dot-product attention; d_k taken from Q's column count.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct MhaParams {
  Linear q, k, v, o;
  int64_t heads = 1;
};
MhaParams make_mha(ParamStore& ps, const std::string& prefix, int64_t dim,
                   int64_t heads, Rng& rng);
// attn, when given, receives one (n_q, n_k) softmax matrix per head.
Tensor mha(const MhaParams& p, const Tensor& q_in, const Tensor& k_in,
           const Tensor& v_in, std::vector<Tensor>* attn = nullptr);

struct FfnParams {
  Linear fc1, fc2;  // hidden = 2x model width
};
FfnParams make_ffn(ParamStore& ps, const std::string& prefix, int64_t dim,
                   Rng& rng);
Tensor ffn(const FfnParams& p, const Tensor& x);

// Row-major regions; each row holds one region's R'xR' sub-block tokens
// flattened to (R/R')^2 * F values, before any projection.
Tensor partition_regions(const Tensor& bev, int64_t R, int64_t Rp);

// partition + shared linear projection to S channels: (N, R'^2, S).
Tensor split_regions(const Tensor& bev, int64_t R, int64_t Rp,
                     const Linear& proj);

struct EncoderLayerParams {
  LayerNormParams ln_pt_attn, ln_pt_ffn;
  MhaParams mha_pt;
  FfnParams ffn_pt;
  LayerNormParams ln_rg_attn, ln_rg_ffn;
  MhaParams mha_rg;
  FfnParams ffn_rg;
};

struct EncoderParams {
  TransformerConfig cfg;
  int64_t n_regions = 0;  // N
  Linear input_proj;      // (R/R')^2*F -> S, shared by all sub-blocks
  Linear phi;             // R'^2*S -> D, shared across layers
  Tensor g0;              // (N+1, D) learnable region memories, class at row 0
  Tensor e_region;        // (N+1, D)
  Tensor e_point;         // (R'^2, S)
  std::vector<EncoderLayerParams> layers;
};

EncoderParams make_encoder(ParamStore& ps, const TransformerConfig& cfg,
                           int64_t bev_h, int64_t bev_w, int64_t F, Rng& rng);

struct EncodeTrace {
  // Per layer: region-level softmax per head; point-level softmax per
  // region per head (region-major).
  std::vector<std::vector<Tensor>> point_attn;
  std::vector<std::vector<Tensor>> region_attn;
};

// Returns G of shape (N+1, D); the class token stays at row 0.
Tensor encode(const FeatureMap& m, const EncoderParams& p,
              EncodeTrace* trace = nullptr);

struct DecoderParams {
  int64_t heads = 1;
  LayerNormParams ln_self, ln_q, ln_kv, ln_ffn;
  MhaParams mha_self, mha_cross;
  FfnParams ffn;
};

DecoderParams make_decoder(ParamStore& ps, int64_t D, int64_t heads, Rng& rng);

struct DecodeTrace {
  std::vector<Tensor> self_attn;
  std::vector<Tensor> cross_attn;
};

// g_s: (N, D) search region tokens, class stripped; g_t: (N, D) template
// tokens or a single (1, D) row for the max-decoder variant.
Tensor decode(const Tensor& g_s, const Tensor& g_t, const DecoderParams& p,
              DecodeTrace* trace = nullptr);

}  // namespace lttr
