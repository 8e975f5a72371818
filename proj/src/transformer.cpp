#include "lttr/transformer.hpp"

#include <cmath>

namespace lttr {

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ShapeError("attention: expected 2-D Q, K, V");
  if (q.shape()[1] != k.shape()[1])
    throw ShapeError("attention: Q/K width mismatch, " + shape_str(q.shape()) +
                     " vs " + shape_str(k.shape()));
  if (k.shape()[0] != v.shape()[0])
    throw ShapeError("attention: K/V row mismatch, " + shape_str(k.shape()) +
                     " vs " + shape_str(v.shape()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  Tensor logits = mul_scalar(matmul(q, transpose(k)), scale);
  return matmul(softmax(logits, 1), v);
}

MhaParams make_mha(ParamStore& ps, const std::string& prefix, int64_t dim,
                   int64_t heads, Rng& rng) {
  if (heads <= 0 || dim % heads != 0)
    throw ConfigError("mha: width " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  MhaParams p;
  p.heads = heads;
  p.q = make_linear(ps, prefix + ".q", dim, dim, rng);
  p.k = make_linear(ps, prefix + ".k", dim, dim, rng);
  p.v = make_linear(ps, prefix + ".v", dim, dim, rng);
  p.o = make_linear(ps, prefix + ".o", dim, dim, rng);
  return p;
}

Tensor mha(const MhaParams& p, const Tensor& q_in, const Tensor& k_in,
           const Tensor& v_in, std::vector<Tensor>* attn) {
  const int64_t dim = p.q.w.shape()[0];
  if (q_in.rank() != 2 || q_in.shape()[1] != dim || k_in.shape()[1] != dim ||
      v_in.shape()[1] != dim)
    throw ShapeError("mha: token width must be " + std::to_string(dim));
  if (k_in.shape()[0] != v_in.shape()[0])
    throw ShapeError("mha: K/V row mismatch");
  const int64_t dh = dim / p.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = apply_linear(p.q, q_in);
  Tensor k = apply_linear(p.k, k_in);
  Tensor v = apply_linear(p.v, v_in);

  std::vector<Tensor> heads;
  for (int64_t h = 0; h < p.heads; ++h) {
    Tensor qh = slice(q, 1, h * dh, dh);
    Tensor kh = slice(k, 1, h * dh, dh);
    Tensor vh = slice(v, 1, h * dh, dh);
    Tensor a = softmax(mul_scalar(matmul(qh, transpose(kh)), scale), 1);
    if (attn) attn->push_back(a);
    heads.push_back(matmul(a, vh));
  }
  return apply_linear(p.o, concat(heads, 1));
}

FfnParams make_ffn(ParamStore& ps, const std::string& prefix, int64_t dim,
                   Rng& rng) {
  FfnParams p;
  p.fc1 = make_linear(ps, prefix + ".fc1", dim, 2 * dim, rng);
  p.fc2 = make_linear(ps, prefix + ".fc2", 2 * dim, dim, rng);
  return p;
}

Tensor ffn(const FfnParams& p, const Tensor& x) {
  return apply_linear(p.fc2, relu(apply_linear(p.fc1, x)));
}

Tensor partition_regions(const Tensor& bev, int64_t R, int64_t Rp) {
  if (bev.rank() != 3)
    throw ShapeError("partition_regions: expected (H, W, F) map");
  const int64_t h = bev.shape()[0], w = bev.shape()[1];
  if (R <= 0 || Rp <= 0 || h % R != 0 || w % R != 0 || R % Rp != 0)
    throw ConfigError("partition_regions: R=" + std::to_string(R) + ", R'=" +
                      std::to_string(Rp) + " do not tile a " + std::to_string(h) +
                      "x" + std::to_string(w) + " map");
  const int64_t f = bev.shape()[2];
  const int64_t sub = R / Rp;  // cells per sub-block side
  Tensor regions = unfold_blocks(bev, R, R);  // (N, R*R*F)
  const int64_t n = regions.shape()[0];
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (int64_t r = 0; r < n; ++r) {
    Tensor block = reshape(slice(regions, 0, r, 1), {R, R, f});
    Tensor tokens = unfold_blocks(block, sub, sub);  // (R'^2, sub*sub*F)
    rows.push_back(reshape(tokens, {1, Rp * Rp, sub * sub * f}));
  }
  return concat(rows, 0);
}

Tensor split_regions(const Tensor& bev, int64_t R, int64_t Rp,
                     const Linear& proj) {
  return apply_linear(proj, partition_regions(bev, R, Rp));
}

EncoderParams make_encoder(ParamStore& ps, const TransformerConfig& cfg,
                           int64_t bev_h, int64_t bev_w, int64_t F, Rng& rng) {
  if (cfg.layers <= 0) throw ConfigError("encoder: layers must be positive");
  if (cfg.D % cfg.heads != 0 || cfg.S % cfg.heads != 0)
    throw ConfigError("encoder: D and S must be divisible by heads");
  if (cfg.R <= 0 || cfg.Rp <= 0 || cfg.R % cfg.Rp != 0 || bev_h % cfg.R != 0 ||
      bev_w % cfg.R != 0)
    throw ConfigError("encoder: region geometry does not tile the BEV map");

  EncoderParams p;
  p.cfg = cfg;
  p.n_regions = (bev_h / cfg.R) * (bev_w / cfg.R);
  const int64_t sub = cfg.R / cfg.Rp;
  const int64_t np = cfg.Rp * cfg.Rp;

  p.input_proj = make_linear(ps, "encoder.input_proj", sub * sub * F, cfg.S, rng);
  p.phi = make_linear(ps, "encoder.phi", np * cfg.S, cfg.D, rng);
  p.g0 = make_embedding(ps, "encoder.g0", {p.n_regions + 1, cfg.D}, rng);
  p.e_region = make_embedding(ps, "encoder.e_region", {p.n_regions + 1, cfg.D}, rng);
  p.e_point = make_embedding(ps, "encoder.e_point", {np, cfg.S}, rng);

  for (int64_t j = 0; j < cfg.layers; ++j) {
    const std::string pre = "encoder.layer" + std::to_string(j);
    EncoderLayerParams l;
    l.ln_pt_attn = make_layer_norm(ps, pre + ".pt_attn_ln", cfg.S);
    l.mha_pt = make_mha(ps, pre + ".pt_attn", cfg.S, cfg.heads, rng);
    l.ln_pt_ffn = make_layer_norm(ps, pre + ".pt_ffn_ln", cfg.S);
    l.ffn_pt = make_ffn(ps, pre + ".pt_ffn", cfg.S, rng);
    l.ln_rg_attn = make_layer_norm(ps, pre + ".rg_attn_ln", cfg.D);
    l.mha_rg = make_mha(ps, pre + ".rg_attn", cfg.D, cfg.heads, rng);
    l.ln_rg_ffn = make_layer_norm(ps, pre + ".rg_ffn_ln", cfg.D);
    l.ffn_rg = make_ffn(ps, pre + ".rg_ffn", cfg.D, rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

Tensor encode(const FeatureMap& m, const EncoderParams& p, EncodeTrace* trace) {
  const TransformerConfig& c = p.cfg;
  Tensor u = split_regions(m.tensor, c.R, c.Rp, p.input_proj);  // (N, N', S)
  const int64_t n = u.shape()[0];
  if (n != p.n_regions)
    throw ConfigError("encode: map yields " + std::to_string(n) +
                      " regions, parameters built for " +
                      std::to_string(p.n_regions));
  const int64_t np = u.shape()[1];

  Tensor g = p.g0;
  for (const EncoderLayerParams& l : p.layers) {
    std::vector<Tensor>* pt_attn = nullptr;
    std::vector<Tensor>* rg_attn = nullptr;
    if (trace) {
      trace->point_attn.emplace_back();
      trace->region_attn.emplace_back();
      pt_attn = &trace->point_attn.back();
      rg_attn = &trace->region_attn.back();
    }

    // (a) point level, per region: position embedding, then pre-norm
    // MHA and FFN with residuals.
    std::vector<Tensor> updated;
    updated.reserve(n);
    for (int64_t r = 0; r < n; ++r) {
      Tensor ur = reshape(slice(u, 0, r, 1), {np, c.S});
      ur = add(ur, p.e_point);
      Tensor nrm = apply_layer_norm(l.ln_pt_attn, ur);
      ur = add(ur, mha(l.mha_pt, nrm, nrm, nrm, pt_attn));
      ur = add(ur, ffn(l.ffn_pt, apply_layer_norm(l.ln_pt_ffn, ur)));
      updated.push_back(reshape(ur, {1, np, c.S}));
    }
    u = concat(updated, 0);

    // (b) fold the refreshed point tokens into the region memories; the
    // class row has no spatial counterpart and receives nothing.
    Tensor flat = reshape(u, {n, np * c.S});
    Tensor g_class = slice(g, 0, 0, 1);
    Tensor g_rest = add(slice(g, 0, 1, n), apply_linear(p.phi, flat));
    g = concat({g_class, g_rest}, 0);

    // (c) region level across all N+1 tokens.
    g = add(g, p.e_region);
    Tensor nrm = apply_layer_norm(l.ln_rg_attn, g);
    g = add(g, mha(l.mha_rg, nrm, nrm, nrm, rg_attn));
    g = add(g, ffn(l.ffn_rg, apply_layer_norm(l.ln_rg_ffn, g)));
  }
  return g;
}

DecoderParams make_decoder(ParamStore& ps, int64_t D, int64_t heads, Rng& rng) {
  DecoderParams p;
  p.heads = heads;
  p.ln_self = make_layer_norm(ps, "decoder.self_ln", D);
  p.mha_self = make_mha(ps, "decoder.self", D, heads, rng);
  p.ln_q = make_layer_norm(ps, "decoder.cross_q_ln", D);
  p.ln_kv = make_layer_norm(ps, "decoder.cross_kv_ln", D);
  p.mha_cross = make_mha(ps, "decoder.cross", D, heads, rng);
  p.ln_ffn = make_layer_norm(ps, "decoder.ffn_ln", D);
  p.ffn = make_ffn(ps, "decoder.ffn", D, rng);
  return p;
}

Tensor decode(const Tensor& g_s, const Tensor& g_t, const DecoderParams& p,
              DecodeTrace* trace) {
  if (g_s.rank() != 2 || g_t.rank() != 2 || g_s.shape()[1] != g_t.shape()[1])
    throw ShapeError("decode: token widths disagree, " + shape_str(g_s.shape()) +
                     " vs " + shape_str(g_t.shape()));
  Tensor nrm = apply_layer_norm(p.ln_self, g_s);
  Tensor ghat = add(g_s, mha(p.mha_self, nrm, nrm, nrm,
                             trace ? &trace->self_attn : nullptr));
  Tensor qn = apply_layer_norm(p.ln_q, ghat);
  Tensor kvn = apply_layer_norm(p.ln_kv, g_t);
  Tensor gtil = add(ghat, mha(p.mha_cross, qn, kvn, kvn,
                              trace ? &trace->cross_attn : nullptr));
  return add(gtil, ffn(p.ffn, apply_layer_norm(p.ln_ffn, gtil)));
}

}  // namespace lttr
