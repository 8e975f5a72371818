#include "lttr/fusion.hpp"

namespace lttr {

Tensor region_attention(const Tensor& g, const Linear& proj) {
  if (g.rank() != 2)
    throw ShapeError("region_attention: expected (N, D) tokens");
  return apply_linear(proj, g);
}

Tensor apply_region_weights(const Tensor& bev, const Tensor& w, int64_t R) {
  if (bev.rank() != 3)
    throw ShapeError("apply_region_weights: expected (H, W, F) map");
  const int64_t h = bev.shape()[0], wd = bev.shape()[1], f = bev.shape()[2];
  if (R <= 0 || h % R != 0 || wd % R != 0)
    throw ConfigError("apply_region_weights: R=" + std::to_string(R) +
                      " does not tile " + shape_str(bev.shape()));
  const int64_t n = (h / R) * (wd / R);
  if (w.numel() != n)
    throw ConfigError("apply_region_weights: " + std::to_string(w.numel()) +
                      " weights for " + std::to_string(n) + " regions");
  Tensor rows = unfold_blocks(bev, R, R);
  return fold_blocks(scale_rows(rows, w), h, wd, f, R, R);
}

Tensor depthwise_xcorr(const Tensor& m_s, const Tensor& m_t) {
  if (m_s.rank() != 3 || m_s.shape() != m_t.shape())
    throw ShapeError("depthwise_xcorr: shape mismatch, " +
                     shape_str(m_s.shape()) + " vs " + shape_str(m_t.shape()));
  const int64_t f = m_s.shape()[2];
  Tensor prod = mul(m_s, m_t);
  Tensor summed = sum_axis(reshape(prod, {m_s.numel() / f, f}), 0);
  return reshape(summed, {1, 1, f});
}

Tensor fuse(const Tensor& m_s, const Tensor& sim) {
  if (m_s.rank() != 3 || sim.numel() != m_s.shape()[2])
    throw ShapeError("fuse: channel mismatch, " + shape_str(m_s.shape()) +
                     " vs " + shape_str(sim.shape()));
  return mul(m_s, reshape(sim, {m_s.shape()[2]}));
}

}  // namespace lttr
