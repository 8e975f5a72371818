#pragma once

#include "lttr/nn.hpp"

namespace lttr {

// Raw affine projection D -> 1 per region row; deliberately unsquashed.
Tensor region_attention(const Tensor& g, const Linear& proj);  // (N,D) -> (N,1)

// Multiplies every cell/channel of region i by w[i]; regions are the same
// row-major RxR blocks the encoder splits on.
Tensor apply_region_weights(const Tensor& bev, const Tensor& w, int64_t R);

// sim[f] = sum_{x,y} m_s[x,y,f] * m_t[x,y,f], shape (1,1,F).
Tensor depthwise_xcorr(const Tensor& m_s, const Tensor& m_t);

// Per-channel broadcast multiply of sim over m_s.
Tensor fuse(const Tensor& m_s, const Tensor& sim);

}  // namespace lttr
