#include "lttr/heads.hpp"

#include <cmath>

namespace lttr {

namespace {

HeadStack make_stack(ParamStore& ps, const std::string& prefix, int64_t F,
                     int64_t c_out, Rng& rng) {
  HeadStack s;
  for (int i = 0; i < 4; ++i) {
    const int64_t co = i == 3 ? c_out : F;
    const std::string pre = prefix + "." + std::to_string(i);
    s.w[i] = make_weight(ps, pre + ".w", {3, 3, F, co}, 9 * F, rng);
    s.b[i] = make_bias(ps, pre + ".b", co);
  }
  return s;
}

Tensor run_stack(const Tensor& x, const HeadStack& s) {
  Tensor h = x;
  for (int i = 0; i < 3; ++i) h = relu(conv2d(h, s.w[i], s.b[i], 1, 1));
  return conv2d(h, s.w[3], s.b[3], 1, 1);
}

}  // namespace

HeadsParams make_heads(ParamStore& ps, int64_t F, Rng& rng) {
  HeadsParams p;
  p.heat = make_stack(ps, "heads.heat", F, 1, rng);
  p.off = make_stack(ps, "heads.off", F, 2, rng);
  p.z = make_stack(ps, "heads.z", F, 1, rng);
  p.ori = make_stack(ps, "heads.ori", F, 2, rng);
  return p;
}

PredictionMaps heads_forward(const Tensor& bev, const HeadsParams& p) {
  if (bev.rank() != 3) throw ShapeError("heads: expected (H, W, F) input");
  PredictionMaps out;
  out.heat = sigmoid(run_stack(bev, p.heat));
  out.off = run_stack(bev, p.off);
  out.z = run_stack(bev, p.z);
  out.ori = run_stack(bev, p.ori);
  return out;
}

MapGeometry map_geometry(const FeatureMap& m) {
  MapGeometry g;
  g.h = m.tensor.shape()[0];
  g.w = m.tensor.shape()[1];
  g.stride_m = m.stride_m;
  g.origin = m.origin;
  return g;
}

TargetMaps build_targets(const Box3D& label, const MapGeometry& geo) {
  TargetMaps t;
  const double fx = (label.center[0] - geo.origin[0]) / geo.stride_m;
  const double fy = (label.center[1] - geo.origin[1]) / geo.stride_m;
  const int64_t cx = static_cast<int64_t>(std::floor(fx));
  const int64_t cy = static_cast<int64_t>(std::floor(fy));
  if (cx < 0 || cx >= geo.h || cy < 0 || cy >= geo.w) {
    t.valid = false;
    return t;
  }
  t.valid = true;
  t.center_cell = {cx, cy};
  t.offset = {fx - static_cast<double>(cx), fy - static_cast<double>(cy)};
  t.z = label.center[2];
  t.ori = {std::sin(label.yaw), std::cos(label.yaw)};

  std::vector<double> h(geo.h * geo.w, 0.0);
  for (int64_t i = 0; i < geo.h; ++i)
    for (int64_t j = 0; j < geo.w; ++j) {
      const double dx = static_cast<double>(i - cx);
      const double dy = static_cast<double>(j - cy);
      const double d = std::sqrt(dx * dx + dy * dy);
      double v;
      if (d == 0.0)
        v = 1.0;
      else if (d == 1.0)
        v = 0.8;
      else
        v = 1.0 / d;
      h[i * geo.w + j] = v;
    }
  t.heat = Tensor::from({geo.h, geo.w, 1}, std::move(h));
  return t;
}

Tensor focal_loss(const Tensor& pred_heat, const Tensor& target_heat,
                  double alpha, double beta) {
  if (pred_heat.shape() != target_heat.shape())
    throw ShapeError("focal_loss: prediction " + shape_str(pred_heat.shape()) +
                     " vs target " + shape_str(target_heat.shape()));
  const std::vector<double>& tv = target_heat.value();
  int64_t n_pos = 0;
  std::vector<double> pos_mask(tv.size()), neg_w(tv.size());
  for (size_t i = 0; i < tv.size(); ++i) {
    if (tv[i] == 1.0) {
      pos_mask[i] = 1.0;
      neg_w[i] = 0.0;
      ++n_pos;
    } else {
      pos_mask[i] = 0.0;
      neg_w[i] = std::pow(1.0 - tv[i], beta);
    }
  }
  if (n_pos == 0) throw NumericError("focal_loss: target has no positive cell");

  Tensor p = clamp(pred_heat, 1e-6, 1.0 - 1e-6);
  Tensor one_minus_p = mul_scalar(add_scalar(p, -1.0), -1.0);
  Tensor pos = mul(Tensor::from(target_heat.shape(), std::move(pos_mask)),
                   mul(pow_scalar(one_minus_p, alpha), log_op(p)));
  Tensor neg = mul(Tensor::from(target_heat.shape(), std::move(neg_w)),
                   mul(pow_scalar(p, alpha), log_op(one_minus_p)));
  Tensor s = add(sum_all(pos), sum_all(neg));
  return mul_scalar(s, -1.0 / static_cast<double>(n_pos));
}

Tensor l1_loss_at(const Tensor& pred, const std::array<int64_t, 2>& cell,
                  const std::vector<double>& target) {
  if (pred.rank() != 3)
    throw ShapeError("l1_loss_at: expected (H, W, C) prediction");
  const int64_t c = pred.shape()[2];
  if (static_cast<int64_t>(target.size()) != c)
    throw ShapeError("l1_loss_at: " + std::to_string(target.size()) +
                     " targets for " + std::to_string(c) + " channels");
  Tensor row = reshape(slice(slice(pred, 0, cell[0], 1), 1, cell[1], 1), {c});
  Tensor t = Tensor::from({c}, std::vector<double>(target));
  return mean_all(abs_op(sub(row, t)));
}

Tensor total_loss(const Tensor& heat, const Tensor& off, const Tensor& z,
                  const Tensor& ori, const LossWeights& w) {
  Tensor out = add(heat, mul_scalar(off, w.lambda_off));
  out = add(out, mul_scalar(z, w.lambda_z));
  return add(out, mul_scalar(ori, w.lambda_ori));
}

LossParts compute_loss(const PredictionMaps& preds, const TargetMaps& targets,
                       const LossWeights& w) {
  if (!targets.valid)
    throw NumericError("compute_loss: target center outside the map");
  LossParts parts;
  parts.heat = focal_loss(preds.heat, targets.heat, w.alpha, w.beta);
  parts.off = l1_loss_at(preds.off, targets.center_cell,
                         {targets.offset[0], targets.offset[1]});
  parts.z = l1_loss_at(preds.z, targets.center_cell, {targets.z});
  parts.ori = l1_loss_at(preds.ori, targets.center_cell,
                         {targets.ori[0], targets.ori[1]});
  parts.total = total_loss(parts.heat, parts.off, parts.z, parts.ori, w);
  return parts;
}

DecodedBox decode_box(const PredictionMaps& preds, const MapGeometry& geo,
                      const Vec3& known_size) {
  const std::vector<double>& h = preds.heat.value();
  int64_t best = 0;
  for (size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[best]) best = static_cast<int64_t>(i);
  const int64_t cx = best / geo.w;
  const int64_t cy = best % geo.w;

  DecodedBox out;
  out.confidence = h[best];
  const double offx = preds.off.at({cx, cy, 0});
  const double offy = preds.off.at({cx, cy, 1});
  out.box.center = {geo.origin[0] + (static_cast<double>(cx) + offx) * geo.stride_m,
                    geo.origin[1] + (static_cast<double>(cy) + offy) * geo.stride_m,
                    preds.z.at({cx, cy, 0})};
  out.box.size = known_size;
  out.box.yaw = std::atan2(preds.ori.at({cx, cy, 0}), preds.ori.at({cx, cy, 1}));
  return out;
}

}  // namespace lttr
