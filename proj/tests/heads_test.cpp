#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "lttr/heads.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lttr;
using testutil::max_abs_diff;
using testutil::rnd_vec;

static MapGeometry toy_geo(int64_t h, int64_t w, double stride, Vec2 origin) {
  MapGeometry g;
  g.h = h;
  g.w = w;
  g.stride_m = stride;
  g.origin = origin;
  return g;
}

TEST_CASE("head stacks keep the spatial grid and emit their channel counts") {
  ParamStore ps;
  Rng rng(11);
  HeadsParams p = make_heads(ps, 3, rng);
  Tensor bev = Tensor::from({6, 5, 3}, rnd_vec(90, 12));
  PredictionMaps m = heads_forward(bev, p);
  CHECK(m.heat.shape() == Shape{6, 5, 1});
  CHECK(m.off.shape() == Shape{6, 5, 2});
  CHECK(m.z.shape() == Shape{6, 5, 1});
  CHECK(m.ori.shape() == Shape{6, 5, 2});
  for (double v : m.heat.value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(heads_forward(Tensor::zeros({6, 5}), p), ShapeError);
}

TEST_CASE("zeroing the last conv pins each head at its bias image") {
  ParamStore ps;
  Rng rng(13);
  HeadsParams p = make_heads(ps, 2, rng);
  p.heat.w[3].raw_value().assign(p.heat.w[3].numel(), 0.0);
  p.off.w[3].raw_value().assign(p.off.w[3].numel(), 0.0);
  p.off.b[3].raw_value() = {0.25, -0.5};
  Tensor bev = Tensor::from({4, 4, 2}, rnd_vec(32, 14));
  PredictionMaps m = heads_forward(bev, p);
  for (double v : m.heat.value()) CHECK(v == 0.5);  // sigmoid(0)
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) {
      CHECK(m.off.at({y, x, 0}) == 0.25);
      CHECK(m.off.at({y, x, 1}) == -0.5);
    }
}

TEST_CASE("target heat follows the radial profile") {
  MapGeometry geo = toy_geo(9, 9, 0.5, {-2.25, -2.25});
  Box3D label;
  label.center = {0.1, -0.3, 0.4};
  label.size = {0.6, 0.4, 0.3};
  label.yaw = 0.25;
  TargetMaps t = build_targets(label, geo);
  REQUIRE(t.valid);
  CHECK(t.center_cell[0] == 4);
  CHECK(t.center_cell[1] == 3);
  CHECK(t.offset[0] == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(t.offset[1] == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(t.z == 0.4);
  CHECK(t.ori[0] == std::sin(0.25));
  CHECK(t.ori[1] == std::cos(0.25));

  auto heat_at = [&](int64_t i, int64_t j) { return t.heat.at({i, j, 0}); };
  CHECK(heat_at(4, 3) == 1.0);
  CHECK(heat_at(4, 4) == 0.8);
  CHECK(heat_at(3, 3) == 0.8);
  CHECK(heat_at(5, 4) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(heat_at(4, 8) == 0.2);  // distance 5
  CHECK(heat_at(7, 7) == doctest::Approx(0.2).epsilon(1e-12));  // 3-4-5
  // monotone decay along a ray once past the 0.8 ring
  double prev = heat_at(4, 4);
  for (int64_t j = 5; j < 9; ++j) {
    CHECK(heat_at(4, j) < prev);
    prev = heat_at(4, j);
  }
}

TEST_CASE("targets flag centers that fall off the map") {
  MapGeometry geo = toy_geo(4, 4, 0.5, {-1.0, -1.0});
  Box3D label;
  label.center = {5.0, 0.0, 0.0};
  label.size = {0.5, 0.5, 0.5};
  TargetMaps t = build_targets(label, geo);
  CHECK_FALSE(t.valid);
  Box3D inside;
  inside.center = {0.0, 0.0, 0.0};
  inside.size = {0.5, 0.5, 0.5};
  CHECK(build_targets(inside, geo).valid);
}

TEST_CASE("focal loss vanishes on confident correct predictions") {
  MapGeometry geo = toy_geo(5, 5, 0.5, {-1.25, -1.25});
  Box3D label;
  label.center = {0.0, 0.0, 0.0};
  label.size = {0.5, 0.5, 0.5};
  TargetMaps t = build_targets(label, geo);
  std::vector<double> pv(25, 1e-6);
  pv[t.center_cell[0] * 5 + t.center_cell[1]] = 1.0 - 1e-6;
  Tensor loss = focal_loss(Tensor::from({5, 5, 1}, pv), t.heat, 2.0, 4.0);
  CHECK(std::fabs(loss.item()) < 1e-10);
}

TEST_CASE("focal loss matches the straight-line oracle") {
  std::vector<double> tv = {1.0, 0.8, 0.8, 1.0 / std::sqrt(2.0)};
  Tensor target = Tensor::from({2, 2, 1}, tv);
  SUBCASE("uniform half prediction") {
    std::vector<double> pv(4, 0.5);
    Tensor loss = focal_loss(Tensor::from({2, 2, 1}, pv), target, 2.0, 4.0);
    CHECK(std::fabs(loss.item() - oracle::focal(pv, tv, 2.0, 4.0)) < 1e-12);
  }
  SUBCASE("random prediction") {
    auto pv = rnd_vec(4, 21, 0.05, 0.95);
    Tensor loss = focal_loss(Tensor::from({2, 2, 1}, pv), target, 2.0, 4.0);
    CHECK(std::fabs(loss.item() - oracle::focal(pv, tv, 2.0, 4.0)) < 1e-12);
  }
  SUBCASE("saturated predictions hit the clamp, not infinity") {
    std::vector<double> pv = {1.0, 0.0, 1.0, 0.0};
    Tensor loss = focal_loss(Tensor::from({2, 2, 1}, pv), target, 2.0, 4.0);
    CHECK(std::isfinite(loss.item()));
    CHECK(std::fabs(loss.item() - oracle::focal(pv, tv, 2.0, 4.0)) < 1e-12);
  }
}

TEST_CASE("extra negative cells add their own focal terms") {
  // one positive plus k negatives at t=0.5, uniform prediction 0.3
  auto make_target = [](int64_t k) {
    std::vector<double> tv(k + 1, 0.5);
    tv[0] = 1.0;
    return tv;
  };
  auto tv3 = make_target(3), tv7 = make_target(7);
  std::vector<double> pv3(4, 0.3), pv7(8, 0.3);
  double l3 = focal_loss(Tensor::from({1, 4, 1}, pv3),
                         Tensor::from({1, 4, 1}, tv3), 2.0, 4.0)
                  .item();
  double l7 = focal_loss(Tensor::from({1, 8, 1}, pv7),
                         Tensor::from({1, 8, 1}, tv7), 2.0, 4.0)
                  .item();
  const double per_cell =
      -std::pow(0.5, 4.0) * std::pow(0.3, 2.0) * std::log(0.7);
  CHECK(l7 - l3 == doctest::Approx(4.0 * per_cell).epsilon(1e-12));
}

TEST_CASE("focal loss rejects targets without a positive cell") {
  Tensor pred = Tensor::full({2, 2, 1}, 0.5);
  Tensor target = Tensor::full({2, 2, 1}, 0.5);
  CHECK_THROWS_AS(focal_loss(pred, target, 2.0, 4.0), NumericError);
  CHECK_THROWS_AS(
      focal_loss(pred, Tensor::full({2, 3, 1}, 1.0), 2.0, 4.0), ShapeError);
}

TEST_CASE("the cell regression loss averages channel residuals") {
  auto pv = rnd_vec(3 * 3 * 2, 31);
  Tensor pred = Tensor::from({3, 3, 2}, pv);
  const int64_t y = 1, x = 2;
  const double p0 = pv[(y * 3 + x) * 2 + 0], p1 = pv[(y * 3 + x) * 2 + 1];
  CHECK(l1_loss_at(pred, {y, x}, {p0, p1}).item() == 0.0);

  Tensor one = Tensor::full({2, 2, 1}, 2.0);
  CHECK(l1_loss_at(one, {0, 1}, {0.5}).item() == 1.5);

  Tensor off = Tensor::from({1, 1, 2}, {0.1, 0.9});
  CHECK(l1_loss_at(off, {0, 0}, {0.4, 0.5}).item() ==
        doctest::Approx(0.35).epsilon(1e-12));

  CHECK_THROWS_AS(l1_loss_at(one, {0, 0}, {0.5, 0.5}), ShapeError);
  CHECK_THROWS_AS(l1_loss_at(Tensor::zeros({2, 2}), {0, 0}, {0.5}),
                  ShapeError);
}

TEST_CASE("the total loss applies the published weights") {
  LossWeights w;
  Tensor one = Tensor::scalar(1.0);
  CHECK(total_loss(one, one, one, one, w).item() ==
        doctest::Approx(4.5).epsilon(1e-12));
  Tensor zero = Tensor::scalar(0.0);
  CHECK(total_loss(zero, zero, zero, zero, w).item() == 0.0);

  LossWeights heat_only = w;
  heat_only.lambda_off = 0.0;
  heat_only.lambda_z = 0.0;
  heat_only.lambda_ori = 0.0;
  Tensor h = Tensor::scalar(0.37);
  CHECK(total_loss(h, one, one, one, heat_only).item() == 0.37);
}

TEST_CASE("combined loss wires the parts together") {
  ParamStore ps;
  Rng rng(41);
  HeadsParams p = make_heads(ps, 2, rng);
  Tensor bev = Tensor::from({5, 5, 2}, rnd_vec(50, 42));
  PredictionMaps m = heads_forward(bev, p);
  MapGeometry geo = toy_geo(5, 5, 0.5, {-1.25, -1.25});
  Box3D label;
  label.center = {0.2, -0.1, 0.3};
  label.size = {0.6, 0.4, 0.3};
  label.yaw = -0.4;
  TargetMaps t = build_targets(label, geo);
  LossWeights w;
  LossParts parts = compute_loss(m, t, w);
  const double expect = parts.heat.item() + parts.off.item() +
                        1.5 * parts.z.item() + parts.ori.item();
  CHECK(parts.total.item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(parts.heat.item() ==
        focal_loss(m.heat, t.heat, w.alpha, w.beta).item());

  TargetMaps invalid;
  CHECK_THROWS_AS(compute_loss(m, invalid, w), NumericError);
}

TEST_CASE("box decoding reads the argmax cell") {
  MapGeometry geo = toy_geo(6, 7, 0.5, {-1.5, -1.75});
  std::vector<double> hv(42, 0.1);
  hv[3 * 7 + 5] = 0.9;
  PredictionMaps m;
  m.heat = Tensor::from({6, 7, 1}, hv);
  m.off = Tensor::zeros({6, 7, 2});
  m.z = Tensor::full({6, 7, 1}, 0.45);
  m.ori = Tensor::zeros({6, 7, 2});
  {
    // heading (sin, cos) = (0, 1) -> yaw 0
    auto& ov = m.ori.raw_value();
    for (int64_t i = 0; i < 42; ++i) ov[i * 2 + 1] = 1.0;
  }
  Vec3 size = {0.62, 0.44, 0.37};
  DecodedBox d = decode_box(m, geo, size);
  CHECK(d.confidence == 0.9);
  CHECK(d.box.center[0] == doctest::Approx(-1.5 + 3 * 0.5).epsilon(1e-12));
  CHECK(d.box.center[1] == doctest::Approx(-1.75 + 5 * 0.5).epsilon(1e-12));
  CHECK(d.box.center[2] == 0.45);
  CHECK(d.box.yaw == 0.0);
  CHECK(d.box.size == size);
}

TEST_CASE("heading channels decode through atan2") {
  MapGeometry geo = toy_geo(2, 2, 1.0, {0.0, 0.0});
  PredictionMaps m;
  m.heat = Tensor::from({2, 2, 1}, {0.9, 0.1, 0.1, 0.1});
  m.off = Tensor::zeros({2, 2, 2});
  m.z = Tensor::zeros({2, 2, 1});
  m.ori = Tensor::zeros({2, 2, 2});
  auto& ov = m.ori.raw_value();
  ov[0] = 1.0;  // (sin, cos) = (1, 0) at the argmax cell
  DecodedBox d = decode_box(m, geo, {1, 1, 1});
  CHECK(d.box.yaw == doctest::Approx(M_PI / 2).epsilon(1e-12));
}

TEST_CASE("argmax ties resolve to the lowest row-major cell") {
  MapGeometry geo = toy_geo(3, 3, 0.5, {-0.75, -0.75});
  PredictionMaps m;
  m.heat = Tensor::full({3, 3, 1}, 0.4);
  m.off = Tensor::full({3, 3, 2}, 0.5);
  m.z = Tensor::zeros({3, 3, 1});
  m.ori = Tensor::from({3, 3, 2}, rnd_vec(18, 51, 0.1, 1.0));
  DecodedBox d = decode_box(m, geo, {1, 1, 1});
  CHECK(d.box.center[0] == doctest::Approx(-0.75 + 0.5 * 0.5).epsilon(1e-12));
  CHECK(d.box.center[1] == doctest::Approx(-0.75 + 0.5 * 0.5).epsilon(1e-12));
}

TEST_CASE("targets decode back to the label") {
  MapGeometry geo = toy_geo(9, 9, 0.5, {-2.25, -2.25});
  Box3D label;
  label.center = {0.37, -0.81, 0.29};
  label.size = {0.61, 0.43, 0.36};
  label.yaw = 1.13;
  TargetMaps t = build_targets(label, geo);
  REQUIRE(t.valid);

  PredictionMaps m;
  m.heat = t.heat;
  m.off = Tensor::zeros({9, 9, 2});
  m.z = Tensor::full({9, 9, 1}, t.z);
  m.ori = Tensor::zeros({9, 9, 2});
  auto& off = m.off.raw_value();
  auto& ori = m.ori.raw_value();
  for (int64_t i = 0; i < 81; ++i) {
    off[i * 2 + 0] = t.offset[0];
    off[i * 2 + 1] = t.offset[1];
    ori[i * 2 + 0] = t.ori[0];
    ori[i * 2 + 1] = t.ori[1];
  }
  DecodedBox d = decode_box(m, geo, label.size);
  CHECK(std::fabs(d.box.center[0] - label.center[0]) < 1e-9);
  CHECK(std::fabs(d.box.center[1] - label.center[1]) < 1e-9);
  CHECK(std::fabs(d.box.center[2] - label.center[2]) < 1e-9);
  CHECK(std::fabs(wrap_angle(d.box.yaw - label.yaw)) < 1e-9);
}

TEST_CASE("gradient check through the heads and losses") {
  ParamStore ps;
  Rng rng(61);
  HeadsParams hp = make_heads(ps, 2, rng);
  Tensor bev = ps.add("bev", Tensor::leaf({5, 5, 2}, rnd_vec(50, 62)));
  MapGeometry geo = toy_geo(5, 5, 0.5, {-1.25, -1.25});
  Box3D label;
  label.center = {0.3, -0.2, 0.4};
  label.size = {0.6, 0.4, 0.3};
  label.yaw = 0.3;
  TargetMaps t = build_targets(label, geo);
  REQUIRE(t.valid);
  LossWeights w;
  auto f = [&] {
    PredictionMaps m = heads_forward(bev, hp);
    return compute_loss(m, t, w).total;
  };
  GradCheckOptions opt;
  opt.max_per_param = 4;
  opt.seed = 63;
  auto rep = check_gradients(f, ps, opt);
  CHECK(rep.finite);
  CHECK(rep.max_rel_err < 1e-4);
}
