#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "lttr/fusion.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lttr;
using testutil::max_abs_diff;
using testutil::rnd_vec;

TEST_CASE("zero projection scores every region with the bias") {
  ParamStore ps;
  Rng rng(11);
  Linear proj = make_linear(ps, "fusion.score", 4, 1, rng);
  proj.w.raw_value().assign(4, 0.0);
  proj.b.raw_value() = {0.7};
  Tensor g = Tensor::from({3, 4}, rnd_vec(12, 12));
  Tensor w = region_attention(g, proj);
  REQUIRE(w.shape() == Shape{3, 1});
  for (int64_t r = 0; r < 3; ++r) CHECK(w.at({r, 0}) == 0.7);
}

TEST_CASE("unit projection selects the first token coordinate") {
  ParamStore ps;
  Rng rng(13);
  Linear proj = make_linear(ps, "fusion.score", 4, 1, rng);
  proj.w.raw_value() = {1.0, 0.0, 0.0, 0.0};
  Tensor g = Tensor::from({3, 4}, rnd_vec(12, 14));
  Tensor w = region_attention(g, proj);
  for (int64_t r = 0; r < 3; ++r)
    CHECK(w.at({r, 0}) == doctest::Approx(g.at({r, 0})).epsilon(1e-12));
}

TEST_CASE("region scores are per-row affine maps") {
  ParamStore ps;
  Rng rng(15);
  Linear proj = make_linear(ps, "fusion.score", 5, 1, rng);
  auto gv = rnd_vec(20, 16);
  Tensor w = region_attention(Tensor::from({4, 5}, gv), proj);
  const auto& pw = proj.w.value();
  const double pb = proj.b.value()[0];
  for (int64_t r = 0; r < 4; ++r) {
    double ref = pb;
    for (int64_t c = 0; c < 5; ++c) ref += gv[r * 5 + c] * pw[c];
    CHECK(std::fabs(w.at({r, 0}) - ref) < 1e-12);
  }
  CHECK_THROWS_AS(region_attention(Tensor::zeros({2, 2, 2}), proj),
                  ShapeError);
}

TEST_CASE("unit region weights leave the map untouched") {
  auto bv = rnd_vec(4 * 4 * 3, 21);
  Tensor bev = Tensor::from({4, 4, 3}, bv);
  Tensor out = apply_region_weights(bev, Tensor::full({4, 1}, 1.0), 2);
  CHECK(out.value() == bv);
}

TEST_CASE("a zero weight blanks exactly its region") {
  auto bv = rnd_vec(4 * 4 * 2, 22, 0.5, 1.5);  // strictly positive
  Tensor bev = Tensor::from({4, 4, 2}, bv);
  Tensor out = apply_region_weights(bev, Tensor::from({4, 1}, {0, 1, 1, 1}), 2);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x)
      for (int64_t c = 0; c < 2; ++c) {
        const double got = out.at({y, x, c});
        if (y < 2 && x < 2)
          CHECK(got == 0.0);
        else
          CHECK(got == bv[(y * 4 + x) * 2 + c]);
      }
}

TEST_CASE("region weighting matches the per-cell lookup") {
  auto bv = rnd_vec(8 * 4 * 3, 23);
  auto wv = rnd_vec(2 * 1, 24);  // R=4 on 8x4 -> 2x1 region grid
  Tensor out = apply_region_weights(Tensor::from({8, 4, 3}, bv),
                                    Tensor::from({2, 1}, wv), 4);
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 4; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const int64_t region = (y / 4) * 1 + (x / 4);
        CHECK(out.at({y, x, c}) == bv[(y * 4 + x) * 3 + c] * wv[region]);
      }
}

TEST_CASE("sequential weighting composes multiplicatively") {
  auto bv = rnd_vec(4 * 4 * 2, 25);
  auto w1 = rnd_vec(4, 26), w2 = rnd_vec(4, 27);
  Tensor bev = Tensor::from({4, 4, 2}, bv);
  Tensor seq = apply_region_weights(
      apply_region_weights(bev, Tensor::from({4, 1}, w1), 2),
      Tensor::from({4, 1}, w2), 2);
  std::vector<double> prod(4);
  for (int i = 0; i < 4; ++i) prod[i] = w1[i] * w2[i];
  Tensor once = apply_region_weights(bev, Tensor::from({4, 1}, prod), 2);
  CHECK(max_abs_diff(seq.value(), once.value()) < 1e-12);
}

TEST_CASE("region weighting rejects bad geometry") {
  Tensor bev = Tensor::zeros({4, 4, 2});
  CHECK_THROWS_AS(apply_region_weights(bev, Tensor::full({4, 1}, 1.0), 3),
                  ConfigError);
  CHECK_THROWS_AS(apply_region_weights(bev, Tensor::full({2, 1}, 1.0), 2),
                  ConfigError);
  CHECK_THROWS_AS(
      apply_region_weights(Tensor::zeros({4, 4}), Tensor::full({4, 1}, 1.0), 2),
      ShapeError);
}

TEST_CASE("correlation against a ones template sums each channel") {
  auto sv = rnd_vec(3 * 3 * 2, 31);
  Tensor sim = depthwise_xcorr(Tensor::from({3, 3, 2}, sv),
                               Tensor::full({3, 3, 2}, 1.0));
  REQUIRE(sim.shape() == Shape{1, 1, 2});
  for (int64_t c = 0; c < 2; ++c) {
    double ref = 0;
    for (int64_t i = 0; i < 9; ++i) ref += sv[i * 2 + c];
    CHECK(sim.at({0, 0, c}) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("a one-hot template reads out a single cell") {
  auto sv = rnd_vec(3 * 3 * 3, 32);
  std::vector<double> tv(27, 0.0);
  tv[(1 * 3 + 2) * 3 + 1] = 1.0;  // cell (1,2), channel 1
  Tensor sim =
      depthwise_xcorr(Tensor::from({3, 3, 3}, sv), Tensor::from({3, 3, 3}, tv));
  CHECK(sim.at({0, 0, 0}) == 0.0);
  CHECK(sim.at({0, 0, 1}) == sv[(1 * 3 + 2) * 3 + 1]);
  CHECK(sim.at({0, 0, 2}) == 0.0);
}

TEST_CASE("correlation matches the triple-loop oracle and commutes") {
  auto sv = rnd_vec(4 * 4 * 3, 33), tv = rnd_vec(4 * 4 * 3, 34);
  Tensor a = Tensor::from({4, 4, 3}, sv);
  Tensor b = Tensor::from({4, 4, 3}, tv);
  Tensor sim = depthwise_xcorr(a, b);
  CHECK(max_abs_diff(sim.value(), oracle::xcorr(sv, tv, 4, 4, 3)) < 1e-12);
  Tensor swapped = depthwise_xcorr(b, a);
  CHECK(sim.value() == swapped.value());

  CHECK_THROWS_AS(depthwise_xcorr(a, Tensor::zeros({4, 4, 2})), ShapeError);
  CHECK_THROWS_AS(
      depthwise_xcorr(Tensor::zeros({4, 4}), Tensor::zeros({4, 4})),
      ShapeError);
}

TEST_CASE("fusing with unit similarity is the identity") {
  auto sv = rnd_vec(3 * 2 * 4, 41);
  Tensor m = Tensor::from({3, 2, 4}, sv);
  Tensor out = fuse(m, Tensor::full({1, 1, 4}, 1.0));
  CHECK(out.value() == sv);
  Tensor zeroed = fuse(m, Tensor::zeros({1, 1, 4}));
  for (double v : zeroed.value()) CHECK(v == 0.0);
}

TEST_CASE("fusion scales each channel by its similarity") {
  auto sv = rnd_vec(3 * 2 * 4, 42);
  auto cv = rnd_vec(4, 43);
  Tensor out = fuse(Tensor::from({3, 2, 4}, sv), Tensor::from({1, 1, 4}, cv));
  for (int64_t y = 0; y < 3; ++y)
    for (int64_t x = 0; x < 2; ++x)
      for (int64_t c = 0; c < 4; ++c)
        CHECK(out.at({y, x, c}) == sv[(y * 2 + x) * 4 + c] * cv[c]);
  CHECK_THROWS_AS(
      fuse(Tensor::zeros({3, 2, 4}), Tensor::zeros({1, 1, 3})), ShapeError);
}

TEST_CASE("gradient check through the whole fusion chain") {
  ParamStore ps;
  Rng rng(51);
  Linear proj = make_linear(ps, "fusion.score", 3, 1, rng);
  Tensor g_s = ps.add("g_s", Tensor::leaf({4, 3}, rnd_vec(12, 52)));
  Tensor g_t = ps.add("g_t", Tensor::leaf({4, 3}, rnd_vec(12, 53)));
  Tensor m_s = ps.add("m_s", Tensor::leaf({4, 4, 2}, rnd_vec(32, 54)));
  Tensor m_t = ps.add("m_t", Tensor::leaf({4, 4, 2}, rnd_vec(32, 55)));
  auto f = [&] {
    Tensor ws = apply_region_weights(m_s, region_attention(g_s, proj), 2);
    Tensor wt = apply_region_weights(m_t, region_attention(g_t, proj), 2);
    Tensor out = fuse(ws, depthwise_xcorr(ws, wt));
    return sum_all(mul(out, out));
  };
  auto rep = check_gradients(f, ps);
  CHECK(rep.finite);
  CHECK(rep.max_rel_err < 1e-4);
}
