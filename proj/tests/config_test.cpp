#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "lttr/config.hpp"

using namespace lttr;

TEST_CASE("an empty document yields the defaults") {
  RunConfig c = parse_run_config_text("{}");
  CHECK(c.range_min == Vec3{-3.2, -3.2, -3.0});
  CHECK(c.range_max == Vec3{3.2, 3.2, 1.0});
  CHECK(c.voxel_size == Vec3{0.1, 0.1, 0.25});
  CHECK(c.max_points == 5);
  CHECK(c.channels_3d == std::vector<int64_t>{8, 16, 32});
  CHECK(c.channels_2d == std::vector<int64_t>{32, 32});
  CHECK(c.R == 4);
  CHECK(c.R_prime == 2);
  CHECK(c.D == 64);
  CHECK(c.S == 64);
  CHECK(c.heads == 2);
  CHECK(c.layers == 1);
  CHECK(c.alpha == 2.0);
  CHECK(c.beta == 4.0);
  CHECK(c.lambda_off == 1.0);
  CHECK(c.lambda_z == 1.5);
  CHECK(c.lambda_ori == 1.0);
  CHECK(c.lr == 1e-3);
  CHECK(c.epochs == 20);
  CHECK(c.batch_size == 2);
  CHECK(c.max_steps == 0);
  CHECK(c.seed == 1);
  CHECK(c.variant == "encoder_decoder");
}

TEST_CASE("explicit keys override their defaults") {
  RunConfig c = parse_run_config_text(R"({
    "range_min": [-1.6, -1.6, -1.0],
    "voxel_size": [0.2, 0.2, 0.5],
    "channels_3d": [2, 4, 8],
    "R": 2, "R_prime": 1, "D": 16, "S": 8, "heads": 4, "layers": 3,
    "lambda_z": 2.5, "lr": 0.01, "epochs": 3, "batch_size": 4,
    "max_steps": 17, "seed": 99, "variant": "baseline"
  })");
  CHECK(c.range_min == Vec3{-1.6, -1.6, -1.0});
  CHECK(c.voxel_size == Vec3{0.2, 0.2, 0.5});
  CHECK(c.channels_3d == std::vector<int64_t>{2, 4, 8});
  CHECK(c.R == 2);
  CHECK(c.R_prime == 1);
  CHECK(c.D == 16);
  CHECK(c.S == 8);
  CHECK(c.heads == 4);
  CHECK(c.layers == 3);
  CHECK(c.lambda_z == 2.5);
  CHECK(c.lr == 0.01);
  CHECK(c.epochs == 3);
  CHECK(c.batch_size == 4);
  CHECK(c.max_steps == 17);
  CHECK(c.seed == 99);
  CHECK(c.variant == "baseline");
  // untouched keys keep their defaults
  CHECK(c.range_max == Vec3{3.2, 3.2, 1.0});
  CHECK(c.D == 16);
}

TEST_CASE("a typo is rejected by name, not silently defaulted") {
  CHECK_THROWS_WITH_AS(parse_run_config_text(R"({"warp_factor": 9})"),
                       "unknown config key: warp_factor", ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config_text(R"({"voxe_size": [1,1,1]})"),
                       "unknown config key: voxe_size", ConfigError);
}

TEST_CASE("malformed documents fail loudly") {
  CHECK_THROWS_AS(parse_run_config_text("{nope"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(""), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("[1, 2]"), ConfigError);
  try {
    parse_run_config_text("{\"R\": 4,}");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("not valid JSON") != std::string::npos);
  }
}

TEST_CASE("typed keys reject the wrong JSON kind") {
  CHECK_THROWS_AS(parse_run_config_text(R"({"max_points": "five"})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"max_points": 2.5})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"range_min": [1, 2]})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"range_min": [1, 2, "x"]})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"channels_2d": 32})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"lr": "fast"})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"seed": -5})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"variant": 7})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"variant": "warp"})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"batch_size": 0})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"epochs": -1})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"max_points": 0})"), ConfigError);
}

TEST_CASE("serialization covers every key and round-trips") {
  RunConfig c;
  c.range_min = {-1.0, -2.0, -0.5};
  c.range_max = {1.0, 2.0, 0.5};
  c.voxel_size = {0.05, 0.1, 0.125};
  c.max_points = 7;
  c.channels_3d = {4, 8};
  c.channels_2d = {8};
  c.R = 8;
  c.R_prime = 4;
  c.D = 32;
  c.S = 16;
  c.heads = 4;
  c.layers = 2;
  c.alpha = 1.5;
  c.beta = 3.0;
  c.lambda_off = 0.5;
  c.lambda_z = 2.0;
  c.lambda_ori = 0.25;
  c.lr = 5e-4;
  c.epochs = 11;
  c.batch_size = 3;
  c.max_steps = 42;
  c.seed = 123456789;
  c.variant = "encoder_only";

  const std::string text = run_config_to_json(c);
  for (const char* key :
       {"range_min", "range_max", "voxel_size", "max_points", "channels_3d",
        "channels_2d", "R", "R_prime", "D", "S", "heads", "layers", "alpha",
        "beta", "lambda_off", "lambda_z", "lambda_ori", "lr", "epochs",
        "batch_size", "max_steps", "seed", "variant"})
    CHECK(text.find(std::string("\"") + key + "\"") != std::string::npos);

  RunConfig back = parse_run_config_text(text);
  CHECK(back.range_min == c.range_min);
  CHECK(back.range_max == c.range_max);
  CHECK(back.voxel_size == c.voxel_size);
  CHECK(back.max_points == c.max_points);
  CHECK(back.channels_3d == c.channels_3d);
  CHECK(back.channels_2d == c.channels_2d);
  CHECK(back.R == c.R);
  CHECK(back.R_prime == c.R_prime);
  CHECK(back.D == c.D);
  CHECK(back.S == c.S);
  CHECK(back.heads == c.heads);
  CHECK(back.layers == c.layers);
  CHECK(back.alpha == c.alpha);
  CHECK(back.beta == c.beta);
  CHECK(back.lambda_off == c.lambda_off);
  CHECK(back.lambda_z == c.lambda_z);
  CHECK(back.lambda_ori == c.lambda_ori);
  CHECK(back.lr == c.lr);
  CHECK(back.epochs == c.epochs);
  CHECK(back.batch_size == c.batch_size);
  CHECK(back.max_steps == c.max_steps);
  CHECK(back.seed == c.seed);
  CHECK(back.variant == c.variant);
}

TEST_CASE("loading reads from disk and reports missing files") {
  const std::string path = "config_test_tmp.json";
  {
    std::ofstream out(path);
    out << R"({"D": 24, "seed": 5})";
  }
  RunConfig c = load_run_config(path);
  CHECK(c.D == 24);
  CHECK(c.seed == 5);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_run_config("no_such_config.json"), IoError);
}

TEST_CASE("derived views copy the matching fields") {
  RunConfig c = parse_run_config_text(R"({
    "range_min": [-1.6, -1.6, -1.0], "range_max": [1.6, 1.6, 1.0],
    "voxel_size": [0.2, 0.2, 0.5], "max_points": 3,
    "channels_3d": [2, 4, 8], "channels_2d": [8, 8],
    "R": 2, "R_prime": 1, "D": 8, "S": 8, "heads": 2, "layers": 2,
    "alpha": 1.0, "beta": 2.0, "lambda_off": 0.1, "lambda_z": 0.2,
    "lambda_ori": 0.3, "variant": "encoder_decoder_max"
  })");

  VoxelConfig v = voxel_config(c);
  CHECK(v.range_min == c.range_min);
  CHECK(v.range_max == c.range_max);
  CHECK(v.voxel_size == c.voxel_size);
  CHECK(v.max_points == 3);

  ModelConfig m = model_config(c);
  CHECK(m.backbone.channels_3d == c.channels_3d);
  CHECK(m.backbone.channels_2d == c.channels_2d);
  CHECK(m.tf.R == 2);
  CHECK(m.tf.Rp == 1);
  CHECK(m.tf.D == 8);
  CHECK(m.tf.S == 8);
  CHECK(m.tf.heads == 2);
  CHECK(m.tf.layers == 2);
  CHECK(m.variant == Variant::encoder_decoder_max);

  LossWeights w = loss_weights(c);
  CHECK(w.alpha == 1.0);
  CHECK(w.beta == 2.0);
  CHECK(w.lambda_off == 0.1);
  CHECK(w.lambda_z == 0.2);
  CHECK(w.lambda_ori == 0.3);
}

TEST_CASE("variant names round-trip through the enum") {
  for (const char* name :
       {"baseline", "encoder_only", "encoder_decoder_max", "encoder_decoder"})
    CHECK(variant_to_string(variant_from_string(name)) == name);
  CHECK_THROWS_AS(variant_from_string("transformer"), ConfigError);
}
