#pragma once

#include <string>
#include <vector>

#include "lttr/heads.hpp"
#include "lttr/model.hpp"

namespace lttr {

// One JSON document carries every knob; unknown keys are rejected so a
// typo cannot silently fall back to a default.
struct RunConfig {
  Vec3 range_min{-3.2, -3.2, -3.0};
  Vec3 range_max{3.2, 3.2, 1.0};
  Vec3 voxel_size{0.1, 0.1, 0.25};
  int64_t max_points = 5;

  std::vector<int64_t> channels_3d{8, 16, 32};
  std::vector<int64_t> channels_2d{32, 32};

  int64_t R = 4;
  int64_t R_prime = 2;
  int64_t D = 64;
  int64_t S = 64;
  int64_t heads = 2;
  int64_t layers = 1;

  double alpha = 2.0;
  double beta = 4.0;
  double lambda_off = 1.0;
  double lambda_z = 1.5;
  double lambda_ori = 1.0;

  double lr = 1e-3;
  int64_t epochs = 20;
  int64_t batch_size = 2;
  int64_t max_steps = 0;  // 0: all epochs
  uint64_t seed = 1;
  std::string variant = "encoder_decoder";
};

RunConfig parse_run_config_text(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
// Full document, every key present, keys sorted.
std::string run_config_to_json(const RunConfig& c);

VoxelConfig voxel_config(const RunConfig& c);
ModelConfig model_config(const RunConfig& c);
LossWeights loss_weights(const RunConfig& c);

}  // namespace lttr
