#include "lttr/config.hpp"

#include <fstream>

#include "json.hpp"

namespace lttr {

namespace {

using nlohmann::json;

Vec3 to_vec3(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError("config key '" + key + "' must be a 3-element array");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number())
      throw ConfigError("config key '" + key + "' must hold numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

int64_t to_int(const json& j, const std::string& key) {
  if (!j.is_number_integer())
    throw ConfigError("config key '" + key + "' must be an integer");
  return j.get<int64_t>();
}

double to_real(const json& j, const std::string& key) {
  if (!j.is_number())
    throw ConfigError("config key '" + key + "' must be a number");
  return j.get<double>();
}

std::vector<int64_t> to_int_list(const json& j, const std::string& key) {
  if (!j.is_array())
    throw ConfigError("config key '" + key + "' must be an array");
  std::vector<int64_t> out;
  for (const auto& e : j) out.push_back(to_int(e, key));
  return out;
}

}  // namespace

RunConfig parse_run_config_text(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig c;
  for (const auto& [key, val] : doc.items()) {
    if (key == "range_min") c.range_min = to_vec3(val, key);
    else if (key == "range_max") c.range_max = to_vec3(val, key);
    else if (key == "voxel_size") c.voxel_size = to_vec3(val, key);
    else if (key == "max_points") c.max_points = to_int(val, key);
    else if (key == "channels_3d") c.channels_3d = to_int_list(val, key);
    else if (key == "channels_2d") c.channels_2d = to_int_list(val, key);
    else if (key == "R") c.R = to_int(val, key);
    else if (key == "R_prime") c.R_prime = to_int(val, key);
    else if (key == "D") c.D = to_int(val, key);
    else if (key == "S") c.S = to_int(val, key);
    else if (key == "heads") c.heads = to_int(val, key);
    else if (key == "layers") c.layers = to_int(val, key);
    else if (key == "alpha") c.alpha = to_real(val, key);
    else if (key == "beta") c.beta = to_real(val, key);
    else if (key == "lambda_off") c.lambda_off = to_real(val, key);
    else if (key == "lambda_z") c.lambda_z = to_real(val, key);
    else if (key == "lambda_ori") c.lambda_ori = to_real(val, key);
    else if (key == "lr") c.lr = to_real(val, key);
    else if (key == "epochs") c.epochs = to_int(val, key);
    else if (key == "batch_size") c.batch_size = to_int(val, key);
    else if (key == "max_steps") c.max_steps = to_int(val, key);
    else if (key == "seed") {
      if (!val.is_number_integer() || (val.is_number_integer() && val.get<int64_t>() < 0 && !val.is_number_unsigned()))
        throw ConfigError("config key 'seed' must be a non-negative integer");
      c.seed = val.get<uint64_t>();
    } else if (key == "variant") {
      if (!val.is_string())
        throw ConfigError("config key 'variant' must be a string");
      c.variant = val.get<std::string>();
      variant_from_string(c.variant);  // validates
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  if (c.epochs < 0 || c.batch_size <= 0 || c.max_steps < 0 || c.max_points <= 0)
    throw ConfigError("config: counts must be positive");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_config_text(text);
}

std::string run_config_to_json(const RunConfig& c) {
  json doc;
  doc["range_min"] = c.range_min;
  doc["range_max"] = c.range_max;
  doc["voxel_size"] = c.voxel_size;
  doc["max_points"] = c.max_points;
  doc["channels_3d"] = c.channels_3d;
  doc["channels_2d"] = c.channels_2d;
  doc["R"] = c.R;
  doc["R_prime"] = c.R_prime;
  doc["D"] = c.D;
  doc["S"] = c.S;
  doc["heads"] = c.heads;
  doc["layers"] = c.layers;
  doc["alpha"] = c.alpha;
  doc["beta"] = c.beta;
  doc["lambda_off"] = c.lambda_off;
  doc["lambda_z"] = c.lambda_z;
  doc["lambda_ori"] = c.lambda_ori;
  doc["lr"] = c.lr;
  doc["epochs"] = c.epochs;
  doc["batch_size"] = c.batch_size;
  doc["max_steps"] = c.max_steps;
  doc["seed"] = c.seed;
  doc["variant"] = c.variant;
  return doc.dump(2);
}

VoxelConfig voxel_config(const RunConfig& c) {
  VoxelConfig v;
  v.range_min = c.range_min;
  v.range_max = c.range_max;
  v.voxel_size = c.voxel_size;
  v.max_points = c.max_points;
  return v;
}

ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.voxel = voxel_config(c);
  m.backbone.channels_3d = c.channels_3d;
  m.backbone.channels_2d = c.channels_2d;
  m.tf.R = c.R;
  m.tf.Rp = c.R_prime;
  m.tf.D = c.D;
  m.tf.S = c.S;
  m.tf.heads = c.heads;
  m.tf.layers = c.layers;
  m.variant = variant_from_string(c.variant);
  return m;
}

LossWeights loss_weights(const RunConfig& c) {
  LossWeights w;
  w.alpha = c.alpha;
  w.beta = c.beta;
  w.lambda_off = c.lambda_off;
  w.lambda_z = c.lambda_z;
  w.lambda_ori = c.lambda_ori;
  return w;
}

}  // namespace lttr
