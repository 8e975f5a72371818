#pragma once

#include <string>
#include <vector>

#include "lttr/config.hpp"
#include "lttr/model.hpp"

namespace lttr {

struct OpeResult {
  double success = 0.0;
  double precision = 0.0;
  std::vector<double> ious;    // frames 1..T-1, frame 0 is given
  std::vector<double> errors;  // 3D center distance, meters
};

// Frame 0 keeps the ground-truth box; later frames crop around the
// previous prediction with the frame-0 template. Empty crops coast.
std::vector<Box3D> track_sequence(LttrModel& model, const Sequence& seq,
                                  Variant v, uint64_t seed);

OpeResult evaluate_ope(const std::vector<Box3D>& pred,
                       const std::vector<Box3D>& gt);
// Pooled-frame variant used when scoring several sequences as one set.
OpeResult ope_from_lists(std::vector<double> ious, std::vector<double> errors);

struct TrainOptions {
  double lr = 1e-3;
  int64_t epochs = 20;
  int64_t batch_size = 2;
  int64_t max_steps = 0;  // 0: run all epochs
  uint64_t seed = 1;
  LossWeights weights;
};

struct LossRow {
  int64_t step = 0;
  double total = 0, heat = 0, off = 0, z = 0, ori = 0;
};

// Adjacent-frame pairs (template t-1, search t), shuffled each epoch;
// losses are batch means.
std::vector<LossRow> train(LttrModel& model, const std::vector<Sequence>& data,
                           Variant v, const TrainOptions& opt);

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows);

struct AblationRow {
  std::string variant;
  double success = 0.0;
  double precision = 0.0;
};

// Trains and scores every variant with the same seed and data; rows come
// back in fixed variant order.
std::vector<AblationRow> run_ablation(const std::vector<Sequence>& train_data,
                                      const std::vector<Sequence>& eval_data,
                                      const RunConfig& cfg);

}  // namespace lttr
