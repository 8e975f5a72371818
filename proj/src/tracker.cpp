#include "lttr/tracker.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

namespace lttr {

std::vector<Box3D> track_sequence(LttrModel& model, const Sequence& seq,
                                  Variant v, uint64_t seed) {
  if (seq.frames.empty()) throw ConfigError("track_sequence: empty sequence");
  const VoxelConfig& vox = model.config().voxel;
  const MapGeometry geo = model.geometry();

  std::vector<Box3D> out;
  out.push_back(seq.frames[0].gt_box);

  PointCloud tmpl_cloud = make_template(seq.frames[0], seq.frames[0].gt_box);
  VoxelGrid tmpl_grid;
  const bool have_template = !tmpl_cloud.empty();
  if (have_template) {
    Rng r(derive_seed(seed, 0x74656d706cULL));
    tmpl_grid = voxelize(tmpl_cloud, vox, r);
  }

  Box3D prev = seq.frames[0].gt_box;
  for (size_t t = 1; t < seq.frames.size(); ++t) {
    if (!have_template) {
      out.push_back(prev);
      continue;
    }
    // Per-frame stream so a coasted frame cannot shift later draws.
    Rng rf(derive_seed(seed, 0x747261636bULL + t));
    Canonical c = canonicalize(seq.frames[t], prev, vox, rf, false);
    if (c.cloud.empty()) {
      out.push_back(prev);  // coast
      continue;
    }
    VoxelGrid grid = voxelize(c.cloud, vox, rf);
    NoGradGuard ng;
    PredictionMaps preds = model.forward(grid, tmpl_grid, v);
    DecodedBox d = decode_box(preds, geo, seq.object_size);
    Box3D world = crop_to_world_box(c.crop, d.box);
    out.push_back(world);
    prev = world;
  }
  return out;
}

OpeResult ope_from_lists(std::vector<double> ious, std::vector<double> errors) {
  if (ious.empty() || ious.size() != errors.size())
    throw ConfigError("ope: need matching, nonempty iou/error lists");
  OpeResult r;
  r.ious = std::move(ious);
  r.errors = std::move(errors);
  const double nf = static_cast<double>(r.ious.size());
  double s = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double tau = static_cast<double>(i) / 100.0;
    int64_t cnt = 0;
    for (double iou : r.ious)
      if (iou > tau) ++cnt;
    s += static_cast<double>(cnt) / nf;
  }
  r.success = s / 101.0;
  double p = 0.0;
  for (int j = 0; j <= 100; ++j) {
    const double delta = 0.02 * static_cast<double>(j);
    int64_t cnt = 0;
    for (double e : r.errors)
      if (e <= delta) ++cnt;
    p += static_cast<double>(cnt) / nf;
  }
  r.precision = p / 101.0;
  return r;
}

OpeResult evaluate_ope(const std::vector<Box3D>& pred,
                       const std::vector<Box3D>& gt) {
  if (pred.size() != gt.size())
    throw ConfigError("evaluate_ope: prediction/gt length mismatch");
  if (pred.size() < 2)
    throw ConfigError("evaluate_ope: need at least two frames");
  std::vector<double> ious, errors;
  for (size_t i = 1; i < pred.size(); ++i) {
    ious.push_back(iou3d(pred[i], gt[i]));
    errors.push_back(center_distance(pred[i], gt[i]));
  }
  return ope_from_lists(std::move(ious), std::move(errors));
}

std::vector<LossRow> train(LttrModel& model, const std::vector<Sequence>& data,
                           Variant v, const TrainOptions& opt) {
  if (data.empty()) throw ConfigError("train: empty dataset");
  struct PairRef {
    int64_t seq, frame;  // template frame-1, search frame
  };
  std::vector<PairRef> pairs;
  for (size_t s = 0; s < data.size(); ++s)
    for (size_t t = 1; t < data[s].frames.size(); ++t)
      pairs.push_back({static_cast<int64_t>(s), static_cast<int64_t>(t)});
  if (pairs.empty()) throw ConfigError("train: no frame pairs in dataset");

  const VoxelConfig& vox = model.config().voxel;
  const MapGeometry geo = model.geometry();
  Adam adam(opt.lr);
  Rng order_rng(derive_seed(opt.seed, 0x6f72646572ULL));
  Rng data_rng(derive_seed(opt.seed, 0x64617461ULL));
  const int64_t bs = std::max<int64_t>(1, opt.batch_size);

  std::vector<LossRow> curve;
  int64_t step = 0, used = 0;
  bool done = false;
  // max_steps, when set, is the whole budget: epochs redraw until it is met.
  for (int64_t e = 0; (opt.max_steps > 0 || e < opt.epochs) && !done; ++e) {
    const int64_t used_at_entry = used;
    std::vector<PairRef> sched = pairs;
    order_rng.shuffle(sched);
    size_t idx = 0;
    while (idx < sched.size() && !done) {
      model.params().zero_grad();
      std::vector<Tensor> totals;
      LossRow row;
      while (static_cast<int64_t>(totals.size()) < bs && idx < sched.size()) {
        const PairRef pr = sched[idx++];
        const Sequence& sq = data[pr.seq];
        const Frame& tf = sq.frames[pr.frame - 1];
        const Frame& sf = sq.frames[pr.frame];
        PointCloud tc = make_template(tf, tf.gt_box);
        if (tc.empty()) continue;
        // Crop around the previous frame's box, as tracking will: the label
        // then carries the true inter-frame motion, so the heads must read
        // the object rather than regress the jitter back out.
        Canonical c = canonicalize(sf, tf.gt_box, vox, data_rng, true);
        if (c.cloud.empty()) continue;
        TargetMaps tgt = build_targets(c.label, geo);
        if (!tgt.valid) continue;
        VoxelGrid sg = voxelize(c.cloud, vox, data_rng);
        VoxelGrid tg = voxelize(tc, vox, data_rng);
        PredictionMaps preds = model.forward(sg, tg, v);
        LossParts lp = compute_loss(preds, tgt, opt.weights);
        totals.push_back(lp.total);
        row.total += lp.total.item();
        row.heat += lp.heat.item();
        row.off += lp.off.item();
        row.z += lp.z.item();
        row.ori += lp.ori.item();
      }
      if (totals.empty()) continue;
      used += static_cast<int64_t>(totals.size());
      Tensor loss = totals[0];
      for (size_t i = 1; i < totals.size(); ++i) loss = add(loss, totals[i]);
      const double inv = 1.0 / static_cast<double>(totals.size());
      loss = mul_scalar(loss, inv);
      loss.backward();
      adam.step(model.params());
      ++step;
      row.step = step;
      row.total *= inv;
      row.heat *= inv;
      row.off *= inv;
      row.z *= inv;
      row.ori *= inv;
      curve.push_back(row);
      if (opt.max_steps > 0 && step >= opt.max_steps) done = true;
    }
    if (used == used_at_entry) break;  // nothing usable, do not spin
  }
  if (used == 0)
    throw ConfigError("train: every sample had an empty template or crop");
  return curve;
}

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "step,total,heat,off,z,ori\n";
  char buf[192];
  for (const LossRow& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                  r.total, r.heat, r.off, r.z, r.ori);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path);
}

std::vector<AblationRow> run_ablation(const std::vector<Sequence>& train_data,
                                      const std::vector<Sequence>& eval_data,
                                      const RunConfig& cfg) {
  static const Variant order[4] = {Variant::baseline, Variant::encoder_only,
                                   Variant::encoder_decoder_max,
                                   Variant::encoder_decoder};
  std::vector<AblationRow> rows;
  for (Variant v : order) {
    RunConfig c = cfg;
    c.variant = variant_to_string(v);
    LttrModel model(model_config(c), c.seed);
    TrainOptions opt;
    opt.lr = c.lr;
    opt.epochs = c.epochs;
    opt.batch_size = c.batch_size;
    opt.max_steps = c.max_steps;
    opt.seed = c.seed;
    opt.weights = loss_weights(c);
    train(model, train_data, v, opt);

    std::vector<double> ious, errors;
    for (const Sequence& seq : eval_data) {
      std::vector<Box3D> pred = track_sequence(model, seq, v, c.seed);
      std::vector<Box3D> gt;
      for (const Frame& f : seq.frames) gt.push_back(f.gt_box);
      OpeResult r = evaluate_ope(pred, gt);
      ious.insert(ious.end(), r.ious.begin(), r.ious.end());
      errors.insert(errors.end(), r.errors.begin(), r.errors.end());
    }
    OpeResult pooled = ope_from_lists(std::move(ious), std::move(errors));
    rows.push_back({variant_to_string(v), pooled.success, pooled.precision});
  }
  return rows;
}

}  // namespace lttr
