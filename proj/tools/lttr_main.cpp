#include <algorithm>
#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lttr/array_io.hpp"
#include "lttr/config.hpp"
#include "lttr/model.hpp"
#include "lttr/scene.hpp"
#include "lttr/tracker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lttr;

namespace {

// Precedence: LTTR_SEED env var, then --seed, then the config file.
void resolve_seed(RunConfig& cfg, const CLI::Option* seed_opt,
                  uint64_t flag_seed) {
  if (seed_opt != nullptr && seed_opt->count() > 0) cfg.seed = flag_seed;
  if (const char* env = std::getenv("LTTR_SEED")) {
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0')
      throw ConfigError("LTTR_SEED must be a non-negative integer, got '" +
                        std::string(env) + "'");
    cfg.seed = static_cast<uint64_t>(v);
  }
}

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

std::vector<std::string> list_sequence_files(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .jsonl sequences in " + dir);
  return files;
}

std::vector<Sequence> load_dataset(const std::string& dir) {
  std::vector<Sequence> seqs;
  for (const std::string& f : list_sequence_files(dir))
    seqs.push_back(load_sequence(f));
  return seqs;
}

json box_to_json(const Box3D& b) {
  return json{{"center", b.center}, {"size", b.size}, {"yaw", b.yaw}};
}

struct ModelBundle {
  RunConfig cfg;
  std::unique_ptr<LttrModel> model;
  Variant run_variant;
};

// run_variant may differ from the checkpoint's stored variant only when
// the stored parameter set still covers it.
ModelBundle load_model(const std::string& checkpoint,
                       const std::string& variant_override) {
  ModelBundle mb;
  mb.cfg = parse_run_config_text(read_checkpoint_config(checkpoint));
  mb.model = std::make_unique<LttrModel>(model_config(mb.cfg), mb.cfg.seed);
  load_checkpoint(mb.model->params(), checkpoint);
  mb.run_variant = variant_from_string(
      variant_override.empty() ? mb.cfg.variant : variant_override);
  if (!mb.model->supports(mb.run_variant))
    throw ConfigError("checkpoint parameters do not cover variant '" +
                      variant_to_string(mb.run_variant) + "'");
  return mb;
}

void save_tensor_array(const fs::path& dir, const std::string& name,
                       const Tensor& t, json& arrays) {
  save_array((dir / (name + ".f64")).string(), t.shape(), t.value());
  arrays[name] = t.shape();
}

// One file per attention site: the per-head (and per-region) matrices
// stacked under leading axes.
void save_tensor_stack(const fs::path& dir, const std::string& name,
                       const std::vector<Tensor>& parts, const Shape& lead,
                       json& arrays) {
  if (parts.empty()) return;
  Shape shape = lead;
  const Shape& inner = parts[0].shape();
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const Tensor& t : parts) {
    const std::vector<double>& v = t.value();
    data.insert(data.end(), v.begin(), v.end());
  }
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw ShapeError("attention stack parts disagree in shape");
  save_array((dir / (name + ".f64")).string(), shape, data);
  arrays[name] = shape;
}

int cmd_gen(const std::string& out_dir, int64_t count, int64_t frames,
            double clutter, int64_t points, uint64_t seed) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["count"] = count;
  manifest["frames"] = frames;
  manifest["clutter"] = clutter;
  manifest["points"] = points;
  manifest["seed"] = seed;
  json files = json::array();
  for (int64_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03" PRId64 ".jsonl", i);
    Sequence seq = generate_sequence(
        derive_seed(seed, 0x67656e00ULL + static_cast<uint64_t>(i)), frames,
        clutter, points);
    save_sequence(seq, (fs::path(out_dir) / name).string());
    files.push_back(name);
  }
  manifest["files"] = files;
  const std::string text = manifest.dump(2) + "\n";
  write_text((fs::path(out_dir) / "manifest.json").string(), text);
  std::cout << text;
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir,
              const std::string& out_dir) {
  std::vector<Sequence> data = load_dataset(data_dir);
  LttrModel model(model_config(cfg), cfg.seed);
  Variant v = variant_from_string(cfg.variant);
  TrainOptions opt;
  opt.lr = cfg.lr;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.max_steps = cfg.max_steps;
  opt.seed = cfg.seed;
  opt.weights = loss_weights(cfg);
  std::vector<LossRow> rows = train(model, data, v, opt);

  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  save_checkpoint(model.params(), ckpt, run_config_to_json(cfg));
  write_loss_csv((fs::path(out_dir) / "loss.csv").string(), rows);
  std::printf("trained %zu steps, loss %.6f -> %.6f\n", rows.size(),
              rows.front().total, rows.back().total);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_path, const std::string& variant_override,
             const CLI::Option* seed_opt, uint64_t flag_seed) {
  ModelBundle mb = load_model(checkpoint, variant_override);
  resolve_seed(mb.cfg, seed_opt, flag_seed);
  json per_seq = json::array();
  std::vector<double> ious, errors;
  for (const std::string& f : list_sequence_files(data_dir)) {
    Sequence seq = load_sequence(f);
    std::vector<Box3D> pred =
        track_sequence(*mb.model, seq, mb.run_variant, mb.cfg.seed);
    std::vector<Box3D> gt;
    for (const Frame& fr : seq.frames) gt.push_back(fr.gt_box);
    OpeResult r = evaluate_ope(pred, gt);
    per_seq.push_back(json{{"file", fs::path(f).filename().string()},
                           {"success", r.success},
                           {"precision", r.precision}});
    ious.insert(ious.end(), r.ious.begin(), r.ious.end());
    errors.insert(errors.end(), r.errors.begin(), r.errors.end());
  }
  OpeResult pooled = ope_from_lists(std::move(ious), std::move(errors));
  json report;
  report["success"] = pooled.success;
  report["precision"] = pooled.precision;
  report["frames_scored"] = pooled.ious.size();
  report["variant"] = variant_to_string(mb.run_variant);
  report["seed"] = mb.cfg.seed;
  report["sequences"] = per_seq;
  write_text(out_path, report.dump(2) + "\n");
  std::printf("success %.4f precision %.4f over %zu frames\n", pooled.success,
              pooled.precision, pooled.ious.size());
  return 0;
}

int cmd_track(const std::string& checkpoint, const std::string& data_path,
              const std::string& out_path, const std::string& variant_override,
              const CLI::Option* seed_opt, uint64_t flag_seed) {
  ModelBundle mb = load_model(checkpoint, variant_override);
  resolve_seed(mb.cfg, seed_opt, flag_seed);
  Sequence seq = load_sequence(data_path);
  std::vector<Box3D> pred =
      track_sequence(*mb.model, seq, mb.run_variant, mb.cfg.seed);
  std::vector<Box3D> gt;
  for (const Frame& fr : seq.frames) gt.push_back(fr.gt_box);
  OpeResult r = evaluate_ope(pred, gt);
  json report;
  report["success"] = r.success;
  report["precision"] = r.precision;
  report["variant"] = variant_to_string(mb.run_variant);
  report["seed"] = mb.cfg.seed;
  json boxes = json::array();
  for (const Box3D& b : pred) boxes.push_back(box_to_json(b));
  report["boxes"] = boxes;
  json frame_ious = json::array(), frame_errors = json::array();
  for (double x : r.ious) frame_ious.push_back(x);
  for (double x : r.errors) frame_errors.push_back(x);
  report["ious"] = frame_ious;
  report["errors"] = frame_errors;
  write_text(out_path, report.dump(2) + "\n");
  std::printf("success %.4f precision %.4f over %zu frames\n", r.success,
              r.precision, r.ious.size());
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& data_dir,
               const std::string& eval_dir, const std::string& out_path) {
  std::vector<Sequence> train_data = load_dataset(data_dir);
  std::vector<Sequence> eval_data =
      eval_dir.empty() ? train_data : load_dataset(eval_dir);
  std::vector<AblationRow> rows = run_ablation(train_data, eval_data, cfg);
  std::string csv = "variant,success,precision\n";
  char buf[160];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", r.variant.c_str(),
                  r.success, r.precision);
    csv += buf;
  }
  write_text(out_path, csv);
  std::cout << csv;
  return 0;
}

int cmd_export_maps(const std::string& checkpoint, const std::string& data_path,
                    int64_t frame, const std::string& out_dir,
                    const std::string& variant_override,
                    const CLI::Option* seed_opt, uint64_t flag_seed) {
  ModelBundle mb = load_model(checkpoint, variant_override);
  resolve_seed(mb.cfg, seed_opt, flag_seed);
  Sequence seq = load_sequence(data_path);
  if (frame < 1 || frame >= static_cast<int64_t>(seq.frames.size()))
    throw ConfigError("frame index must be in [1, " +
                      std::to_string(seq.frames.size() - 1) + "]");

  const VoxelConfig vox = voxel_config(mb.cfg);
  PointCloud tmpl_cloud = make_template(seq.frames[0], seq.frames[0].gt_box);
  if (tmpl_cloud.empty())
    throw ConfigError("frame 0 has no points inside the ground-truth box");
  Rng tr(derive_seed(mb.cfg.seed, 0x74656d706cULL));
  VoxelGrid tmpl_grid = voxelize(tmpl_cloud, vox, tr);

  // Crop around the previous frame's ground-truth pose.
  Rng rf(derive_seed(mb.cfg.seed, 0x747261636bULL + static_cast<uint64_t>(frame)));
  Canonical c = canonicalize(seq.frames[frame], seq.frames[frame - 1].gt_box,
                             vox, rf, false);
  if (c.cloud.empty()) throw ConfigError("search crop holds no points");
  VoxelGrid grid = voxelize(c.cloud, vox, rf);

  ForwardTrace trace;
  PredictionMaps preds;
  {
    NoGradGuard ng;
    preds = mb.model->forward(grid, tmpl_grid, mb.run_variant, &trace);
  }

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  json arrays;
  save_tensor_array(dir, "heatmap", preds.heat, arrays);
  save_tensor_array(dir, "offset", preds.off, arrays);
  save_tensor_array(dir, "z", preds.z, arrays);
  save_tensor_array(dir, "orientation", preds.ori, arrays);
  if (trace.weights_s.defined())
    save_tensor_array(dir, "region_weights_search", trace.weights_s, arrays);
  if (trace.weights_t.defined())
    save_tensor_array(dir, "region_weights_template", trace.weights_t, arrays);

  const TransformerConfig& tc = mb.model->config().tf;
  const int64_t heads = tc.heads;
  auto dump_encoder = [&](const EncodeTrace& et, const std::string& side) {
    for (size_t l = 0; l < et.point_attn.size(); ++l) {
      const int64_t n_regions =
          static_cast<int64_t>(et.point_attn[l].size()) / heads;
      save_tensor_stack(dir, "point_attn_" + side + "_layer" + std::to_string(l),
                        et.point_attn[l], {n_regions, heads}, arrays);
      save_tensor_stack(dir,
                        "region_attn_" + side + "_layer" + std::to_string(l),
                        et.region_attn[l], {heads}, arrays);
    }
  };
  dump_encoder(trace.enc_s, "search");
  dump_encoder(trace.enc_t, "template");
  save_tensor_stack(dir, "decoder_self_attn", trace.dec.self_attn, {heads},
                    arrays);
  save_tensor_stack(dir, "decoder_cross_attn", trace.dec.cross_attn, {heads},
                    arrays);

  MapGeometry geo = mb.model->geometry();
  json meta;
  meta["frame"] = frame;
  meta["variant"] = variant_to_string(mb.run_variant);
  meta["seed"] = mb.cfg.seed;
  meta["geometry"] = json{{"h", geo.h},
                          {"w", geo.w},
                          {"stride_m", geo.stride_m},
                          {"origin", geo.origin}};
  meta["crop"] = json{{"center", c.crop.center}, {"yaw", c.crop.yaw}};
  meta["arrays"] = arrays;
  write_text((dir / "metadata.json").string(), meta.dump(2) + "\n");
  std::printf("wrote %zu arrays to %s\n", arrays.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LTTR point-cloud single-object tracker"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate synthetic sequences");
  std::string gen_out;
  int64_t gen_count = 0, gen_frames = 12, gen_points = 256;
  double gen_clutter = 0.5;
  uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of sequences")->required();
  gen->add_option("--frames", gen_frames, "Frames per sequence");
  gen->add_option("--clutter", gen_clutter, "Clutter density");
  gen->add_option("--points", gen_points, "Point budget per frame");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Master seed");

  // train
  auto* tr = app.add_subcommand("train", "Train a tracker");
  std::string tr_config, tr_data, tr_out, tr_variant;
  uint64_t tr_seed = 1;
  int64_t tr_max_steps = -1, tr_epochs = -1, tr_batch = -1;
  double tr_lr = 0.0;
  tr->add_option("--config", tr_config, "RunConfig JSON path");
  tr->add_option("--data", tr_data, "Directory of .jsonl sequences")
      ->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--variant", tr_variant, "Model variant override");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Seed override");
  tr->add_option("--max-steps", tr_max_steps, "Step cap override");
  tr->add_option("--epochs", tr_epochs, "Epoch override");
  tr->add_option("--batch-size", tr_batch, "Batch size override");
  tr->add_option("--lr", tr_lr, "Learning rate override");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out, ev_variant;
  uint64_t ev_seed = 1;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Directory of .jsonl sequences")
      ->required();
  ev->add_option("--out", ev_out, "Report JSON path")->required();
  ev->add_option("--variant", ev_variant, "Run variant override");
  auto* ev_seed_opt = ev->add_option("--seed", ev_seed, "Seed override");

  // track
  auto* tk = app.add_subcommand("track", "Track one sequence");
  std::string tk_ckpt, tk_data, tk_out, tk_variant;
  uint64_t tk_seed = 1;
  tk->add_option("--checkpoint", tk_ckpt, "Checkpoint path")->required();
  tk->add_option("--data", tk_data, "Sequence .jsonl path")->required();
  tk->add_option("--out", tk_out, "Report JSON path")->required();
  tk->add_option("--variant", tk_variant, "Run variant override");
  auto* tk_seed_opt = tk->add_option("--seed", tk_seed, "Seed override");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and score every variant");
  std::string ab_config, ab_data, ab_eval, ab_out;
  uint64_t ab_seed = 1;
  ab->add_option("--config", ab_config, "RunConfig JSON path");
  ab->add_option("--data", ab_data, "Training sequence directory")->required();
  ab->add_option("--eval-data", ab_eval,
                 "Held-out sequence directory (defaults to --data)");
  ab->add_option("--out", ab_out, "Output CSV path")->required();
  auto* ab_seed_opt = ab->add_option("--seed", ab_seed, "Seed override");

  // export-maps
  auto* ex = app.add_subcommand("export-maps",
                                "Export heatmap/weights/attention arrays");
  std::string ex_ckpt, ex_data, ex_out, ex_variant;
  int64_t ex_frame = 1;
  uint64_t ex_seed = 1;
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint path")->required();
  ex->add_option("--data", ex_data, "Sequence .jsonl path")->required();
  ex->add_option("--frame", ex_frame, "Frame index (>= 1)");
  ex->add_option("--out", ex_out, "Output directory")->required();
  ex->add_option("--variant", ex_variant, "Run variant override");
  auto* ex_seed_opt = ex->add_option("--seed", ex_seed, "Seed override");

  try {
    app.parse(argc, argv);

    if (gen->parsed()) {
      RunConfig cfg;
      cfg.seed = gen_seed;
      resolve_seed(cfg, gen_seed_opt, gen_seed);
      return cmd_gen(gen_out, gen_count, gen_frames, gen_clutter, gen_points,
                     cfg.seed);
    }
    if (tr->parsed()) {
      RunConfig cfg = config_or_default(tr_config);
      if (!tr_variant.empty()) {
        variant_from_string(tr_variant);  // validate
        cfg.variant = tr_variant;
      }
      if (tr_max_steps >= 0) cfg.max_steps = tr_max_steps;
      if (tr_epochs >= 0) cfg.epochs = tr_epochs;
      if (tr_batch >= 1) cfg.batch_size = tr_batch;
      if (tr_lr > 0.0) cfg.lr = tr_lr;
      resolve_seed(cfg, tr_seed_opt, tr_seed);
      return cmd_train(cfg, tr_data, tr_out);
    }
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_out, ev_variant, ev_seed_opt,
                      ev_seed);
    if (tk->parsed())
      return cmd_track(tk_ckpt, tk_data, tk_out, tk_variant, tk_seed_opt,
                       tk_seed);
    if (ab->parsed()) {
      RunConfig cfg = config_or_default(ab_config);
      resolve_seed(cfg, ab_seed_opt, ab_seed);
      return cmd_ablate(cfg, ab_data, ab_eval, ab_out);
    }
    if (ex->parsed())
      return cmd_export_maps(ex_ckpt, ex_data, ex_frame, ex_out, ex_variant,
                             ex_seed_opt, ex_seed);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
