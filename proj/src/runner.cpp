#include "dacca/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dacca/errors.hpp"
#include "dacca/metrics.hpp"

namespace fs = std::filesystem;

namespace dacca {

namespace {

constexpr std::uint64_t kSourceDataStream = 0xda7a50;
constexpr std::uint64_t kTargetDataStream = 0xda7a7a;

std::uint64_t seed_or_config(long long arg_seed, const RunConfig& config) {
  return static_cast<std::uint64_t>(arg_seed >= 0 ? arg_seed : config.seed);
}

Tensor scene_image_tensor(const LaneScene& scene) {
  return Tensor::from_values({3, scene.height, scene.width}, scene.image);
}

// Materializes one batch; labels go through the dataset's guarded accessor,
// so hidden-label datasets can only feed unlabeled batches.
TrainBatch make_train_batch(const Dataset& dataset, const BatchIndices& batch,
                            bool with_labels, int num_classes) {
  TrainBatch out;
  for (std::size_t k = 0; k < batch.scene.size(); ++k) {
    const LaneScene* scene = &dataset.scenes[batch.scene[k]];
    LaneScene flipped;
    if (batch.flip[k]) {
      flipped = flip_scene(*scene);
      scene = &flipped;
    }
    out.images.push_back(scene_image_tensor(*scene));
    if (with_labels) {
      dataset.labels(batch.scene[k]);  // contract check on the raw accessor
      out.labels.push_back(downsample_labels(scene->label, scene->height,
                                             scene->width, num_classes));
    }
  }
  return out;
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path + " for writing");
  return out;
}

void write_loss_row(std::ofstream& csv, int iter, const LossReport& r) {
  csv << iter << ',' << format_double(r.lr) << ','
      << format_double(r.source_ce) << ',' << format_double(r.target_ce)
      << ',' << format_double(r.sccl) << ',' << format_double(r.tccl) << ','
      << format_double(r.total) << '\n';
}

Dataset read_labeled_dataset(const std::string& path) {
  Dataset d = read_dataset(path);
  if (d.labels_hidden)
    throw data_error("dataset " + path +
                     " has hidden labels but labeled data is required");
  return d;
}

}  // namespace

void run_gen_data(const RunConfig& config, const GenDataArgs& args) {
  if (args.domain != "source" && args.domain != "target")
    throw config_error("gen-data: domain must be source or target");
  const Domain domain =
      args.domain == "source" ? Domain::source : Domain::target;
  const long long count = args.count >= 0 ? args.count : config.gen_count;
  if (count < 0) throw config_error("gen-data: negative count");
  const std::uint64_t seed = seed_or_config(args.seed, config);

  Dataset dataset;
  dataset.domain = args.domain;
  dataset.num_lanes = static_cast<int>(config.num_lanes);
  dataset.height = static_cast<int>(config.image_height);
  dataset.width = static_cast<int>(config.image_width);
  dataset.stroke_width = static_cast<int>(config.stroke_width);
  dataset.config_hash = config_hash(config);
  const DomainStyle style = domain_style(config, domain);
  Rng master(seed);
  for (long long i = 0; i < count; ++i) {
    // per-scene stream split from the master seed
    Rng scene_rng = master.child(static_cast<std::uint64_t>(i));
    dataset.scenes.push_back(generate_scene(
        scene_rng, dataset.num_lanes, dataset.height, dataset.width, style,
        dataset.stroke_width));
  }
  write_dataset(args.out_dir, dataset, args.hide_labels, args.force);
}

void run_pretrain(const RunConfig& config, const PretrainArgs& args) {
  const std::uint64_t seed = seed_or_config(args.seed, config);
  const int iters =
      static_cast<int>(args.iters >= 0 ? args.iters : config.pretrain_iters);
  Dataset source = read_labeled_dataset(args.source_dir);
  if (source.count() == 0) throw data_error("pretrain: empty source dataset");

  TrainerConfig tc = trainer_config(config, std::max(iters, 1), seed);
  tc.dfa_enabled = false;
  tc.ccl_enabled = false;

  TrainerState state = [&] {
    if (!args.init_checkpoint.empty()) {
      Checkpoint ckpt = load_checkpoint(args.init_checkpoint);
      TrainerState s = make_trainer(ckpt.model, tc);
      s.banks = ckpt.banks;
      s.iter = static_cast<int>(ckpt.iteration);
      return s;
    }
    return make_trainer(init_model(model_config(config, seed)), tc);
  }();

  const std::string csv_path =
      args.csv_path.empty() ? args.out_checkpoint + ".csv" : args.csv_path;
  std::ofstream csv = open_csv(csv_path);
  csv << "iter,lr,L_S,L_T,SCCL,TCCL,total\n";

  const int num_classes = state.student.config.num_classes();
  while (state.iter < iters) {
    const int iter = state.iter;
    const BatchIndices batch = batch_for_iteration(
        source.count(), tc.batch_size, config.augment_flip,
        seed ^ kSourceDataStream, iter);
    LossReport report =
        pretrain_step(state, make_train_batch(source, batch, true,
                                              num_classes));
    write_loss_row(csv, iter, report);
    if (config.checkpoint_every > 0 &&
        (iter + 1) % config.checkpoint_every == 0)
      save_checkpoint(args.out_checkpoint + ".iter" +
                          std::to_string(state.iter),
                      state.student, state.banks, state.iter, false);
  }
  save_checkpoint(args.out_checkpoint, state.student, state.banks, state.iter,
                  false);
}

void run_adapt(const RunConfig& config, const AdaptArgs& args) {
  const std::uint64_t seed = seed_or_config(args.seed, config);
  const int iters =
      static_cast<int>(args.iters >= 0 ? args.iters : config.adapt_iters);
  for (const std::string& a : args.ablate)
    if (a != "ccl" && a != "dfa" && a != "ubp" && a != "none")
      throw config_error("adapt: unknown ablation '" + a + "'");

  Dataset source = read_labeled_dataset(args.source_dir);
  Dataset target = read_dataset(args.target_dir);
  if (!target.labels_hidden)
    throw contract_error(
        "adapt: target labels are readable; adaptation requires a "
        "hidden-label target dataset");
  if (source.count() == 0 || target.count() == 0)
    throw data_error("adapt: empty dataset");

  Checkpoint init = load_checkpoint(args.init_checkpoint);
  TrainerConfig tc = trainer_config(config, std::max(iters, 1), seed);
  tc.base_lr = config.adapt_lr;
  if (args.ablate.count("ccl")) tc.ccl_enabled = false;
  if (args.ablate.count("dfa")) tc.dfa_enabled = false;
  if (args.ablate.count("ubp")) tc.dfa.ubp_enabled = false;

  TrainerState state = make_trainer(init.model, tc);
  state.banks = init.banks;

  const std::string csv_path =
      args.csv_path.empty() ? args.out_checkpoint + ".csv" : args.csv_path;
  std::ofstream csv = open_csv(csv_path);
  csv << "iter,lr,L_S,L_T,SCCL,TCCL,total\n";

  const int num_classes = state.student.config.num_classes();
  while (state.iter < iters) {
    const int iter = state.iter;
    const BatchIndices src_batch = batch_for_iteration(
        source.count(), tc.batch_size, config.augment_flip,
        seed ^ kSourceDataStream, iter);
    const BatchIndices tgt_batch = batch_for_iteration(
        target.count(), tc.batch_size, config.augment_flip,
        seed ^ kTargetDataStream, iter);
    LossReport report = train_step(
        state, make_train_batch(source, src_batch, true, num_classes),
        make_train_batch(target, tgt_batch, false, num_classes));
    write_loss_row(csv, iter, report);
    if (config.checkpoint_every > 0 &&
        (iter + 1) % config.checkpoint_every == 0)
      save_checkpoint(args.out_checkpoint + ".iter" +
                          std::to_string(state.iter),
                      state.student, state.banks, state.iter, tc.dfa_enabled);
  }
  save_checkpoint(args.out_checkpoint, state.student, state.banks, state.iter,
                  tc.dfa_enabled);
}

namespace {

CategoryMap prediction_map(Tape& tape, const ForwardResult& fw) {
  Tensor probs = softmax_channel(tape, fw.logits);
  const int classes = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const int hw = h * w;
  CategoryMap map;
  map.height = h;
  map.width = w;
  map.classes.resize(hw);
  map.confidence.resize(hw);
  for (int p = 0; p < hw; ++p) {
    int best = 0;
    double best_v = probs.values()[p];
    for (int c = 1; c < classes; ++c) {
      const double v = probs.values()[c * hw + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    map.classes[p] = best + 1;
    map.confidence[p] = best_v;
  }
  return map;
}

struct ImageEval {
  LaneEvalResult points;
  F1Result f1;
};

void write_svg_report(const std::string& path,
                      const std::vector<ImageEval>& evals,
                      const std::vector<std::vector<Lane>>& pred_lanes,
                      const std::vector<std::vector<Lane>>& gt_lanes,
                      int image_height, int image_width, int overlay_count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path + " for writing");

  const int bins = 10;
  std::vector<int> hist(bins, 0);
  for (const ImageEval& e : evals) {
    int b = static_cast<int>(e.points.accuracy * bins);
    hist[std::clamp(b, 0, bins - 1)] += 1;
  }
  int hist_max = 1;
  for (int h : hist) hist_max = std::max(hist_max, h);

  const int hist_w = 300, hist_h = 150, margin = 20;
  const int panels = std::min<int>(overlay_count,
                                   static_cast<int>(pred_lanes.size()));
  const double scale = 2.0;
  const int panel_w = static_cast<int>(image_width * scale);
  const int panel_h = static_cast<int>(image_height * scale);
  const int total_w =
      std::max(hist_w + 2 * margin,
               margin + panels * (panel_w + margin));
  const int total_h = hist_h + panel_h + 4 * margin;

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total_w
      << "\" height=\"" << total_h << "\">\n";
  out << "<text x=\"" << margin << "\" y=\"" << margin - 5
      << "\" font-size=\"12\">per-image point accuracy</text>\n";
  const double bar_w = static_cast<double>(hist_w) / bins;
  for (int b = 0; b < bins; ++b) {
    const double bh = hist_h * static_cast<double>(hist[b]) / hist_max;
    out << "<rect x=\"" << format_double(margin + b * bar_w) << "\" y=\""
        << format_double(margin + hist_h - bh) << "\" width=\""
        << format_double(bar_w - 2.0) << "\" height=\"" << format_double(bh)
        << "\" fill=\"#4878a8\"/>\n";
  }
  const int oy = hist_h + 3 * margin;
  for (int k = 0; k < panels; ++k) {
    const int ox = margin + k * (panel_w + margin);
    out << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << panel_w
        << "\" height=\"" << panel_h << "\" fill=\"#dddddd\"/>\n";
    auto polyline = [&](const Lane& lane, const char* color) {
      out << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\" points=\"";
      for (const LanePoint& p : lane.points)
        out << format_double(ox + p.x * scale) << ','
            << format_double(oy + p.y * scale) << ' ';
      out << "\"/>\n";
    };
    for (const Lane& lane : gt_lanes[k]) polyline(lane, "#2e8b57");
    for (const Lane& lane : pred_lanes[k]) polyline(lane, "#d9534f");
  }
  out << "</svg>\n";
}

}  // namespace

EvalSummary run_eval(const RunConfig& config, const EvalArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  Dataset data = read_dataset(args.data_dir);
  if (data.count() == 0) throw data_error("eval: empty dataset");
  // inference uses DFA only when it was part of training and the banks
  // are warmed
  const bool dfa_on = ckpt.dfa_trained && ckpt.banks.fully_initialized();
  DfaOptions dfa_opts;
  dfa_opts.ubp_threshold = config.ubp_threshold;
  const double base = effective_point_base(config);

  std::ofstream csv = open_csv(args.report_csv);
  csv << "image,accuracy,fp_rate,fn_rate,precision,recall,f1,tp,fp,fn\n";

  EvalSummary sum;
  long long correct = 0, total = 0, lf = 0, lp = 0, lm = 0, ly = 0;
  std::vector<ImageEval> evals;
  std::vector<std::vector<Lane>> all_pred, all_gt;
  for (int i = 0; i < data.count(); ++i) {
    const LaneScene& scene = data.scenes[i];
    Tape tape;
    ForwardResult fw = forward(tape, ckpt.model, scene_image_tensor(scene),
                               dfa_on ? &ckpt.banks : nullptr, dfa_on,
                               dfa_opts);
    CategoryMap pred = prediction_map(tape, fw);
    std::vector<Lane> lanes =
        extract_lanes(pred, data.num_lanes, scene.height, scene.width);
    std::vector<Lane> gt = scene_lanes(scene);

    ImageEval e;
    e.points = point_accuracy(lanes, gt, base);
    e.f1 = f1_score(lanes, gt, scene.height, scene.width, data.stroke_width,
                    config.iou_threshold);
    evals.push_back(e);
    all_pred.push_back(std::move(lanes));
    all_gt.push_back(std::move(gt));

    csv << i << ',' << format_double(e.points.accuracy) << ','
        << format_double(e.points.fp_rate) << ','
        << format_double(e.points.fn_rate) << ','
        << format_double(e.f1.precision) << ',' << format_double(e.f1.recall)
        << ',' << format_double(e.f1.f1) << ',' << e.f1.tp << ',' << e.f1.fp
        << ',' << e.f1.fn << '\n';

    correct += e.points.correct_points;
    total += e.points.total_points;
    lf += e.points.mispredicted_lanes;
    lp += e.points.predicted_lanes;
    lm += e.points.missing_lanes;
    ly += e.points.gt_lanes;
    sum.tp += e.f1.tp;
    sum.fp += e.f1.fp;
    sum.fn += e.f1.fn;
  }
  sum.images = data.count();
  sum.accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
  sum.fp_rate = lp > 0 ? static_cast<double>(lf) / lp : 0.0;
  sum.fn_rate = ly > 0 ? static_cast<double>(lm) / ly : 0.0;
  sum.precision =
      sum.tp + sum.fp > 0 ? static_cast<double>(sum.tp) / (sum.tp + sum.fp)
                          : 0.0;
  sum.recall = sum.tp + sum.fn > 0
                   ? static_cast<double>(sum.tp) / (sum.tp + sum.fn)
                   : 0.0;
  sum.f1 = sum.precision + sum.recall > 0.0
               ? 2.0 * sum.precision * sum.recall /
                     (sum.precision + sum.recall)
               : 0.0;
  csv << "summary," << format_double(sum.accuracy) << ','
      << format_double(sum.fp_rate) << ',' << format_double(sum.fn_rate)
      << ',' << format_double(sum.precision) << ','
      << format_double(sum.recall) << ',' << format_double(sum.f1) << ','
      << sum.tp << ',' << sum.fp << ',' << sum.fn << '\n';

  if (!args.svg_path.empty())
    write_svg_report(args.svg_path, evals, all_pred, all_gt, data.height,
                     data.width, static_cast<int>(config.svg_overlay_count));
  return sum;
}

}  // namespace dacca
