#include "mtse/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mtse/checkpoint.hpp"
#include "mtse/gradcheck.hpp"
#include "mtse/image_io.hpp"
#include "mtse/manifest.hpp"
#include "mtse/metrics.hpp"
#include "mtse/synthdata.hpp"
#include "mtse/training.hpp"

namespace mtse {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << text;
}

std::string ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("missing --out");
  fs::create_directories(out);
  return out;
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

SplitRatio parse_ratio(const std::string& text) {
  SplitRatio ratio;
  if (std::sscanf(text.c_str(), "%d:%d:%d", &ratio.train, &ratio.val,
                  &ratio.eval) != 3)
    throw ConfigError("bad split ratio (expected a:b:c): " + text);
  return ratio;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kValidation;
  if (name == "eval") return Split::kEvaluation;
  throw ConfigError("unknown split: " + name);
}

CellKind parse_cell(const std::string& name) {
  if (name == "rnn") return CellKind::kRnn;
  if (name == "lstm") return CellKind::kLstm;
  if (name == "gru") return CellKind::kGru;
  throw ConfigError("unknown cell kind: " + name);
}

// Per-pixel one-hot distribution built from the labels; the debug "perfect
// predictor" path. IGNORE pixels get class 0.
Tensor perfect_prediction(const LabelMap& y, int n_classes) {
  Tensor out({y.rows, y.cols, n_classes});
  for (int yy = 0; yy < y.rows; ++yy) {
    for (int xx = 0; xx < y.cols; ++xx) {
      const std::int16_t label = y.at(yy, xx);
      out.at(yy, xx, label == kIgnoreLabel ? 0 : label) = 1.0;
    }
  }
  return out;
}

json metrics_json(const MetricsReport& rep) {
  return json{{"overall_accuracy", rep.overall_accuracy},
              {"kappa", rep.kappa.value}};
}

}  // namespace

int run_generate(const GenerateOptions& opt) {
  if (opt.out.empty()) throw ConfigError("missing --out");
  SceneSpec spec;
  spec.tile = opt.tile;
  spec.n_bands = opt.bands;
  spec.n_classes = opt.classes;
  spec.t_per_season = opt.t_per_season;
  spec.seasons = opt.seasons;
  spec.cloud_prob = opt.cloud_prob;
  spec.noise_sigma = opt.noise_sigma;
  spec.seed = opt.seed;
  spec.min_field = opt.min_field;
  spec.class_skew = opt.class_skew;
  spec.validate();

  const SplitRatio ratio = parse_ratio(opt.ratio);
  const json config{{"tile", spec.tile},
                    {"bands", spec.n_bands},
                    {"classes", spec.n_classes},
                    {"t_per_season", spec.t_per_season},
                    {"seasons", spec.seasons},
                    {"cloud_prob", spec.cloud_prob},
                    {"noise_sigma", spec.noise_sigma},
                    {"seed", spec.seed},
                    {"min_field", spec.min_field},
                    {"class_skew", spec.class_skew},
                    {"samples", opt.samples},
                    {"ratio", opt.ratio}};

  const fs::path out_path(opt.out);
  const fs::path dir = out_path.has_parent_path() ? out_path.parent_path()
                                                  : fs::path(".");
  fs::create_directories(dir);
  DirLock lock(dir.string());
  RunManifest manifest("generate", config.dump());

  Dataset ds = generate_dataset(spec, opt.samples, ratio);
  ds.metadata_json = config.dump();
  write_dataset(ds, opt.out);

  manifest.add_output(opt.out);
  manifest.write(opt.out + ".manifest.json");
  return kExitOk;
}

int run_train(const TrainOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  if (opt.data.empty()) throw ConfigError("missing --data");
  const std::string out = ensure_out_dir(opt.out);
  DirLock lock(out);

  Dataset ds = read_dataset(opt.data);

  EncoderConfig cfg;
  cfg.cell.kind = parse_cell(opt.cell);
  cfg.cell.arrangement = Arrangement::kConv;
  cfg.cell.r = opt.r;
  cfg.cell.d = ds.depth;
  cfg.cell.k = opt.k_rnn;
  cfg.n_classes = ds.n_classes;
  cfg.k_class = opt.k_class;
  if (opt.activation == "relu")
    cfg.activation = HeadActivation::kRelu;
  else if (opt.activation == "leaky_relu")
    cfg.activation = HeadActivation::kLeakyRelu;
  else
    throw ConfigError("unknown activation: " + opt.activation);
  cfg.validate();

  TrainConfig train;
  if (opt.optimizer == "adam")
    train.optimizer = OptimizerKind::kAdam;
  else if (opt.optimizer == "sgd")
    train.optimizer = OptimizerKind::kSgd;
  else
    throw ConfigError("unknown optimizer: " + opt.optimizer);
  train.learning_rate = opt.lr;
  train.batch_size = opt.batch;
  train.epochs = opt.epochs;
  train.n_keep = opt.n_keep;
  train.seed = opt.seed;
  train.checkpoint_interval = opt.checkpoint_interval;
  if (opt.clip_norm > 0.0) train.clip_norm = opt.clip_norm;
  train.threads = opt.threads;
  train.validate();

  const json config{{"data", opt.data},
                    {"cell", opt.cell},
                    {"r", opt.r},
                    {"k_rnn", opt.k_rnn},
                    {"k_class", opt.k_class},
                    {"batch", opt.batch},
                    {"epochs", opt.epochs},
                    {"n_keep", opt.n_keep},
                    {"seed", opt.seed},
                    {"lr", opt.lr},
                    {"optimizer", opt.optimizer},
                    {"clip_norm", opt.clip_norm},
                    {"activation", opt.activation},
                    {"checkpoint_interval", opt.checkpoint_interval},
                    {"threads", opt.threads},
                    {"out", opt.out}};
  RunManifest manifest("train", config.dump());
  manifest.add_input(opt.data);

  EncoderParams params = init_encoder_params(cfg, derive_seed(opt.seed, 0x9a));

  std::vector<std::string> interval_checkpoints;
  FitHooks hooks;
  hooks.checkpoint = [&](long step, const EncoderParams& p,
                         const OptimizerState& o) {
    if (opt.checkpoint_interval <= 0) return;
    const std::string path =
        out + "/checkpoint_step" + std::to_string(step) + ".mtck";
    save_checkpoint(path, cfg, p, &o, step);
    interval_checkpoints.push_back(path);
  };

  const FitResult result = fit(ds, params, cfg, train, &hooks);

  json snapshot = json::object();
  if (result.validation) snapshot = metrics_json(*result.validation);
  // Final checkpoint carries the validation snapshot.
  save_checkpoint(out + "/checkpoint.mtck", cfg, params, nullptr, result.steps,
                  snapshot.dump());
  write_text(out + "/history.csv", history_csv(result.history));

  json extra{{"param_count_cell", param_count(cfg.cell)},
             {"param_count_total", encoder_param_count(cfg)},
             {"steps", result.steps},
             {"wall_seconds", elapsed_seconds(start)}};
  if (result.validation) extra["final_validation"] = snapshot;
  manifest.set_extra(extra.dump());
  manifest.add_output(out + "/checkpoint.mtck");
  manifest.add_output(out + "/history.csv");
  for (const std::string& p : interval_checkpoints) manifest.add_output(p);
  manifest.write(out + "/manifest.json");
  return kExitOk;
}

int run_eval(const EvalOptions& opt) {
  if (opt.checkpoint.empty() && !opt.perfect)
    throw ConfigError("missing --checkpoint");
  if (opt.data.empty()) throw ConfigError("missing --data");
  const std::string out = ensure_out_dir(opt.out);
  DirLock lock(out);

  Dataset ds = read_dataset(opt.data);
  const Split split = parse_split(opt.split);
  const std::vector<int> idx = ds.indices(split);
  if (idx.empty()) throw DataError("eval: split is empty");

  const json config{{"checkpoint", opt.checkpoint}, {"data", opt.data},
                    {"split", opt.split},           {"perfect", opt.perfect},
                    {"heatmap_scale", opt.heatmap_scale}};
  RunManifest manifest("eval", config.dump());
  manifest.add_input(opt.data);

  ConfusionMatrix cm(ds.n_classes);
  MetricsReport report;
  if (opt.perfect) {
    for (int i : idx) {
      const SequenceSample sample = ds.sample(i);
      cm.update(argmax_map(perfect_prediction(sample.y, ds.n_classes)),
                sample.y);
    }
    report = compute_report(cm);
  } else {
    manifest.add_input(opt.checkpoint);
    Checkpoint ck = load_checkpoint(opt.checkpoint);
    if (ck.config.n_classes != ds.n_classes)
      throw ConfigError("eval: checkpoint n_classes does not match dataset");
    if (ck.config.cell.d != ds.depth)
      throw ConfigError("eval: checkpoint input depth does not match dataset");
    report = evaluate(ck.params, ck.config, ds, split, &cm, opt.threads);
  }

  write_text(out + "/metrics.csv", metrics_csv(report));
  write_text(out + "/confusion_rownorm.csv", confusion_csv(cm));

  // Grayscale heatmap of the row-normalized matrix, one s x s block per cell.
  const int n = cm.classes();
  const int s = opt.heatmap_scale < 1 ? 1 : opt.heatmap_scale;
  const auto rows = row_normalize(cm);
  RgbImage heat(n * s, n * s);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::uint8_t v = scale_unit(rows[static_cast<std::size_t>(i)]
                                            [static_cast<std::size_t>(j)]);
      for (int y = i * s; y < (i + 1) * s; ++y)
        for (int x = j * s; x < (j + 1) * s; ++x) heat.at(y, x) = {v, v, v};
    }
  }
  write_ppm(heat, out + "/confusion.ppm");

  manifest.set_extra(metrics_json(report).dump());
  manifest.add_output(out + "/metrics.csv");
  manifest.add_output(out + "/confusion_rownorm.csv");
  manifest.add_output(out + "/confusion.ppm");
  manifest.write(out + "/manifest.json");
  return kExitOk;
}

namespace {

// 4-sigma band normalization for the RGB preview: [mu-2s, mu+2s] -> [0,1].
RgbImage rgb_preview(const Tensor& frame, int n_bands) {
  const int h = frame.extent(0), w = frame.extent(1);
  const int use = n_bands < 3 ? n_bands : 3;
  double mean[3] = {0, 0, 0}, sd[3] = {0, 0, 0};
  const double m = static_cast<double>(h) * w;
  for (int b = 0; b < use; ++b) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) mean[b] += frame.at(y, x, b);
    mean[b] /= m;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d = frame.at(y, x, b) - mean[b];
        sd[b] += d * d;
      }
    sd[b] = std::sqrt(sd[b] / m);
  }
  RgbImage img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<std::uint8_t, 3> px{};
      for (int b = 0; b < 3; ++b) {
        const int src = b < use ? b : 0;
        const double span = 4.0 * sd[src];
        const double v = span > 0.0
                             ? (frame.at(y, x, src) - (mean[src] - 2.0 * sd[src])) / span
                             : 0.5;
        px[static_cast<std::size_t>(b)] = scale_unit(v);
      }
      img.at(y, x) = px;
    }
  }
  return img;
}

}  // namespace

int run_infer(const InferOptions& opt) {
  if (opt.checkpoint.empty() && !opt.perfect)
    throw ConfigError("missing --checkpoint");
  if (opt.data.empty()) throw ConfigError("missing --data");
  const std::string out = ensure_out_dir(opt.out);
  DirLock lock(out);

  Dataset ds = read_dataset(opt.data);
  if (opt.sample < 0 || opt.sample >= ds.count())
    throw DataError("infer: sample index out of range");
  const SequenceSample sample = ds.sample(opt.sample);

  const json config{{"checkpoint", opt.checkpoint},
                    {"data", opt.data},
                    {"sample", opt.sample},
                    {"perfect", opt.perfect},
                    {"rgb_frame", opt.rgb_frame}};
  RunManifest manifest("infer", config.dump());
  manifest.add_input(opt.data);

  Tensor y_hat;
  if (opt.perfect) {
    y_hat = perfect_prediction(sample.y, ds.n_classes);
  } else {
    manifest.add_input(opt.checkpoint);
    Checkpoint ck = load_checkpoint(opt.checkpoint);
    if (ck.config.n_classes != ds.n_classes || ck.config.cell.d != ds.depth)
      throw ConfigError("infer: checkpoint does not match dataset");
    y_hat = forward(sample, ck.params, ck.config, BatchNormMode::kInfer).y_hat;
  }

  // RGB preview of one observation (default: middle unmasked frame).
  int frame_idx = opt.rgb_frame;
  if (frame_idx < 0) {
    std::vector<int> avail;
    for (int t = 0; t < sample.frames(); ++t)
      if (sample.mask[static_cast<std::size_t>(t)]) avail.push_back(t);
    if (avail.empty()) throw DataError("infer: sample has no observations");
    frame_idx = avail[avail.size() / 2];
  } else if (frame_idx >= sample.frames()) {
    throw DataError("infer: rgb frame index out of range");
  }
  write_ppm(rgb_preview(sample.frame(frame_idx), ds.depth - 2),
            out + "/input_rgb.ppm");

  write_ppm(colorize_labels(sample.y.v, sample.y.rows, sample.y.cols),
            out + "/labels.ppm");
  const LabelMap pred = argmax_map(y_hat);
  write_ppm(colorize_labels(pred.v, pred.rows, pred.cols),
            out + "/prediction.ppm");

  const Tensor lm = loss_map(y_hat, sample.y);
  const double loss_cap = std::log(static_cast<double>(ds.n_classes));
  write_pgm(gray_from_tensor(lm, false, 1.0 / loss_cap), out + "/loss.pgm");

  std::vector<std::string> activation_files;
  for (int c = 0; c < ds.n_classes; ++c) {
    Tensor channel({sample.y.rows, sample.y.cols});
    for (int y = 0; y < sample.y.rows; ++y)
      for (int x = 0; x < sample.y.cols; ++x)
        channel[static_cast<std::size_t>(y) * sample.y.cols + x] =
            y_hat.at(y, x, c);
    const std::string path = out + "/class_" + std::to_string(c) + ".pgm";
    write_pgm(gray_from_tensor(channel), path);
    activation_files.push_back(path);
  }

  manifest.set_extra(json{{"rgb_frame", frame_idx}}.dump());
  manifest.add_output(out + "/input_rgb.ppm");
  manifest.add_output(out + "/labels.ppm");
  manifest.add_output(out + "/prediction.ppm");
  manifest.add_output(out + "/loss.pgm");
  for (const std::string& p : activation_files) manifest.add_output(p);
  manifest.write(out + "/manifest.json");
  return kExitOk;
}

int run_activations(const ActivationsOptions& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("missing --checkpoint");
  if (opt.data.empty()) throw ConfigError("missing --data");
  if (opt.cells.empty()) throw ConfigError("missing --cells");
  const std::string out = ensure_out_dir(opt.out);
  DirLock lock(out);

  Dataset ds = read_dataset(opt.data);
  if (opt.sample < 0 || opt.sample >= ds.count())
    throw DataError("activations: sample index out of range");
  SequenceSample sample = ds.sample(opt.sample);

  Checkpoint ck = load_checkpoint(opt.checkpoint);
  if (ck.config.cell.d != ds.depth)
    throw ConfigError("activations: checkpoint does not match dataset");

  if (opt.inject_cloud_step >= 0) {
    if (opt.inject_cloud_step >= sample.frames() ||
        !sample.mask[static_cast<std::size_t>(opt.inject_cloud_step)])
      throw DataError("activations: cloud step is not a real observation");
    Rng rng(derive_seed(opt.seed, 0xc1));
    const int n_bands = ds.depth - 2;
    for (int y = 0; y < sample.rows(); ++y)
      for (int x = 0; x < sample.cols(); ++x)
        for (int b = 0; b < n_bands; ++b)
          sample.x[((static_cast<std::size_t>(opt.inject_cloud_step) *
                         sample.rows() +
                     y) *
                        sample.cols() +
                    x) *
                       ds.depth +
                   b] = 0.9 + rng.normal(0.0, 0.05);
  }

  const std::vector<GateMaps> maps =
      activations_trace(sample, ck.params, ck.config, opt.cells);

  const json config{{"checkpoint", opt.checkpoint},
                    {"data", opt.data},
                    {"sample", opt.sample},
                    {"cells", opt.cells},
                    {"inject_cloud_step", opt.inject_cloud_step},
                    {"seed", opt.seed}};
  RunManifest manifest("activations", config.dump());
  manifest.add_input(opt.data);
  manifest.add_input(opt.checkpoint);

  // One PGM per (cell, step, gate) plus a per-step spatial-mean CSV.
  struct GateExport {
    const char* name;
    const std::vector<Tensor>* maps;
    bool symmetric;
  };
  std::string csv = "step,cell,gate,mean\n";
  std::vector<std::string> files;
  for (const GateMaps& gm : maps) {
    std::vector<GateExport> gates;
    switch (ck.config.cell.kind) {
      case CellKind::kLstm:
        gates = {{"i", &gm.i, false},
                 {"j", &gm.j, true},
                 {"f", &gm.f, false},
                 {"c", &gm.c, true}};
        break;
      case CellKind::kGru:
        gates = {{"z", &gm.z, false}, {"s", &gm.s, false}};
        break;
      case CellKind::kRnn:
        gates = {{"h", &gm.h, true}};
        break;
    }
    for (std::size_t q = 0; q < gm.steps.size(); ++q) {
      for (const GateExport& ge : gates) {
        const Tensor& map = (*ge.maps)[q];
        char name[96];
        std::snprintf(name, sizeof(name), "cell%03d_t%03d_%s.pgm",
                      gm.cell_index, gm.steps[q], ge.name);
        const std::string path = out + "/" + name;
        write_pgm(gray_from_tensor(map, ge.symmetric), path);
        files.push_back(path);

        double mean = 0.0;
        for (std::size_t i = 0; i < map.size(); ++i) mean += map[i];
        mean /= static_cast<double>(map.size());
        char row[128];
        std::snprintf(row, sizeof(row), "%d,%d,%s,%.9g\n", gm.steps[q],
                      gm.cell_index, ge.name, mean);
        csv += row;
      }
    }
  }
  write_text(out + "/gate_means.csv", csv);

  // Cloud-sensitivity diagnostic: reported in the manifest, never asserted.
  json extra = json::object();
  if (opt.inject_cloud_step >= 0) {
    const char* gate = ck.config.cell.kind == CellKind::kLstm
                           ? "i"
                           : (ck.config.cell.kind == CellKind::kGru ? "z" : "h");
    json sensitivity = json::array();
    bool identifiable = false;
    for (const GateMaps& gm : maps) {
      const std::vector<Tensor>& series =
          ck.config.cell.kind == CellKind::kLstm
              ? gm.i
              : (ck.config.cell.kind == CellKind::kGru ? gm.z : gm.h);
      std::vector<double> means;
      double cloud_mean = 0.0;
      for (std::size_t q = 0; q < gm.steps.size(); ++q) {
        double mean = 0.0;
        for (std::size_t i = 0; i < series[q].size(); ++i) mean += series[q][i];
        mean /= static_cast<double>(series[q].size());
        if (gm.steps[q] == opt.inject_cloud_step)
          cloud_mean = mean;
        else
          means.push_back(mean);
      }
      std::sort(means.begin(), means.end());
      const double median = means.empty()
                                ? cloud_mean
                                : means[means.size() / 2];
      const double dev = std::fabs(cloud_mean - median);
      identifiable = identifiable || dev > 0.1;
      sensitivity.push_back(json{{"cell", gm.cell_index},
                                 {"gate", gate},
                                 {"cloud_step_mean", cloud_mean},
                                 {"clean_median", median},
                                 {"abs_dev", dev}});
    }
    extra["cloud_sensitivity"] = sensitivity;
    extra["cloud_identifiable"] = identifiable;
  }
  manifest.set_extra(extra.dump());
  for (const std::string& p : files) manifest.add_output(p);
  manifest.add_output(out + "/gate_means.csv");
  manifest.write(out + "/manifest.json");
  return kExitOk;
}

int run_gradcheck(const GradcheckCliOptions& opt) {
  GradCheckOptions gopt;
  gopt.rows = opt.rows;
  gopt.cols = opt.cols;
  gopt.steps = opt.steps;
  gopt.r = opt.r;
  gopt.d = opt.d;
  gopt.n_classes = opt.classes;
  gopt.probes = opt.probes;
  gopt.seed = opt.seed;
  gopt.inject_bad_grad = opt.inject_bad_grad;

  const std::vector<GradCheckEntry> entries = run_gradcheck_suite(gopt);
  std::string report;
  bool all_pass = true;
  for (const GradCheckEntry& e : entries) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-14s max_rel_err=%-12.3g tol=%g %s\n",
                  e.op.c_str(), e.max_rel_err, e.tolerance,
                  e.pass ? "PASS" : "FAIL");
    report += line;
    all_pass = all_pass && e.pass;
  }
  std::fputs(report.c_str(), stdout);

  if (!opt.out.empty()) {
    const std::string out = ensure_out_dir(opt.out);
    DirLock lock(out);
    const json config{{"rows", opt.rows},     {"cols", opt.cols},
                      {"steps", opt.steps},   {"r", opt.r},
                      {"d", opt.d},           {"classes", opt.classes},
                      {"probes", opt.probes}, {"seed", opt.seed},
                      {"inject_bad_grad", opt.inject_bad_grad}};
    RunManifest manifest("gradcheck", config.dump());
    write_text(out + "/gradcheck.txt", report);
    manifest.add_output(out + "/gradcheck.txt");
    manifest.set_extra(json{{"pass", all_pass}}.dump());
    manifest.write(out + "/manifest.json");
  }
  return all_pass ? kExitOk : kExitNumeric;
}

}  // namespace mtse
