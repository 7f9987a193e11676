// mtse: generate synthetic multi-temporal datasets, train and evaluate the
// bidirectional convolutional recurrent encoder, export prediction maps and
// gate activations, and run the finite-difference gradient checker.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtse/cli.hpp"
#include "mtse/errors.hpp"

namespace {

using nlohmann::json;

// Applies values from the --config JSON file to every flag the user did not
// set on the command line (command line wins).
class ConfigMerge {
 public:
  ConfigMerge(CLI::App* cmd, const std::string& path) : cmd_(cmd) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw mtse::ConfigError("cannot open config file: " + path);
    cfg_ = json::parse(in, nullptr, false);
    if (cfg_.is_discarded())
      throw mtse::ConfigError("config file is not valid JSON: " + path);
  }

  template <class T>
  void apply(const std::string& flag, T& var) {
    if (cfg_.is_null() || !cfg_.contains(flag)) return;
    const CLI::Option* opt = cmd_->get_option_no_throw("--" + flag);
    if (opt && opt->count() > 0) return;
    try {
      var = cfg_.at(flag).get<T>();
    } catch (const json::exception&) {
      throw mtse::ConfigError("config file: bad value for \"" + flag + "\"");
    }
  }

 private:
  CLI::App* cmd_;
  json cfg_;
};

std::string config_flag(CLI::App* cmd) {
  static std::string dummy;
  auto holder = std::make_shared<std::string>();
  cmd->add_option_function<std::string>(
      "--config", [holder](const std::string& v) { *holder = v; },
      "JSON file supplying any flag; command line overrides");
  // The value is retrieved after parse via the option's results.
  (void)dummy;
  return {};
}

std::string get_config_path(CLI::App* cmd) {
  const CLI::Option* opt = cmd->get_option_no_throw("--config");
  if (opt && opt->count() > 0) return opt->as<std::string>();
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-temporal sequence encoder"};
  app.require_subcommand(1);

  mtse::GenerateOptions gen;
  CLI::App* c_gen = app.add_subcommand("generate", "generate a synthetic dataset");
  c_gen->add_option("--tile", gen.tile, "tile extent in pixels (24 or 48)");
  c_gen->add_option("--bands", gen.bands, "spectral bands (depth = bands + 2)");
  c_gen->add_option("--classes", gen.classes, "number of classes (2..17)");
  c_gen->add_option("--t-per-season", gen.t_per_season, "observations per season");
  c_gen->add_option("--seasons", gen.seasons, "seasons (1 or 2)");
  c_gen->add_option("--cloud-prob", gen.cloud_prob, "cloud event probability per observation");
  c_gen->add_option("--noise-sigma", gen.noise_sigma, "additive reflectance noise sigma");
  c_gen->add_option("--seed", gen.seed, "generator seed");
  c_gen->add_option("--min-field", gen.min_field, "minimum field size in pixels");
  c_gen->add_option("--class-skew", gen.class_skew, "Zipf exponent of the class draw");
  c_gen->add_option("--samples", gen.samples, "number of samples");
  c_gen->add_option("--ratio", gen.ratio, "train:val:eval split ratio");
  c_gen->add_option("--out", gen.out, "output dataset file");
  config_flag(c_gen);

  mtse::TrainOptions tr;
  CLI::App* c_tr = app.add_subcommand("train", "train the encoder");
  c_tr->add_option("--data", tr.data, "dataset file");
  c_tr->add_option("--cell", tr.cell, "cell kind: rnn | lstm | gru");
  c_tr->add_option("--r", tr.r, "recurrent cells");
  c_tr->add_option("--k-rnn", tr.k_rnn, "recurrent kernel extent");
  c_tr->add_option("--k-class", tr.k_class, "classification kernel extent");
  c_tr->add_option("--batch", tr.batch, "batch size");
  c_tr->add_option("--epochs", tr.epochs, "epochs");
  c_tr->add_option("--n-keep", tr.n_keep, "temporal subsample size per step");
  c_tr->add_option("--seed", tr.seed, "training seed");
  c_tr->add_option("--lr", tr.lr, "learning rate");
  c_tr->add_option("--optimizer", tr.optimizer, "adam | sgd");
  c_tr->add_option("--clip-norm", tr.clip_norm, "global gradient clip (0 = off)");
  c_tr->add_option("--activation", tr.activation, "head activation: relu | leaky_relu");
  c_tr->add_option("--ckpt-interval", tr.checkpoint_interval, "checkpoint every N steps");
  c_tr->add_option("--threads", tr.threads, "worker threads (0 = auto)");
  c_tr->add_option("--out", tr.out, "output directory");
  config_flag(c_tr);

  mtse::EvalOptions ev;
  CLI::App* c_ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  c_ev->add_option("--checkpoint", ev.checkpoint, "checkpoint file");
  c_ev->add_option("--data", ev.data, "dataset file");
  c_ev->add_option("--split", ev.split, "train | val | eval");
  c_ev->add_option("--out", ev.out, "output directory");
  c_ev->add_flag("--perfect", ev.perfect, "debug: feed labels as logits");
  c_ev->add_option("--heatmap-scale", ev.heatmap_scale, "pixels per confusion cell");
  c_ev->add_option("--threads", ev.threads, "worker threads (0 = auto)");
  config_flag(c_ev);

  mtse::InferOptions inf;
  CLI::App* c_inf = app.add_subcommand("infer", "export prediction/activation/loss maps");
  c_inf->add_option("--checkpoint", inf.checkpoint, "checkpoint file");
  c_inf->add_option("--data", inf.data, "dataset file");
  c_inf->add_option("--sample", inf.sample, "sample index");
  c_inf->add_option("--out", inf.out, "output directory");
  c_inf->add_flag("--perfect", inf.perfect, "debug: feed labels as logits");
  c_inf->add_option("--rgb-frame", inf.rgb_frame, "observation for the RGB preview");
  config_flag(c_inf);

  mtse::ActivationsOptions act;
  CLI::App* c_act = app.add_subcommand("activations", "export per-step gate maps");
  c_act->add_option("--checkpoint", act.checkpoint, "checkpoint file");
  c_act->add_option("--data", act.data, "dataset file");
  c_act->add_option("--sample", act.sample, "sample index");
  c_act->add_option("--cells", act.cells, "cell indices to trace")->delimiter(',');
  c_act->add_option("--out", act.out, "output directory");
  c_act->add_option("--inject-cloud-step", act.inject_cloud_step,
                    "overwrite one observation with a whole-frame cloud");
  c_act->add_option("--seed", act.seed, "seed for the injected cloud");
  config_flag(c_act);

  mtse::GradcheckCliOptions gc;
  CLI::App* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  c_gc->add_option("--rows", gc.rows, "tile rows");
  c_gc->add_option("--cols", gc.cols, "tile cols");
  c_gc->add_option("--t", gc.steps, "sequence length");
  c_gc->add_option("--r", gc.r, "recurrent cells");
  c_gc->add_option("--d", gc.d, "input depth");
  c_gc->add_option("--classes", gc.classes, "classes");
  c_gc->add_option("--probes", gc.probes, "probed coordinates per op");
  c_gc->add_option("--seed", gc.seed, "probe seed");
  c_gc->add_option("--inject-bad-grad", gc.inject_bad_grad,
                   "debug: corrupt the named op's analytic gradient");
  c_gc->add_option("--out", gc.out, "optional report directory");
  config_flag(c_gc);

  try {
    app.parse(argc, argv);

    if (*c_gen) {
      ConfigMerge m(c_gen, get_config_path(c_gen));
      m.apply("tile", gen.tile);
      m.apply("bands", gen.bands);
      m.apply("classes", gen.classes);
      m.apply("t-per-season", gen.t_per_season);
      m.apply("seasons", gen.seasons);
      m.apply("cloud-prob", gen.cloud_prob);
      m.apply("noise-sigma", gen.noise_sigma);
      m.apply("seed", gen.seed);
      m.apply("min-field", gen.min_field);
      m.apply("class-skew", gen.class_skew);
      m.apply("samples", gen.samples);
      m.apply("ratio", gen.ratio);
      m.apply("out", gen.out);
      return mtse::run_generate(gen);
    }
    if (*c_tr) {
      ConfigMerge m(c_tr, get_config_path(c_tr));
      m.apply("data", tr.data);
      m.apply("cell", tr.cell);
      m.apply("r", tr.r);
      m.apply("k-rnn", tr.k_rnn);
      m.apply("k-class", tr.k_class);
      m.apply("batch", tr.batch);
      m.apply("epochs", tr.epochs);
      m.apply("n-keep", tr.n_keep);
      m.apply("seed", tr.seed);
      m.apply("lr", tr.lr);
      m.apply("optimizer", tr.optimizer);
      m.apply("clip-norm", tr.clip_norm);
      m.apply("activation", tr.activation);
      m.apply("ckpt-interval", tr.checkpoint_interval);
      m.apply("threads", tr.threads);
      m.apply("out", tr.out);
      return mtse::run_train(tr);
    }
    if (*c_ev) {
      ConfigMerge m(c_ev, get_config_path(c_ev));
      m.apply("checkpoint", ev.checkpoint);
      m.apply("data", ev.data);
      m.apply("split", ev.split);
      m.apply("out", ev.out);
      m.apply("perfect", ev.perfect);
      m.apply("heatmap-scale", ev.heatmap_scale);
      m.apply("threads", ev.threads);
      return mtse::run_eval(ev);
    }
    if (*c_inf) {
      ConfigMerge m(c_inf, get_config_path(c_inf));
      m.apply("checkpoint", inf.checkpoint);
      m.apply("data", inf.data);
      m.apply("sample", inf.sample);
      m.apply("out", inf.out);
      m.apply("perfect", inf.perfect);
      m.apply("rgb-frame", inf.rgb_frame);
      return mtse::run_infer(inf);
    }
    if (*c_act) {
      ConfigMerge m(c_act, get_config_path(c_act));
      m.apply("checkpoint", act.checkpoint);
      m.apply("data", act.data);
      m.apply("sample", act.sample);
      m.apply("cells", act.cells);
      m.apply("out", act.out);
      m.apply("inject-cloud-step", act.inject_cloud_step);
      m.apply("seed", act.seed);
      return mtse::run_activations(act);
    }
    if (*c_gc) {
      ConfigMerge m(c_gc, get_config_path(c_gc));
      m.apply("rows", gc.rows);
      m.apply("cols", gc.cols);
      m.apply("t", gc.steps);
      m.apply("r", gc.r);
      m.apply("d", gc.d);
      m.apply("classes", gc.classes);
      m.apply("probes", gc.probes);
      m.apply("seed", gc.seed);
      m.apply("inject-bad-grad", gc.inject_bad_grad);
      m.apply("out", gc.out);
      return mtse::run_gradcheck(gc);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mtse::kExitConfig;
  } catch (const mtse::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return mtse::kExitConfig;
  } catch (const mtse::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return mtse::kExitData;
  } catch (const mtse::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return mtse::kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
