#include "mtse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mtse/parallel.hpp"

namespace mtse {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (n_keep < 1) throw ConfigError("train: n_keep must be >= 1");
  if (learning_rate < 0.0) throw ConfigError("train: negative learning rate");
  if (clip_norm && *clip_norm <= 0.0)
    throw ConfigError("train: clip norm must be positive");
}

std::vector<int> subsample_sequence(int t_avail, int n_keep, Rng& rng) {
  if (t_avail < 1) throw DataError("subsample: no observations available");
  std::vector<int> indices(static_cast<std::size_t>(t_avail));
  for (int i = 0; i < t_avail; ++i) indices[static_cast<std::size_t>(i)] = i;
  if (n_keep >= t_avail) return indices;
  rng.shuffle(indices);
  indices.resize(static_cast<std::size_t>(n_keep));
  std::sort(indices.begin(), indices.end());
  return indices;
}

void OptimizerState::ensure(const std::vector<Parameter*>& params) {
  if (m.size() == params.size()) return;
  m.clear();
  v.clear();
  for (const Parameter* p : params) {
    m.emplace_back(p->value.shape(), 0.0);
    v.emplace_back(p->value.shape(), 0.0);
  }
}

double clip_gradients(std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (std::size_t i = 0; i < p->grad.size(); ++i) sq += p->grad[i] * p->grad[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Parameter* p : params)
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
  }
  return norm;
}

void optimizer_step(std::vector<Parameter*>& params, OptimizerState& state,
                    const TrainConfig& cfg) {
  for (const Parameter* p : params)
    p->grad.check_finite(("gradient of " + p->name).c_str());

  state.step += 1;
  if (cfg.optimizer == OptimizerKind::kSgd) {
    for (Parameter* p : params)
      for (std::size_t i = 0; i < p->value.size(); ++i)
        p->value[i] -= cfg.learning_rate * p->grad[i];
    return;
  }

  state.ensure(params);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p->value[i] -= cfg.learning_rate * m_hat /
                     (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  }
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out = "step,epoch,loss\n";
  char buf[64];
  for (const HistoryRow& row : history) {
    std::snprintf(buf, sizeof(buf), "%ld,%d,%.12g\n", row.step, row.epoch,
                  row.loss);
    out += buf;
  }
  return out;
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5u;
constexpr std::uint64_t kSubsampleSalt = 0x51u;

// Order-preserving temporal subset of the unmasked frames of one sample.
SequenceSample subsampled(const SequenceSample& full, int n_keep, Rng& rng) {
  std::vector<int> avail;
  for (int t = 0; t < full.frames(); ++t)
    if (full.mask[static_cast<std::size_t>(t)]) avail.push_back(t);
  if (avail.empty()) throw DataError("train: sample has no observations");

  const std::vector<int> keep =
      subsample_sequence(static_cast<int>(avail.size()), n_keep, rng);
  SequenceSample out;
  out.y = full.y;
  out.mask.assign(keep.size(), 1);
  const int h = full.rows(), w = full.cols(), d = full.depth();
  out.x = Tensor({static_cast<int>(keep.size()), h, w, d});
  const std::size_t frame_elems = static_cast<std::size_t>(h) * w * d;
  for (std::size_t q = 0; q < keep.size(); ++q) {
    const int src = avail[static_cast<std::size_t>(keep[q])];
    std::copy_n(full.x.data() + static_cast<std::size_t>(src) * frame_elems,
                frame_elems, out.x.data() + q * frame_elems);
  }
  return out;
}

struct SampleWork {
  EncoderParams grads;   // private clone; grads merged in sample order
  EncoderTrace trace;
  double loss = 0.0;
};

}  // namespace

FitResult fit(const Dataset& ds, EncoderParams& params,
              const EncoderConfig& cfg, const TrainConfig& train,
              const FitHooks* hooks) {
  cfg.validate();
  train.validate();
  if (ds.depth != cfg.cell.d || ds.n_classes != cfg.n_classes)
    throw ConfigError("fit: dataset dims do not match encoder config");
  std::vector<int> train_idx = ds.indices(Split::kTrain);
  if (train_idx.empty()) throw DataError("fit: training split is empty");

  const int threads = resolve_thread_count(train.threads);
  FitResult result;
  OptimizerState opt;
  std::vector<Parameter*> plist = params.all();
  opt.ensure(plist);
  bool stopped = false;

  for (int epoch = 0; epoch < train.epochs && !stopped; ++epoch) {
    std::vector<int> order = train_idx;
    Rng shuffle_rng(derive_seed(train.seed ^ kShuffleSalt,
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t count = std::min(
          static_cast<std::size_t>(train.batch_size), order.size() - start);
      std::vector<SampleWork> work(count);

      parallel_for(static_cast<int>(count), threads, [&](int bi) {
        const int sample_idx = order[start + static_cast<std::size_t>(bi)];
        Rng sub_rng(derive_seed(train.seed ^ kSubsampleSalt,
                                static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(sample_idx)));
        const SequenceSample sample =
            subsampled(ds.sample(sample_idx), train.n_keep, sub_rng);

        SampleWork& sw = work[static_cast<std::size_t>(bi)];
        sw.grads = params;  // value snapshot; grads start at zero
        sw.grads.zero_grads();
        sw.loss = forward(sample, sw.grads, cfg, BatchNormMode::kTrain,
                          &sw.trace, /*update_bn_stats=*/false)
                      .loss;
        backward(sample, sw.grads, cfg, sw.trace);
      });

      // Fixed-order reduction keeps results identical across thread counts.
      for (Parameter* p : plist) p->zero_grad();
      double batch_loss = 0.0;
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t bi = 0; bi < count; ++bi) {
        const SampleWork& sw = work[bi];
        batch_loss += sw.loss * inv;
        const std::vector<const Parameter*> src = sw.grads.all();
        for (std::size_t pi = 0; pi < plist.size(); ++pi)
          for (std::size_t i = 0; i < plist[pi]->grad.size(); ++i)
            plist[pi]->grad[i] += src[pi]->grad[i] * inv;
        fold_running_stats(params.bn_stats, sw.trace.bn_cache.batch_mean,
                           sw.trace.bn_cache.batch_var);
      }

      if (train.clip_norm) clip_gradients(plist, *train.clip_norm);
      optimizer_step(plist, opt, train);

      HistoryRow row{opt.step, epoch, batch_loss};
      result.history.push_back(row);
      if (hooks && hooks->row) hooks->row(row);
      if (hooks && hooks->checkpoint && train.checkpoint_interval > 0 &&
          opt.step % train.checkpoint_interval == 0)
        hooks->checkpoint(opt.step, params, opt);
      if (hooks && hooks->stop && hooks->stop(opt.step, params)) {
        stopped = true;
        break;
      }
    }
  }

  result.steps = opt.step;
  reestimate_bn_stats(params, cfg, ds, Split::kTrain, threads);
  if (hooks && hooks->checkpoint) hooks->checkpoint(opt.step, params, opt);
  if (!ds.indices(Split::kValidation).empty())
    result.validation =
        evaluate(params, cfg, ds, Split::kValidation, nullptr, threads);
  return result;
}

void reestimate_bn_stats(EncoderParams& params, const EncoderConfig& cfg,
                         const Dataset& ds, Split split, int threads) {
  const std::vector<int> idx = ds.indices(split);
  if (idx.empty()) throw DataError("bn re-estimation: split is empty");

  const int c = params.bn_stats.mean.extent(0);
  std::vector<Tensor> means(idx.size()), vars(idx.size());
  parallel_for(static_cast<int>(idx.size()), resolve_thread_count(threads),
               [&](int i) {
                 EncoderTrace trace;
                 const SequenceSample sample =
                     ds.sample(idx[static_cast<std::size_t>(i)]);
                 EncoderParams local = params;  // values shared, stats scratch
                 forward(sample, local, cfg, BatchNormMode::kTrain, &trace,
                         /*update_bn_stats=*/false);
                 means[static_cast<std::size_t>(i)] =
                     std::move(trace.bn_cache.batch_mean);
                 vars[static_cast<std::size_t>(i)] =
                     std::move(trace.bn_cache.batch_var);
               });

  // Exact population moments over all tiles (equal pixel counts per tile):
  // mu = E[tile mean], var = E[tile var + tile mean^2] - mu^2.
  Tensor mu({c}), second({c});
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] += means[i][ch] * inv;
      second[ch] += (vars[i][ch] + means[i][ch] * means[i][ch]) * inv;
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    params.bn_stats.mean[ch] = mu[ch];
    params.bn_stats.var[ch] = second[ch] - mu[ch] * mu[ch];
  }
}

MetricsReport evaluate(EncoderParams& params, const EncoderConfig& cfg,
                       const Dataset& ds, Split split, ConfusionMatrix* out_cm,
                       int threads) {
  cfg.validate();
  if (ds.depth != cfg.cell.d || ds.n_classes != cfg.n_classes)
    throw ConfigError("evaluate: dataset dims do not match encoder config");
  const std::vector<int> idx = ds.indices(split);
  if (idx.empty()) throw DataError("evaluate: split is empty");

  std::vector<LabelMap> preds(idx.size());
  parallel_for(static_cast<int>(idx.size()), resolve_thread_count(threads),
               [&](int i) {
                 const SequenceSample sample =
                     ds.sample(idx[static_cast<std::size_t>(i)]);
                 const ForwardResult fr =
                     forward(sample, params, cfg, BatchNormMode::kInfer);
                 preds[static_cast<std::size_t>(i)] = argmax_map(fr.y_hat);
               });

  ConfusionMatrix cm(ds.n_classes);
  for (std::size_t i = 0; i < idx.size(); ++i)
    cm.update(preds[i], ds.sample(idx[static_cast<std::size_t>(i)]).y);
  if (out_cm) *out_cm = cm;
  return compute_report(cm);
}

}  // namespace mtse
