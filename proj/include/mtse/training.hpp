#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtse/encoder.hpp"
#include "mtse/metrics.hpp"
#include "mtse/rng.hpp"
#include "mtse/synthdata.hpp"

namespace mtse {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 8;
  int epochs = 10;
  int n_keep = 30;               // temporal subsample size per training step
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;   // optimizer steps; 0 = final only
  std::optional<double> clip_norm;
  int threads = 0;               // 0 = auto (see MTSE_THREADS)

  void validate() const;
};

// Order-preserving random subset: strictly increasing indices of length
// min(n_keep, t_avail).
std::vector<int> subsample_sequence(int t_avail, int n_keep, Rng& rng);

struct OptimizerState {
  long step = 0;
  std::vector<Tensor> m, v;  // Adam moments, parallel to the parameter list

  void ensure(const std::vector<Parameter*>& params);
};

// Applies one update from the gradients currently stored in the parameters.
// Throws NumericError on non-finite gradients.
void optimizer_step(std::vector<Parameter*>& params, OptimizerState& state,
                    const TrainConfig& cfg);

// Rescales the global gradient norm down to max_norm when exceeded; returns
// the pre-clip norm.
double clip_gradients(std::vector<Parameter*>& params, double max_norm);

struct HistoryRow {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
};

std::string history_csv(const std::vector<HistoryRow>& history);

struct FitHooks {
  // Called at every checkpoint_interval steps and once after the last step.
  std::function<void(long step, const EncoderParams&, const OptimizerState&)>
      checkpoint;
  std::function<void(const HistoryRow&)> row;
  // Checked after every optimizer step; returning true ends training early.
  std::function<bool(long step, const EncoderParams&)> stop;
};

struct FitResult {
  std::vector<HistoryRow> history;
  long steps = 0;
  std::optional<MetricsReport> validation;
};

// Mini-batch training on the train split: per-epoch shuffling and per-sample
// temporal subsampling from derived seeds, fixed-order gradient reduction,
// final evaluation on the validation split. Deterministic per (data, seeds).
FitResult fit(const Dataset& ds, EncoderParams& params,
              const EncoderConfig& cfg, const TrainConfig& train,
              const FitHooks* hooks = nullptr);

// Inference-mode evaluation over one split: full sequences, no subsampling,
// running batch-norm statistics.
MetricsReport evaluate(EncoderParams& params, const EncoderConfig& cfg,
                       const Dataset& ds, Split split,
                       ConfusionMatrix* out_cm = nullptr, int threads = 0);

// Replaces the EMA running statistics with exact population moments of the
// head's pre-normalization features over one split (full sequences, frozen
// weights). fit() runs this after the last optimizer step so inference
// normalizes with stable estimates instead of a late-training EMA window.
void reestimate_bn_stats(EncoderParams& params, const EncoderConfig& cfg,
                         const Dataset& ds, Split split, int threads = 0);

}  // namespace mtse
