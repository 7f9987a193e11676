#pragma once

#include <cstdint>
#include <vector>

#include "mtse/cells.hpp"
#include "mtse/tensor.hpp"

namespace mtse {

inline constexpr std::int16_t kIgnoreLabel = -1;
inline constexpr double kPadValue = 0.0;

// Integer label raster; kIgnoreLabel marks unlabeled pixels.
struct LabelMap {
  int rows = 0;
  int cols = 0;
  std::vector<std::int16_t> v;

  LabelMap() = default;
  LabelMap(int r, int c, std::int16_t fill = 0)
      : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

  std::int16_t& at(int y, int x) {
    return v[static_cast<std::size_t>(y) * cols + x];
  }
  std::int16_t at(int y, int x) const {
    return v[static_cast<std::size_t>(y) * cols + x];
  }
  bool operator==(const LabelMap& o) const {
    return rows == o.rows && cols == o.cols && v == o.v;
  }
};

// One tile's observation sequence with its validity mask and ground truth.
// Padded (mask=false) frames hold kPadValue and must not influence anything.
struct SequenceSample {
  Tensor x;                    // [T, h, w, d]
  std::vector<std::uint8_t> mask;  // size T, nonzero = real observation
  LabelMap y;

  int frames() const { return x.extent(0); }
  int rows() const { return x.extent(1); }
  int cols() const { return x.extent(2); }
  int depth() const { return x.extent(3); }
  Tensor frame(int t) const;   // [h, w, d] copy of one observation
};

enum class HeadActivation { kRelu, kLeakyRelu };

struct EncoderConfig {
  CellConfig cell;             // arrangement must be conv
  int n_classes = 2;
  int k_class = 3;
  HeadActivation activation = HeadActivation::kLeakyRelu;
  double leaky_alpha = 0.1;

  // Width of the k_class convolution's output; the 1x1 projection then maps
  // it to n_classes.
  int head_width() const { return cell.r; }
  void validate() const;
};

// All trainable state of the network plus the batch-norm running statistics.
// The k_class convolution carries no bias: it feeds batch norm, whose mean
// subtraction would cancel one, leaving a dead parameter.
struct EncoderParams {
  CellParams cell;
  Parameter head_w1;                // k_class conv, 2r -> head_width
  Parameter head_gamma, head_beta;  // batch norm
  Parameter head_w2, head_b2;       // 1x1 conv, head_width -> n
  RunningStats bn_stats;

  std::vector<Parameter*> all();    // fixed enumeration order
  std::vector<const Parameter*> all() const;
  void zero_grads();
};

EncoderParams init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed);
long encoder_param_count(const EncoderConfig& cfg);

// Casts every parameter and running statistic through 32-bit floats,
// the checkpoint storage precision.
void round_params_to_f32(EncoderParams& params);

// Concatenated final states of the two passes: first r channels from the
// forward pass, last r from the reverse pass.
struct SequenceRepresentation {
  Tensor rep;           // [h, w, 2r]
  CellState final_fwd;
  CellState final_rev;
};

// Everything the backward pass and the activation trace need from a forward.
struct EncoderTrace {
  std::vector<int> steps;                 // unmasked frame indices, ascending
  std::vector<GateTraceEntry> fwd, rev;   // per processed step
  SequenceRepresentation repr;
  Tensor head_pre1;                       // k_class conv output
  BatchNormCache bn_cache;
  Tensor head_bn_out;
  Tensor head_act_out;
  Tensor logits;
  Tensor y_hat;
  BatchNormMode mode = BatchNormMode::kTrain;
  double loss = 0.0;
  long counted_pixels = 0;
};

// Bidirectional encoding with shared weights; masked frames are skipped so
// the state carries through unchanged.
SequenceRepresentation encode(const SequenceSample& sample,
                              const EncoderParams& params,
                              const EncoderConfig& cfg,
                              EncoderTrace* trace = nullptr);

// Classification head: k_class conv -> batch norm -> activation -> 1x1 conv
// -> per-pixel softmax. With update_bn_stats=false a train-mode call leaves
// the running statistics untouched (the caller folds them from the trace).
Tensor classify(const Tensor& rep, EncoderParams& params,
                const EncoderConfig& cfg, BatchNormMode mode,
                EncoderTrace* trace = nullptr, bool update_bn_stats = true);

// Mean cross-entropy over non-IGNORE pixels, log clamped at 1e-12.
double cross_entropy(const Tensor& y_hat, const LabelMap& y);

struct ForwardResult {
  Tensor y_hat;
  double loss = 0.0;
};

ForwardResult forward(const SequenceSample& sample, EncoderParams& params,
                      const EncoderConfig& cfg, BatchNormMode mode,
                      EncoderTrace* trace = nullptr,
                      bool update_bn_stats = true);

// Full BPTT through head and both directions. Accumulates into params.*.grad.
// When grad_x is given it receives one [h,w,d] gradient per frame (zeros for
// masked frames).
void backward(const SequenceSample& sample, EncoderParams& params,
              const EncoderConfig& cfg, const EncoderTrace& trace,
              std::vector<Tensor>* grad_x = nullptr);

// Per-pixel argmax of the class distribution; ties take the lowest index.
LabelMap argmax_map(const Tensor& y_hat);

// Per-pixel cross-entropy map (zeros at IGNORE pixels).
Tensor loss_map(const Tensor& y_hat, const LabelMap& y);

// Forward-direction gate maps for selected cells. For LSTM: i, j, f and the
// cell-state slice; for GRU: z and s; for RNN: the h slice only.
struct GateMaps {
  int cell_index = 0;
  std::vector<int> steps;                  // original frame indices
  std::vector<Tensor> i, j, f, c, z, s, h; // [h,w] slices per step
};

std::vector<GateMaps> activations_trace(const SequenceSample& sample,
                                        const EncoderParams& params,
                                        const EncoderConfig& cfg,
                                        const std::vector<int>& cell_indices);

}  // namespace mtse
