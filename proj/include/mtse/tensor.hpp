#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mtse/errors.hpp"

namespace mtse {

// Dense row-major multi-axis array of doubles, rank 1..5. The universal
// value type for observations, weights, gates and maps. 64-bit arithmetic
// everywhere; 32-bit precision exists only inside dataset/checkpoint files.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(numel(shape_), fill);
  }

  static Tensor from_data(std::vector<int> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    if (data.size() != numel(t.shape_))
      throw ConfigError("tensor data length does not match shape");
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 [rows, cols, channels] accessors; the hot layout in this library.
  double& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }
  double at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  // Throws NumericError when any element is NaN/Inf; `what` names the op.
  void check_finite(const char* what) const;

  static std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
  }

 private:
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 5)
      throw ConfigError("tensor rank must be 1..5");
    for (int e : shape_)
      if (e <= 0) throw ConfigError("tensor extents must be positive");
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

// Named value/gradient pair. Names are unique within a model.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

  void zero_grad() { grad.fill(0.0); }
};

// ---------------------------------------------------------------------------
// Convolution: same-padding, zero fill, odd kernel.
// input [h,w,c_in], kernel [k,k,c_in,c_out], bias [c_out] -> [h,w,c_out].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                          const Tensor& grad_out);

// Dense affine map: x [m], weight [m,n], bias [n] -> [n].
// Accumulation order matches a 1x1 conv over a 1x1 tile bit for bit.
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct AffineGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
AffineGrads affine_backward(const Tensor& x, const Tensor& weight,
                            const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Element-wise maps and their gradient rules.
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Gradients expressed via the forward *output* where the rule allows it.
Tensor sigmoid_backward(const Tensor& out, const Tensor& grad_out);
Tensor tanh_backward(const Tensor& out, const Tensor& grad_out);
Tensor relu_backward(const Tensor& in, const Tensor& grad_out);
Tensor leaky_relu_backward(const Tensor& in, double alpha,
                           const Tensor& grad_out);

// Channel concatenation of two [h,w,*] tensors; split is its adjoint.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& joint, Tensor& a, Tensor& b);

// ---------------------------------------------------------------------------
// Per-pixel softmax over the channel axis, max-subtracted for stability.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& y, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Batch normalization over the spatial extent of one tile, per channel.
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

struct RunningStats {
  Tensor mean;
  Tensor var;

  RunningStats() = default;
  explicit RunningStats(int channels)
      : mean({channels}, 0.0), var({channels}, 1.0) {}
};

enum class BatchNormMode { kTrain, kInfer };

struct BatchNormCache {
  Tensor x_hat;       // normalized input
  Tensor inv_std;     // per channel
  Tensor batch_mean;  // in-tile stats (train mode only)
  Tensor batch_var;
};

// Train mode normalizes by in-tile per-channel statistics and, unless
// `update_stats` is false, folds them into the running statistics with
// momentum kBatchNormMomentum. Infer mode uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  RunningStats& stats, BatchNormMode mode,
                  BatchNormCache* cache = nullptr, bool update_stats = true);

void fold_running_stats(RunningStats& stats, const Tensor& batch_mean,
                        const Tensor& batch_var);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batch_norm_backward(const Tensor& grad_out, const Tensor& gamma,
                                   const BatchNormCache& cache,
                                   BatchNormMode mode);

}  // namespace mtse
