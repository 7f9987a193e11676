#include "mtse/tensor.hpp"

#include <cmath>
#include <cstring>

namespace mtse {

void Tensor::check_finite(const char* what) const {
  for (double v : data_) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + what);
  }
}

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw ConfigError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ConfigError(std::string(op) + ": shape mismatch");
}

}  // namespace

namespace {

// C[m,n] += A[m,k_dim] * B[k_dim,n], rows contiguous. Four-row blocking
// gives the FMA units independent accumulation chains; per-element summation
// order (ascending k) is unchanged, so results are bit-identical to the
// naive loop.
void gemm_acc(double* __restrict c, const double* __restrict a,
              const double* __restrict b, int m, int k_dim, int n) {
  int row = 0;
  for (; row + 4 <= m; row += 4) {
    const double* a0 = a + static_cast<std::size_t>(row) * k_dim;
    const double* a1 = a0 + k_dim;
    const double* a2 = a1 + k_dim;
    const double* a3 = a2 + k_dim;
    double* c0 = c + static_cast<std::size_t>(row) * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (int kk = 0; kk < k_dim; ++kk) {
      const double v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
      const double* br = b + static_cast<std::size_t>(kk) * n;
      for (int nn = 0; nn < n; ++nn) {
        c0[nn] += v0 * br[nn];
        c1[nn] += v1 * br[nn];
        c2[nn] += v2 * br[nn];
        c3[nn] += v3 * br[nn];
      }
    }
  }
  for (; row < m; ++row) {
    const double* ar = a + static_cast<std::size_t>(row) * k_dim;
    double* cr = c + static_cast<std::size_t>(row) * n;
    for (int kk = 0; kk < k_dim; ++kk) {
      const double v = ar[kk];
      const double* br = b + static_cast<std::size_t>(kk) * n;
      for (int nn = 0; nn < n; ++nn) cr[nn] += v * br[nn];
    }
  }
}

// C[k_dim,n] += A[m,k_dim]^T * B[m,n]. Rows are consumed in ascending blocks
// of four to quarter the accumulator traffic; the blocked order is fixed, so
// results stay identical from run to run.
void gemm_acc_at_b(double* __restrict c, const double* __restrict a,
                   const double* __restrict b, int m, int k_dim, int n) {
  int row = 0;
  for (; row + 4 <= m; row += 4) {
    const double* a0 = a + static_cast<std::size_t>(row) * k_dim;
    const double* a1 = a0 + k_dim;
    const double* a2 = a1 + k_dim;
    const double* a3 = a2 + k_dim;
    const double* b0 = b + static_cast<std::size_t>(row) * n;
    const double* b1 = b0 + n;
    const double* b2 = b1 + n;
    const double* b3 = b2 + n;
    for (int kk = 0; kk < k_dim; ++kk) {
      const double v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
      double* cr = c + static_cast<std::size_t>(kk) * n;
      for (int nn = 0; nn < n; ++nn)
        cr[nn] += v0 * b0[nn] + v1 * b1[nn] + v2 * b2[nn] + v3 * b3[nn];
    }
  }
  for (; row < m; ++row) {
    const double* ar = a + static_cast<std::size_t>(row) * k_dim;
    const double* br = b + static_cast<std::size_t>(row) * n;
    for (int kk = 0; kk < k_dim; ++kk) {
      const double v = ar[kk];
      double* cr = c + static_cast<std::size_t>(kk) * n;
      for (int nn = 0; nn < n; ++nn) cr[nn] += v * br[nn];
    }
  }
}

struct TapRange {
  int y_lo, y_hi, x_lo, x_hi;  // output coordinates with a valid input tap
};

TapRange tap_range(int h, int w, int k, int dy, int dx) {
  const int half = k / 2;
  TapRange r;
  r.y_lo = std::max(0, half - dy);
  r.y_hi = std::min(h, h + half - dy);
  r.x_lo = std::max(0, half - dx);
  r.x_hi = std::min(w, w + half - dx);
  return r;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require(input.rank() == 3, "conv2d: input must be [h,w,c_in]");
  require(kernel.rank() == 4, "conv2d: kernel must be [k,k,c_in,c_out]");
  const int h = input.extent(0), w = input.extent(1), cin = input.extent(2);
  const int k = kernel.extent(0);
  const int cout = kernel.extent(3);
  require(kernel.extent(1) == k, "conv2d: kernel must be square");
  require(k % 2 == 1, "conv2d: kernel extent must be odd");
  require(kernel.extent(2) == cin, "conv2d: kernel c_in mismatch");
  require(bias.rank() == 1 && bias.extent(0) == cout,
          "conv2d: bias must be [c_out]");

  const int half = k / 2;
  Tensor out({h, w, cout});
  const double* in = input.data();
  const double* ker = kernel.data();
  double* o = out.data();

  for (int p = 0; p < h * w; ++p)
    std::memcpy(o + static_cast<std::size_t>(p) * cout, bias.data(),
                sizeof(double) * static_cast<std::size_t>(cout));

  // One row-GEMM per kernel tap over the output range it can reach.
  for (int dy = 0; dy < k; ++dy) {
    for (int dx = 0; dx < k; ++dx) {
      const TapRange r = tap_range(h, w, k, dy, dx);
      if (r.x_lo >= r.x_hi) continue;
      const double* kp =
          ker + (static_cast<std::size_t>(dy) * k + dx) * cin * cout;
      for (int y = r.y_lo; y < r.y_hi; ++y) {
        const double* in_row =
            in + (static_cast<std::size_t>(y + dy - half) * w +
                  (r.x_lo + dx - half)) *
                     cin;
        double* out_row =
            o + (static_cast<std::size_t>(y) * w + r.x_lo) * cout;
        gemm_acc(out_row, in_row, kp, r.x_hi - r.x_lo, cin, cout);
      }
    }
  }
  out.check_finite("conv2d");
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                          const Tensor& grad_out) {
  const int h = input.extent(0), w = input.extent(1), cin = input.extent(2);
  const int k = kernel.extent(0);
  const int cout = kernel.extent(3);
  require(grad_out.rank() == 3 && grad_out.extent(0) == h &&
              grad_out.extent(1) == w && grad_out.extent(2) == cout,
          "conv2d_backward: grad_out shape mismatch");
  require(kernel.extent(2) == cin, "conv2d_backward: kernel c_in mismatch");

  const int half = k / 2;
  ConvGrads g{Tensor({h, w, cin}), Tensor({k, k, cin, cout}), Tensor({cout})};
  const double* in = input.data();
  const double* ker = kernel.data();
  const double* go = grad_out.data();
  double* gi = g.input.data();
  double* gk = g.kernel.data();
  double* gb = g.bias.data();

  for (int p = 0; p < h * w; ++p) {
    const double* gop = go + static_cast<std::size_t>(p) * cout;
    for (int oc = 0; oc < cout; ++oc) gb[oc] += gop[oc];
  }

  std::vector<double> k_t(static_cast<std::size_t>(cin) * cout);
  for (int dy = 0; dy < k; ++dy) {
    for (int dx = 0; dx < k; ++dx) {
      const TapRange r = tap_range(h, w, k, dy, dx);
      if (r.x_lo >= r.x_hi) continue;
      const std::size_t k_off =
          (static_cast<std::size_t>(dy) * k + dx) * cin * cout;
      // Transposed tap block [c_out, c_in] for the input-gradient GEMM.
      for (int i = 0; i < cin; ++i)
        for (int oc = 0; oc < cout; ++oc)
          k_t[static_cast<std::size_t>(oc) * cin + i] =
              ker[k_off + static_cast<std::size_t>(i) * cout + oc];

      const int run = r.x_hi - r.x_lo;
      for (int y = r.y_lo; y < r.y_hi; ++y) {
        const std::size_t in_off =
            (static_cast<std::size_t>(y + dy - half) * w +
             (r.x_lo + dx - half)) *
            cin;
        const double* go_row =
            go + (static_cast<std::size_t>(y) * w + r.x_lo) * cout;
        gemm_acc(gi + in_off, go_row, k_t.data(), run, cout, cin);
        gemm_acc_at_b(gk + k_off, in + in_off, go_row, run, cin, cout);
      }
    }
  }
  return g;
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 1, "affine: input must be rank 1");
  require(weight.rank() == 2, "affine: weight must be [in,out]");
  const int m = x.extent(0);
  const int n = weight.extent(1);
  require(weight.extent(0) == m, "affine: weight row count mismatch");
  require(bias.rank() == 1 && bias.extent(0) == n, "affine: bias mismatch");

  Tensor out({n});
  const double* xp = x.data();
  const double* wp = weight.data();
  double* o = out.data();
  std::memcpy(o, bias.data(), sizeof(double) * static_cast<std::size_t>(n));
  for (int i = 0; i < m; ++i) {
    const double v = xp[i];
    const double* wq = wp + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) o[j] += v * wq[j];
  }
  out.check_finite("affine");
  return out;
}

AffineGrads affine_backward(const Tensor& x, const Tensor& weight,
                            const Tensor& grad_out) {
  const int m = x.extent(0);
  const int n = weight.extent(1);
  require(grad_out.rank() == 1 && grad_out.extent(0) == n,
          "affine_backward: grad_out mismatch");

  AffineGrads g{Tensor({m}), Tensor({m, n}), Tensor({n})};
  const double* xp = x.data();
  const double* wp = weight.data();
  const double* go = grad_out.data();
  for (int j = 0; j < n; ++j) g.bias[static_cast<std::size_t>(j)] = go[j];
  for (int i = 0; i < m; ++i) {
    const double v = xp[i];
    const double* wq = wp + static_cast<std::size_t>(i) * n;
    double* gwq = g.weight.data() + static_cast<std::size_t>(i) * n;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      gwq[j] = v * go[j];
      acc += wq[j] * go[j];
    }
    g.input[static_cast<std::size_t>(i)] = acc;
  }
  return g;
}

namespace {

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  const double* in = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return map(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor tanh(const Tensor& x) {
  return map(x, [](double v) { return std::tanh(v); });
}

Tensor relu(const Tensor& x) {
  return map(x, [](double v) { return v >= 0.0 ? v : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  return map(x, [alpha](double v) { return v >= 0.0 ? v : alpha * v; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  out.check_finite("add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  out.check_finite("mul");
  return out;
}

Tensor sigmoid_backward(const Tensor& out, const Tensor& grad_out) {
  require_same_shape(out, grad_out, "sigmoid_backward");
  Tensor g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    g[i] = grad_out[i] * out[i] * (1.0 - out[i]);
  return g;
}

Tensor tanh_backward(const Tensor& out, const Tensor& grad_out) {
  require_same_shape(out, grad_out, "tanh_backward");
  Tensor g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    g[i] = grad_out[i] * (1.0 - out[i] * out[i]);
  return g;
}

Tensor relu_backward(const Tensor& in, const Tensor& grad_out) {
  require_same_shape(in, grad_out, "relu_backward");
  Tensor g(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i)
    g[i] = in[i] >= 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor leaky_relu_backward(const Tensor& in, double alpha,
                           const Tensor& grad_out) {
  require_same_shape(in, grad_out, "leaky_relu_backward");
  Tensor g(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i)
    g[i] = in[i] >= 0.0 ? grad_out[i] : alpha * grad_out[i];
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3,
          "concat_channels: operands must be [h,w,c]");
  require(a.extent(0) == b.extent(0) && a.extent(1) == b.extent(1),
          "concat_channels: spatial extents must match");
  const int h = a.extent(0), w = a.extent(1);
  const int ca = a.extent(2), cb = b.extent(2);
  Tensor out({h, w, ca + cb});
  const double* ap = a.data();
  const double* bp = b.data();
  double* o = out.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      std::memcpy(o + p * (ca + cb), ap + p * ca, sizeof(double) * ca);
      std::memcpy(o + p * (ca + cb) + ca, bp + p * cb, sizeof(double) * cb);
    }
  }
  return out;
}

void split_channels(const Tensor& joint, Tensor& a, Tensor& b) {
  const int h = joint.extent(0), w = joint.extent(1);
  const int ca = a.extent(2), cb = b.extent(2);
  require(joint.extent(2) == ca + cb &&
              a.extent(0) == h && a.extent(1) == w && b.extent(0) == h &&
              b.extent(1) == w,
          "split_channels: shape mismatch");
  const double* j = joint.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      std::memcpy(a.data() + p * ca, j + p * (ca + cb), sizeof(double) * ca);
      std::memcpy(b.data() + p * cb, j + p * (ca + cb) + ca,
                  sizeof(double) * cb);
    }
  }
}

Tensor softmax_channels(const Tensor& logits) {
  require(logits.rank() == 3, "softmax_channels: input must be [h,w,n]");
  const int n = logits.extent(2);
  require(n >= 2, "softmax_channels: needs at least two channels");
  logits.check_finite("softmax_channels input");

  const int h = logits.extent(0), w = logits.extent(1);
  Tensor out({h, w, n});
  const double* in = logits.data();
  double* o = out.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* px = in + (static_cast<std::size_t>(y) * w + x) * n;
      double* po = o + (static_cast<std::size_t>(y) * w + x) * n;
      double mx = px[0];
      for (int c = 1; c < n; ++c) mx = px[c] > mx ? px[c] : mx;
      double sum = 0.0;
      for (int c = 0; c < n; ++c) {
        po[c] = std::exp(px[c] - mx);
        sum += po[c];
      }
      const double inv = 1.0 / sum;
      for (int c = 0; c < n; ++c) po[c] *= inv;
    }
  }
  return out;
}

Tensor softmax_channels_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "softmax_channels_backward");
  const int h = y.extent(0), w = y.extent(1), n = y.extent(2);
  Tensor g({h, w, n});
  for (int p = 0; p < h * w; ++p) {
    const double* yp = y.data() + static_cast<std::size_t>(p) * n;
    const double* gp = grad_out.data() + static_cast<std::size_t>(p) * n;
    double dot = 0.0;
    for (int c = 0; c < n; ++c) dot += yp[c] * gp[c];
    double* out = g.data() + static_cast<std::size_t>(p) * n;
    for (int c = 0; c < n; ++c) out[c] = yp[c] * (gp[c] - dot);
  }
  return g;
}

void fold_running_stats(RunningStats& stats, const Tensor& batch_mean,
                        const Tensor& batch_var) {
  for (int ch = 0; ch < stats.mean.extent(0); ++ch) {
    stats.mean[ch] = kBatchNormMomentum * stats.mean[ch] +
                     (1.0 - kBatchNormMomentum) * batch_mean[ch];
    stats.var[ch] = kBatchNormMomentum * stats.var[ch] +
                    (1.0 - kBatchNormMomentum) * batch_var[ch];
  }
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  RunningStats& stats, BatchNormMode mode,
                  BatchNormCache* cache, bool update_stats) {
  require(x.rank() == 3, "batch_norm: input must be [h,w,c]");
  const int h = x.extent(0), w = x.extent(1), c = x.extent(2);
  require(gamma.rank() == 1 && gamma.extent(0) == c, "batch_norm: gamma mismatch");
  require(beta.rank() == 1 && beta.extent(0) == c, "batch_norm: beta mismatch");
  require(stats.mean.extent(0) == c, "batch_norm: running stats mismatch");

  const std::size_t m = static_cast<std::size_t>(h) * w;
  Tensor mean({c}), var({c});
  if (mode == BatchNormMode::kTrain) {
    // In-tile per-channel statistics, population variance.
    for (std::size_t p = 0; p < m; ++p) {
      const double* px = x.data() + p * c;
      for (int ch = 0; ch < c; ++ch) mean[ch] += px[ch];
    }
    for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(m);
    for (std::size_t p = 0; p < m; ++p) {
      const double* px = x.data() + p * c;
      for (int ch = 0; ch < c; ++ch) {
        const double d = px[ch] - mean[ch];
        var[ch] += d * d;
      }
    }
    for (int ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(m);
    if (update_stats) fold_running_stats(stats, mean, var);
  } else {
    mean = stats.mean;
    var = stats.var;
  }

  Tensor inv_std({c});
  for (int ch = 0; ch < c; ++ch)
    inv_std[ch] = 1.0 / std::sqrt(var[ch] + kBatchNormEpsilon);

  Tensor out({h, w, c});
  Tensor x_hat({h, w, c});
  for (std::size_t p = 0; p < m; ++p) {
    const double* px = x.data() + p * c;
    double* pn = x_hat.data() + p * c;
    double* po = out.data() + p * c;
    for (int ch = 0; ch < c; ++ch) {
      pn[ch] = (px[ch] - mean[ch]) * inv_std[ch];
      po[ch] = gamma[ch] * pn[ch] + beta[ch];
    }
  }
  out.check_finite("batch_norm");
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    if (mode == BatchNormMode::kTrain) {
      cache->batch_mean = std::move(mean);
      cache->batch_var = std::move(var);
    }
  }
  return out;
}

BatchNormGrads batch_norm_backward(const Tensor& grad_out, const Tensor& gamma,
                                   const BatchNormCache& cache,
                                   BatchNormMode mode) {
  const Tensor& x_hat = cache.x_hat;
  const int h = x_hat.extent(0), w = x_hat.extent(1), c = x_hat.extent(2);
  require(grad_out.same_shape(x_hat), "batch_norm_backward: shape mismatch");

  const std::size_t m = static_cast<std::size_t>(h) * w;
  BatchNormGrads g{Tensor({h, w, c}), Tensor({c}), Tensor({c})};
  Tensor sum_g({c}), sum_gx({c});
  for (std::size_t p = 0; p < m; ++p) {
    const double* go = grad_out.data() + p * c;
    const double* xh = x_hat.data() + p * c;
    for (int ch = 0; ch < c; ++ch) {
      sum_g[ch] += go[ch];
      sum_gx[ch] += go[ch] * xh[ch];
    }
  }
  g.beta = sum_g;
  g.gamma = sum_gx;

  if (mode == BatchNormMode::kInfer) {
    for (std::size_t p = 0; p < m; ++p) {
      const double* go = grad_out.data() + p * c;
      double* gi = g.input.data() + p * c;
      for (int ch = 0; ch < c; ++ch)
        gi[ch] = go[ch] * gamma[ch] * cache.inv_std[ch];
    }
    return g;
  }

  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t p = 0; p < m; ++p) {
    const double* go = grad_out.data() + p * c;
    const double* xh = x_hat.data() + p * c;
    double* gi = g.input.data() + p * c;
    for (int ch = 0; ch < c; ++ch) {
      gi[ch] = gamma[ch] * cache.inv_std[ch] *
               (go[ch] - inv_m * sum_g[ch] - xh[ch] * inv_m * sum_gx[ch]);
    }
  }
  return g;
}

}  // namespace mtse
