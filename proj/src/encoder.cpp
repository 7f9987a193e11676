#include "mtse/encoder.hpp"

#include <cmath>
#include <cstring>

#include "mtse/rng.hpp"

namespace mtse {

Tensor SequenceSample::frame(int t) const {
  const int h = rows(), w = cols(), d = depth();
  Tensor f({h, w, d});
  const std::size_t n = static_cast<std::size_t>(h) * w * d;
  std::memcpy(f.data(), x.data() + static_cast<std::size_t>(t) * n,
              n * sizeof(double));
  return f;
}

void EncoderConfig::validate() const {
  cell.validate();
  if (cell.arrangement != Arrangement::kConv)
    throw ConfigError("encoder: cell arrangement must be conv");
  if (n_classes < 2) throw ConfigError("encoder: n_classes must be >= 2");
  if (k_class % 2 == 0) throw ConfigError("encoder: k_class must be odd");
}

std::vector<Parameter*> EncoderParams::all() {
  std::vector<Parameter*> out;
  for (auto& p : cell.items) out.push_back(&p);
  out.push_back(&head_w1);
  out.push_back(&head_gamma);
  out.push_back(&head_beta);
  out.push_back(&head_w2);
  out.push_back(&head_b2);
  return out;
}

std::vector<const Parameter*> EncoderParams::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : cell.items) out.push_back(&p);
  out.push_back(&head_w1);
  out.push_back(&head_gamma);
  out.push_back(&head_beta);
  out.push_back(&head_w2);
  out.push_back(&head_b2);
  return out;
}

void EncoderParams::zero_grads() {
  for (Parameter* p : all()) p->zero_grad();
}

EncoderParams init_encoder_params(const EncoderConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  EncoderParams p;
  p.cell = init_cell_params(cfg.cell, derive_seed(seed, 1));
  for (auto& item : p.cell.items) item.name = "cell." + item.name;

  const int r2 = 2 * cfg.cell.r;
  const int m = cfg.head_width();
  const int kc = cfg.k_class;

  Rng rng(derive_seed(seed, 2));
  auto glorot = [&rng](Tensor& w, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = rng.uniform(-bound, bound);
  };

  Tensor w1({kc, kc, r2, m});
  glorot(w1, kc * kc * r2, m);
  p.head_w1 = Parameter("head.conv1.w", std::move(w1));
  p.head_gamma = Parameter("head.bn.gamma", Tensor({m}, 1.0));
  p.head_beta = Parameter("head.bn.beta", Tensor({m}));
  Tensor w2({1, 1, m, cfg.n_classes});
  glorot(w2, m, cfg.n_classes);
  p.head_w2 = Parameter("head.conv2.w", std::move(w2));
  p.head_b2 = Parameter("head.conv2.b", Tensor({cfg.n_classes}));
  p.bn_stats = RunningStats(m);
  return p;
}

long encoder_param_count(const EncoderConfig& cfg) {
  const long m = cfg.head_width();
  const long kc = cfg.k_class;
  long head = kc * kc * (2 * cfg.cell.r) * m;  // conv1, no bias
  head += 2 * m;                                   // gamma, beta
  head += m * cfg.n_classes + cfg.n_classes;       // conv2
  return param_count(cfg.cell) + head;
}

void round_params_to_f32(EncoderParams& params) {
  for (Parameter* p : params.all())
    for (std::size_t i = 0; i < p->value.size(); ++i)
      p->value[i] = static_cast<double>(static_cast<float>(p->value[i]));
  for (Tensor* t : {&params.bn_stats.mean, &params.bn_stats.var})
    for (std::size_t i = 0; i < t->size(); ++i)
      (*t)[i] = static_cast<double>(static_cast<float>((*t)[i]));
}

namespace {

std::vector<int> unmasked_steps(const SequenceSample& sample) {
  if (static_cast<int>(sample.mask.size()) != sample.frames())
    throw ConfigError("encode: mask length must equal frame count");
  std::vector<int> steps;
  for (int t = 0; t < sample.frames(); ++t)
    if (sample.mask[static_cast<std::size_t>(t)]) steps.push_back(t);
  if (steps.empty()) throw DataError("encode: all frames are padded");
  return steps;
}

// Runs one direction over the given frame order, returning the final state.
CellState run_direction(const SequenceSample& sample,
                        const std::vector<int>& order,
                        const EncoderParams& params, const EncoderConfig& cfg,
                        std::vector<GateTraceEntry>* trace) {
  CellState state = zero_state(cfg.cell, sample.rows(), sample.cols());
  for (int t : order) {
    GateTraceEntry entry;
    CellState next = cell_step(sample.frame(t), state, params.cell, cfg.cell,
                               trace ? &entry : nullptr);
    if (trace) trace->push_back(std::move(entry));
    state = std::move(next);
  }
  return state;
}

const Tensor& direction_output(const CellState& s, const CellConfig& cell) {
  // LSTM concatenates cell states; GRU/RNN have only h.
  return cell.kind == CellKind::kLstm ? s.c : s.h;
}

}  // namespace

SequenceRepresentation encode(const SequenceSample& sample,
                              const EncoderParams& params,
                              const EncoderConfig& cfg, EncoderTrace* trace) {
  cfg.validate();
  if (sample.depth() != cfg.cell.d)
    throw ConfigError("encode: sample depth does not match cell config");
  const std::vector<int> steps = unmasked_steps(sample);
  std::vector<int> reversed(steps.rbegin(), steps.rend());

  SequenceRepresentation rep;
  rep.final_fwd = run_direction(sample, steps, params, cfg,
                                trace ? &trace->fwd : nullptr);
  rep.final_rev = run_direction(sample, reversed, params, cfg,
                                trace ? &trace->rev : nullptr);
  rep.rep = concat_channels(direction_output(rep.final_fwd, cfg.cell),
                            direction_output(rep.final_rev, cfg.cell));
  if (trace) {
    trace->steps = steps;
    trace->repr = rep;
  }
  return rep;
}

Tensor classify(const Tensor& rep, EncoderParams& params,
                const EncoderConfig& cfg, BatchNormMode mode,
                EncoderTrace* trace, bool update_bn_stats) {
  if (rep.extent(2) != 2 * cfg.cell.r)
    throw ConfigError("classify: representation depth must be 2r");
  Tensor pre1 = conv2d(rep, params.head_w1.value, Tensor({cfg.head_width()}));
  BatchNormCache bn_cache;
  Tensor bn = batch_norm(pre1, params.head_gamma.value, params.head_beta.value,
                         params.bn_stats, mode, &bn_cache, update_bn_stats);
  Tensor act = cfg.activation == HeadActivation::kRelu
                   ? relu(bn)
                   : leaky_relu(bn, cfg.leaky_alpha);
  Tensor logits = conv2d(act, params.head_w2.value, params.head_b2.value);
  Tensor y_hat = softmax_channels(logits);
  if (trace) {
    trace->mode = mode;
    trace->head_pre1 = std::move(pre1);
    trace->bn_cache = std::move(bn_cache);
    trace->head_bn_out = std::move(bn);
    trace->head_act_out = std::move(act);
    trace->logits = std::move(logits);
    trace->y_hat = y_hat;
  }
  return y_hat;
}

double cross_entropy(const Tensor& y_hat, const LabelMap& y) {
  const int h = y_hat.extent(0), w = y_hat.extent(1), n = y_hat.extent(2);
  if (y.rows != h || y.cols != w)
    throw ConfigError("cross_entropy: label map shape mismatch");
  double total = 0.0;
  long counted = 0;
  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < w; ++xx) {
      const std::int16_t label = y.at(yy, xx);
      if (label == kIgnoreLabel) continue;
      if (label < 0 || label >= n)
        throw DataError("cross_entropy: label out of range");
      const double p = y_hat.at(yy, xx, label);
      total += -std::log(p > 1e-12 ? p : 1e-12);
      ++counted;
    }
  }
  if (counted == 0) throw DataError("cross_entropy: all pixels are IGNORE");
  return total / static_cast<double>(counted);
}

ForwardResult forward(const SequenceSample& sample, EncoderParams& params,
                      const EncoderConfig& cfg, BatchNormMode mode,
                      EncoderTrace* trace, bool update_bn_stats) {
  SequenceRepresentation rep = encode(sample, params, cfg, trace);
  Tensor y_hat = classify(rep.rep, params, cfg, mode, trace, update_bn_stats);
  const double loss = cross_entropy(y_hat, sample.y);
  if (trace) {
    trace->loss = loss;
    long counted = 0;
    for (std::int16_t v : sample.y.v)
      if (v != kIgnoreLabel) ++counted;
    trace->counted_pixels = counted;
  }
  if (!std::isfinite(loss)) throw NumericError("forward: non-finite loss");
  return {std::move(y_hat), loss};
}

namespace {

// BPTT over one direction. d_final is the gradient w.r.t. the direction's
// concatenated output (c for LSTM, h otherwise).
void backward_direction(const SequenceSample& sample,
                        const std::vector<int>& order,
                        const std::vector<GateTraceEntry>& caches,
                        const Tensor& d_final, EncoderParams& params,
                        const EncoderConfig& cfg,
                        std::vector<Tensor>* grad_x) {
  const bool is_lstm = cfg.cell.kind == CellKind::kLstm;
  const CellState zero = zero_state(cfg.cell, sample.rows(), sample.cols());

  Tensor dh, dc;
  if (is_lstm) {
    dh = Tensor(d_final.shape());
    dc = d_final;
  } else {
    dh = d_final;
  }

  for (int q = static_cast<int>(order.size()) - 1; q >= 0; --q) {
    const Tensor& h_prev = q > 0 ? caches[static_cast<std::size_t>(q - 1)].h
                                 : zero.h;
    const Tensor& c_prev = is_lstm ? (q > 0
                                          ? caches[static_cast<std::size_t>(q - 1)].c
                                          : zero.c)
                                   : zero.c;
    StepGrads g = cell_step_backward(sample.frame(order[static_cast<std::size_t>(q)]),
                                     h_prev, c_prev,
                                     caches[static_cast<std::size_t>(q)], dh,
                                     dc, params.cell, cfg.cell);
    if (grad_x) {
      Tensor& gx = (*grad_x)[static_cast<std::size_t>(order[static_cast<std::size_t>(q)])];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g.dx[i];
    }
    dh = std::move(g.dh_prev);
    if (is_lstm) dc = std::move(g.dc_prev);
  }
}

}  // namespace

void backward(const SequenceSample& sample, EncoderParams& params,
              const EncoderConfig& cfg, const EncoderTrace& trace,
              std::vector<Tensor>* grad_x) {
  const int h = sample.rows(), w = sample.cols(), n = cfg.n_classes;

  // Fused softmax + cross-entropy gradient, averaged over counted pixels.
  Tensor d_logits({h, w, n});
  const double inv = 1.0 / static_cast<double>(trace.counted_pixels);
  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < w; ++xx) {
      const std::int16_t label = sample.y.at(yy, xx);
      if (label == kIgnoreLabel) continue;
      for (int c = 0; c < n; ++c) {
        const double target = c == label ? 1.0 : 0.0;
        d_logits.at(yy, xx, c) = (trace.y_hat.at(yy, xx, c) - target) * inv;
      }
    }
  }

  // 1x1 projection.
  ConvGrads g2 =
      conv2d_backward(trace.head_act_out, params.head_w2.value, d_logits);
  for (std::size_t i = 0; i < g2.kernel.size(); ++i)
    params.head_w2.grad[i] += g2.kernel[i];
  for (std::size_t i = 0; i < g2.bias.size(); ++i)
    params.head_b2.grad[i] += g2.bias[i];

  // Activation.
  Tensor d_bn = cfg.activation == HeadActivation::kRelu
                    ? relu_backward(trace.head_bn_out, g2.input)
                    : leaky_relu_backward(trace.head_bn_out, cfg.leaky_alpha,
                                          g2.input);

  // Batch norm.
  BatchNormGrads gbn = batch_norm_backward(d_bn, params.head_gamma.value,
                                           trace.bn_cache, trace.mode);
  for (std::size_t i = 0; i < gbn.gamma.size(); ++i)
    params.head_gamma.grad[i] += gbn.gamma[i];
  for (std::size_t i = 0; i < gbn.beta.size(); ++i)
    params.head_beta.grad[i] += gbn.beta[i];

  // k_class convolution back to the sequence representation.
  ConvGrads g1 =
      conv2d_backward(trace.repr.rep, params.head_w1.value, gbn.input);
  for (std::size_t i = 0; i < g1.kernel.size(); ++i)
    params.head_w1.grad[i] += g1.kernel[i];

  // Split the representation gradient into the two directions.
  Tensor d_fwd({h, w, cfg.cell.r}), d_rev({h, w, cfg.cell.r});
  split_channels(g1.input, d_fwd, d_rev);

  if (grad_x) {
    grad_x->assign(static_cast<std::size_t>(sample.frames()),
                   Tensor({h, w, cfg.cell.d}));
  }
  std::vector<int> reversed(trace.steps.rbegin(), trace.steps.rend());
  backward_direction(sample, trace.steps, trace.fwd, d_fwd, params, cfg,
                     grad_x);
  backward_direction(sample, reversed, trace.rev, d_rev, params, cfg, grad_x);
}

LabelMap argmax_map(const Tensor& y_hat) {
  const int h = y_hat.extent(0), w = y_hat.extent(1), n = y_hat.extent(2);
  LabelMap out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_v = y_hat.at(y, x, 0);
      for (int c = 1; c < n; ++c) {
        const double v = y_hat.at(y, x, c);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.at(y, x) = static_cast<std::int16_t>(best);
    }
  }
  return out;
}

Tensor loss_map(const Tensor& y_hat, const LabelMap& y) {
  const int h = y_hat.extent(0), w = y_hat.extent(1);
  Tensor out({h, w, 1});
  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < w; ++xx) {
      const std::int16_t label = y.at(yy, xx);
      if (label == kIgnoreLabel) continue;
      const double p = y_hat.at(yy, xx, label);
      out.at(yy, xx, 0) = -std::log(p > 1e-12 ? p : 1e-12);
    }
  }
  return out;
}

std::vector<GateMaps> activations_trace(const SequenceSample& sample,
                                        const EncoderParams& params,
                                        const EncoderConfig& cfg,
                                        const std::vector<int>& cell_indices) {
  for (int idx : cell_indices)
    if (idx < 0 || idx >= cfg.cell.r)
      throw ConfigError("activations_trace: cell index out of range");

  EncoderTrace trace;
  encode(sample, params, cfg, &trace);

  auto slice = [&sample](const Tensor& t, int channel) {
    const int h = sample.rows(), w = sample.cols();
    Tensor m({h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        m[static_cast<std::size_t>(y) * w + x] = t.at(y, x, channel);
    return m;
  };

  std::vector<GateMaps> out;
  for (int idx : cell_indices) {
    GateMaps maps;
    maps.cell_index = idx;
    maps.steps = trace.steps;
    for (const GateTraceEntry& e : trace.fwd) {
      switch (cfg.cell.kind) {
        case CellKind::kLstm:
          maps.i.push_back(slice(e.i, idx));
          maps.j.push_back(slice(e.j, idx));
          maps.f.push_back(slice(e.f, idx));
          maps.c.push_back(slice(e.c, idx));
          break;
        case CellKind::kGru:
          maps.z.push_back(slice(e.z, idx));
          maps.s.push_back(slice(e.s, idx));
          break;
        case CellKind::kRnn:
          break;
      }
      maps.h.push_back(slice(e.h, idx));
    }
    out.push_back(std::move(maps));
  }
  return out;
}

}  // namespace mtse
