#include "mtse/cells.hpp"

#include <cmath>
#include <string>

#include "mtse/rng.hpp"

namespace mtse {

void CellConfig::validate() const {
  if (r < 1) throw ConfigError("cell: r must be >= 1");
  if (d < 1) throw ConfigError("cell: d must be >= 1");
  if (arrangement == Arrangement::kConv && k % 2 == 0)
    throw ConfigError("cell: k must be odd");
}

CellState zero_state(const CellConfig& cfg, int rows, int cols) {
  CellState s;
  if (cfg.arrangement == Arrangement::kDense) {
    s.h = Tensor({cfg.r});
    if (cfg.kind == CellKind::kLstm) s.c = Tensor({cfg.r});
  } else {
    s.h = Tensor({rows, cols, cfg.r});
    if (cfg.kind == CellKind::kLstm) s.c = Tensor({rows, cols, cfg.r});
  }
  return s;
}

namespace {

const char* const kLstmGates[] = {"i", "j", "f", "o"};
const char* const kGruGates[] = {"z", "s", "c"};

std::string gate_name(const CellConfig& cfg, int g) {
  switch (cfg.kind) {
    case CellKind::kRnn: return "";
    case CellKind::kLstm: return kLstmGates[g];
    case CellKind::kGru: return kGruGates[g];
  }
  return "";
}

}  // namespace

CellParams init_cell_params(const CellConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int k = cfg.kernel_extent();
  const int fan_in = k * k * (cfg.r + cfg.d);
  const int fan_out = cfg.r;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));

  Rng rng(seed);
  CellParams p;
  for (int g = 0; g < cfg.gates(); ++g) {
    const std::string suffix =
        cfg.kind == CellKind::kRnn ? "" : "_" + gate_name(cfg, g);
    Tensor w = cfg.arrangement == Arrangement::kDense
                   ? Tensor({cfg.d + cfg.r, cfg.r})
                   : Tensor({k, k, cfg.d + cfg.r, cfg.r});
    for (std::size_t idx = 0; idx < w.size(); ++idx)
      w[idx] = rng.uniform(-bound, bound);
    Tensor b({cfg.r});
    if (cfg.kind == CellKind::kLstm && g == 2) b.fill(cfg.forget_bias);
    p.items.emplace_back("w" + suffix, std::move(w));
    p.items.emplace_back("b" + suffix, std::move(b));
  }
  return p;
}

long param_count(const CellConfig& cfg) {
  cfg.validate();
  const long k = cfg.kernel_extent();
  const long per_gate = k * k * (cfg.r + cfg.d) * cfg.r + cfg.r;
  return cfg.gates() * per_gate;
}

namespace {

// Pre-activation of one gate over the concatenated [x, h] input.
Tensor gate_preact(const Tensor& joint, const Parameter& w, const Parameter& b,
                   const CellConfig& cfg) {
  if (cfg.arrangement == Arrangement::kDense)
    return affine(joint, w.value, b.value);
  return conv2d(joint, w.value, b.value);
}

Tensor join(const Tensor& x, const Tensor& h, const CellConfig& cfg) {
  if (cfg.arrangement == Arrangement::kDense) {
    const int len = static_cast<int>(x.size() + h.size());
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(len));
    for (std::size_t i = 0; i < x.size(); ++i) d.push_back(x[i]);
    for (std::size_t i = 0; i < h.size(); ++i) d.push_back(h[i]);
    return Tensor::from_data({len}, std::move(d));
  }
  return concat_channels(x, h);
}

// Adjoint of join: writes the two slices of d_joint into dx/dh (accumulating).
void unjoin(const Tensor& d_joint, Tensor& dx, Tensor& dh,
            const CellConfig& cfg) {
  if (cfg.arrangement == Arrangement::kDense) {
    const std::size_t nx = dx.size();
    for (std::size_t i = 0; i < nx; ++i) dx[i] += d_joint[i];
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += d_joint[nx + i];
    return;
  }
  Tensor a(dx.shape()), b(dh.shape());
  split_channels(d_joint, a, b);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += a[i];
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += b[i];
}

// Backward through one gate's pre-activation: accumulates parameter grads and
// adds the input gradient into d_joint.
void gate_backward(const Tensor& joint, Parameter& w, Parameter& b,
                   const Tensor& d_pre, Tensor& d_joint,
                   const CellConfig& cfg) {
  if (cfg.arrangement == Arrangement::kDense) {
    AffineGrads g = affine_backward(joint, w.value, d_pre);
    for (std::size_t i = 0; i < g.weight.size(); ++i) w.grad[i] += g.weight[i];
    for (std::size_t i = 0; i < g.bias.size(); ++i) b.grad[i] += g.bias[i];
    for (std::size_t i = 0; i < g.input.size(); ++i) d_joint[i] += g.input[i];
    return;
  }
  ConvGrads g = conv2d_backward(joint, w.value, d_pre);
  for (std::size_t i = 0; i < g.kernel.size(); ++i) w.grad[i] += g.kernel[i];
  for (std::size_t i = 0; i < g.bias.size(); ++i) b.grad[i] += g.bias[i];
  for (std::size_t i = 0; i < g.input.size(); ++i) d_joint[i] += g.input[i];
}

void check_step_shapes(const Tensor& x, const CellState& prev,
                       const CellConfig& cfg) {
  if (cfg.arrangement == Arrangement::kDense) {
    if (x.rank() != 1 || x.extent(0) != cfg.d)
      throw ConfigError("cell step: dense input must be [d]");
    if (prev.h.rank() != 1 || prev.h.extent(0) != cfg.r)
      throw ConfigError("cell step: dense state must be [r]");
  } else {
    if (x.rank() != 3 || x.extent(2) != cfg.d)
      throw ConfigError("cell step: conv input must be [h,w,d]");
    if (prev.h.rank() != 3 || prev.h.extent(2) != cfg.r ||
        prev.h.extent(0) != x.extent(0) || prev.h.extent(1) != x.extent(1))
      throw ConfigError("cell step: conv state shape mismatch");
  }
  if (cfg.kind == CellKind::kLstm) {
    if (!prev.has_c() || !prev.c.same_shape(prev.h))
      throw ConfigError("lstm step: state must carry c of h's shape");
  } else if (prev.has_c()) {
    throw ConfigError("cell step: only LSTM state carries c");
  }
}

}  // namespace

CellState rnn_step(const Tensor& x, const CellState& prev,
                   const CellParams& params, const CellConfig& cfg,
                   GateTraceEntry* trace) {
  check_step_shapes(x, prev, cfg);
  const Tensor joint = join(x, prev.h, cfg);
  CellState next;
  next.h = tanh(gate_preact(joint, params.weight(0), params.bias(0), cfg));
  if (trace) trace->h = next.h;
  return next;
}

CellState lstm_step(const Tensor& x, const CellState& prev,
                    const CellParams& params, const CellConfig& cfg,
                    GateTraceEntry* trace) {
  check_step_shapes(x, prev, cfg);
  const Tensor joint = join(x, prev.h, cfg);
  Tensor i = sigmoid(gate_preact(joint, params.weight(0), params.bias(0), cfg));
  Tensor j = tanh(gate_preact(joint, params.weight(1), params.bias(1), cfg));
  Tensor f = sigmoid(gate_preact(joint, params.weight(2), params.bias(2), cfg));
  Tensor o = sigmoid(gate_preact(joint, params.weight(3), params.bias(3), cfg));

  CellState next;
  next.c = add(mul(f, prev.c), mul(i, j));
  next.h = mul(o, tanh(next.c));
  if (trace) {
    trace->i = std::move(i);
    trace->j = std::move(j);
    trace->f = std::move(f);
    trace->o = std::move(o);
    trace->c = next.c;
    trace->h = next.h;
  }
  return next;
}

CellState gru_step(const Tensor& x, const CellState& prev,
                   const CellParams& params, const CellConfig& cfg,
                   GateTraceEntry* trace) {
  check_step_shapes(x, prev, cfg);
  const Tensor joint = join(x, prev.h, cfg);
  Tensor z = sigmoid(gate_preact(joint, params.weight(0), params.bias(0), cfg));
  Tensor s = sigmoid(gate_preact(joint, params.weight(1), params.bias(1), cfg));
  const Tensor gated = join(x, mul(s, prev.h), cfg);
  Tensor cand =
      tanh(gate_preact(gated, params.weight(2), params.bias(2), cfg));

  // h' = (1 - z) .* h + z .* cand
  CellState next;
  next.h = Tensor(prev.h.shape());
  for (std::size_t idx = 0; idx < next.h.size(); ++idx)
    next.h[idx] = (1.0 - z[idx]) * prev.h[idx] + z[idx] * cand[idx];
  if (trace) {
    trace->z = std::move(z);
    trace->s = std::move(s);
    trace->cand = std::move(cand);
    trace->h = next.h;
  }
  return next;
}

CellState cell_step(const Tensor& x, const CellState& prev,
                    const CellParams& params, const CellConfig& cfg,
                    GateTraceEntry* trace) {
  switch (cfg.kind) {
    case CellKind::kRnn: return rnn_step(x, prev, params, cfg, trace);
    case CellKind::kLstm: return lstm_step(x, prev, params, cfg, trace);
    case CellKind::kGru: return gru_step(x, prev, params, cfg, trace);
  }
  throw ConfigError("cell step: unknown kind");
}

StepGrads cell_step_backward(const Tensor& x, const Tensor& h_prev,
                             const Tensor& c_prev, const GateTraceEntry& trace,
                             const Tensor& dh, const Tensor& dc,
                             CellParams& params, const CellConfig& cfg) {
  StepGrads out;
  out.dx = Tensor(x.shape());
  out.dh_prev = Tensor(h_prev.shape());

  if (cfg.kind == CellKind::kRnn) {
    const Tensor d_pre = tanh_backward(trace.h, dh);
    const Tensor joint = join(x, h_prev, cfg);
    Tensor d_joint(joint.shape());
    gate_backward(joint, params.weight(0), params.bias(0), d_pre, d_joint, cfg);
    unjoin(d_joint, out.dx, out.dh_prev, cfg);
    return out;
  }

  if (cfg.kind == CellKind::kLstm) {
    const Tensor tc = tanh(trace.c);
    Tensor d_total_c(trace.c.shape());
    Tensor d_o(trace.o.shape());
    for (std::size_t idx = 0; idx < dh.size(); ++idx) {
      d_o[idx] = dh[idx] * tc[idx];
      const double dtc = dh[idx] * trace.o[idx] * (1.0 - tc[idx] * tc[idx]);
      d_total_c[idx] = (dc.empty() ? 0.0 : dc[idx]) + dtc;
    }
    out.dc_prev = mul(d_total_c, trace.f);

    const Tensor d_pre_i = sigmoid_backward(trace.i, mul(d_total_c, trace.j));
    const Tensor d_pre_j = tanh_backward(trace.j, mul(d_total_c, trace.i));
    const Tensor d_pre_f = sigmoid_backward(trace.f, mul(d_total_c, c_prev));
    const Tensor d_pre_o = sigmoid_backward(trace.o, d_o);

    const Tensor joint = join(x, h_prev, cfg);
    Tensor d_joint(joint.shape());
    gate_backward(joint, params.weight(0), params.bias(0), d_pre_i, d_joint, cfg);
    gate_backward(joint, params.weight(1), params.bias(1), d_pre_j, d_joint, cfg);
    gate_backward(joint, params.weight(2), params.bias(2), d_pre_f, d_joint, cfg);
    gate_backward(joint, params.weight(3), params.bias(3), d_pre_o, d_joint, cfg);
    unjoin(d_joint, out.dx, out.dh_prev, cfg);
    return out;
  }

  // GRU
  Tensor d_z(trace.z.shape());
  Tensor d_cand(trace.cand.shape());
  for (std::size_t idx = 0; idx < dh.size(); ++idx) {
    d_z[idx] = dh[idx] * (trace.cand[idx] - h_prev[idx]);
    d_cand[idx] = dh[idx] * trace.z[idx];
    out.dh_prev[idx] += dh[idx] * (1.0 - trace.z[idx]);
  }

  const Tensor d_pre_cand = tanh_backward(trace.cand, d_cand);
  const Tensor gated = join(x, mul(trace.s, h_prev), cfg);
  Tensor d_gated(gated.shape());
  gate_backward(gated, params.weight(2), params.bias(2), d_pre_cand, d_gated,
                cfg);
  Tensor d_sh(h_prev.shape());
  unjoin(d_gated, out.dx, d_sh, cfg);

  Tensor d_s(trace.s.shape());
  for (std::size_t idx = 0; idx < d_sh.size(); ++idx) {
    d_s[idx] = d_sh[idx] * h_prev[idx];
    out.dh_prev[idx] += d_sh[idx] * trace.s[idx];
  }

  const Tensor d_pre_z = sigmoid_backward(trace.z, d_z);
  const Tensor d_pre_s = sigmoid_backward(trace.s, d_s);
  const Tensor joint = join(x, h_prev, cfg);
  Tensor d_joint(joint.shape());
  gate_backward(joint, params.weight(0), params.bias(0), d_pre_z, d_joint, cfg);
  gate_backward(joint, params.weight(1), params.bias(1), d_pre_s, d_joint, cfg);
  unjoin(d_joint, out.dx, out.dh_prev, cfg);
  return out;
}

}  // namespace mtse
