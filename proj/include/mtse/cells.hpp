#pragma once

#include <cstdint>
#include <vector>

#include "mtse/tensor.hpp"

namespace mtse {

enum class CellKind { kRnn, kLstm, kGru };
enum class Arrangement { kDense, kConv };

struct CellConfig {
  CellKind kind = CellKind::kGru;
  Arrangement arrangement = Arrangement::kConv;
  int r = 32;               // recurrent cell count
  int d = 15;               // input depth
  int k = 3;                // kernel extent, conv arrangement only
  double forget_bias = 1.0; // LSTM forget pre-activation bias at init

  int gates() const {
    switch (kind) {
      case CellKind::kRnn: return 1;
      case CellKind::kGru: return 3;
      case CellKind::kLstm: return 4;
    }
    return 1;
  }
  int kernel_extent() const { return arrangement == Arrangement::kConv ? k : 1; }
  void validate() const;
};

// Hidden output h and, for LSTM only, the cell state c. Dense arrangement
// uses [r], conv uses [rows,cols,r]. Zero-initialized at sequence start.
struct CellState {
  Tensor h;
  Tensor c;  // empty unless LSTM

  bool has_c() const { return !c.empty(); }
};

CellState zero_state(const CellConfig& cfg, int rows = 1, int cols = 1);

// Per-gate weight blocks over the concatenated [x_t, h_{t-1}] input.
// Gate order: RNN {w}; LSTM {i, j, f, o}; GRU {z, s, cand}.
struct CellParams {
  std::vector<Parameter> items;

  Parameter& weight(int gate) { return items[static_cast<std::size_t>(2 * gate)]; }
  Parameter& bias(int gate) { return items[static_cast<std::size_t>(2 * gate + 1)]; }
  const Parameter& weight(int gate) const { return items[static_cast<std::size_t>(2 * gate)]; }
  const Parameter& bias(int gate) const { return items[static_cast<std::size_t>(2 * gate + 1)]; }

  void zero_grads() {
    for (auto& p : items) p.zero_grad();
  }
};

// Glorot-uniform weights with fan over k*k*(r+d) inputs and r outputs per
// gate; biases zero except the LSTM forget bias, which starts at
// cfg.forget_bias. Deterministic per seed.
CellParams init_cell_params(const CellConfig& cfg, std::uint64_t seed);

long param_count(const CellConfig& cfg);

// Gate tensors captured during one step, for backward and for the
// activation-trace export. Unused members stay empty.
struct GateTraceEntry {
  Tensor i, j, f, o;  // LSTM
  Tensor z, s, cand;  // GRU update/reset/candidate
  Tensor c, h;        // post-step state
};

// One-step transitions. `trace`, when given, receives the gate tensors
// needed for the matching backward call.
CellState rnn_step(const Tensor& x, const CellState& prev,
                   const CellParams& params, const CellConfig& cfg,
                   GateTraceEntry* trace = nullptr);
CellState lstm_step(const Tensor& x, const CellState& prev,
                    const CellParams& params, const CellConfig& cfg,
                    GateTraceEntry* trace = nullptr);
CellState gru_step(const Tensor& x, const CellState& prev,
                   const CellParams& params, const CellConfig& cfg,
                   GateTraceEntry* trace = nullptr);

CellState cell_step(const Tensor& x, const CellState& prev,
                    const CellParams& params, const CellConfig& cfg,
                    GateTraceEntry* trace = nullptr);

// Upstream gradients flowing out of one step.
struct StepGrads {
  Tensor dx;
  Tensor dh_prev;
  Tensor dc_prev;  // LSTM only
};

// Backward through one step. Parameter gradients accumulate into
// `params.items[*].grad`; dh/dc are the gradients w.r.t. this step's outputs.
// c_prev is ignored (may be empty) for non-LSTM kinds, as is dc.
StepGrads cell_step_backward(const Tensor& x, const Tensor& h_prev,
                             const Tensor& c_prev, const GateTraceEntry& trace,
                             const Tensor& dh, const Tensor& dc,
                             CellParams& params, const CellConfig& cfg);

}  // namespace mtse
