#include "mtse/gradcheck.hpp"

#include <cmath>

#include "mtse/encoder.hpp"
#include "mtse/rng.hpp"

namespace mtse {

double grad_check(const std::function<double()>& loss_fn,
                  const std::vector<Parameter*>& params, int probe_count,
                  double eps, std::uint64_t seed) {
  if (params.empty()) throw ConfigError("grad_check: no parameters");
  Rng rng(seed);
  double worst = 0.0;
  for (int probe = 0; probe < probe_count; ++probe) {
    Parameter* p =
        params[static_cast<std::size_t>(rng.uniform_int(params.size()))];
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(p->value.size()));
    const double analytic = p->grad[i];
    const double saved = p->value[i];
    p->value[i] = saved + eps;
    const double plus = loss_fn();
    p->value[i] = saved - eps;
    const double minus = loss_fn();
    p->value[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus))
      throw NumericError("grad_check: non-finite loss");
    const double cd = (plus - minus) / (2.0 * eps);
    const double denom =
        std::max(std::max(std::fabs(analytic), std::fabs(cd)), 1e-8);
    worst = std::max(worst, std::fabs(analytic - cd) / denom);
  }
  return worst;
}

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = rng.uniform(-scale, scale);
  return t;
}

double weighted_sum(const Tensor& t, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * weights[i];
  return s;
}

void corrupt(Parameter& p) {
  for (std::size_t i = 0; i < p.grad.size(); ++i)
    p.grad[i] = p.grad[i] * 1.5 + 1e-2;
}

GradCheckEntry check_conv2d(const GradCheckOptions& opt, bool inject) {
  Rng rng(derive_seed(opt.seed, 11));
  Parameter input("input", random_tensor({5, 5, 2}, rng));
  Parameter kernel("kernel", random_tensor({3, 3, 2, 3}, rng));
  Parameter bias("bias", random_tensor({3}, rng));
  const Tensor weights = random_tensor({5, 5, 3}, rng);

  auto loss = [&] {
    return weighted_sum(conv2d(input.value, kernel.value, bias.value),
                        weights);
  };
  ConvGrads g = conv2d_backward(input.value, kernel.value, weights);
  input.grad = g.input;
  kernel.grad = g.kernel;
  bias.grad = g.bias;
  if (inject) corrupt(kernel);

  std::vector<Parameter*> params{&input, &kernel, &bias};
  GradCheckEntry e{"conv2d", 0.0, 1e-4, false};
  e.max_rel_err =
      grad_check(loss, params, opt.probes, opt.eps, derive_seed(opt.seed, 12));
  e.pass = e.max_rel_err < e.tolerance;
  return e;
}

GradCheckEntry check_affine(const GradCheckOptions& opt, bool inject) {
  Rng rng(derive_seed(opt.seed, 21));
  Parameter input("input", random_tensor({5}, rng));
  Parameter weight("weight", random_tensor({5, 4}, rng));
  Parameter bias("bias", random_tensor({4}, rng));
  const Tensor weights = random_tensor({4}, rng);

  auto loss = [&] {
    return weighted_sum(affine(input.value, weight.value, bias.value),
                        weights);
  };
  AffineGrads g = affine_backward(input.value, weight.value, weights);
  input.grad = g.input;
  weight.grad = g.weight;
  bias.grad = g.bias;
  if (inject) corrupt(weight);

  std::vector<Parameter*> params{&input, &weight, &bias};
  GradCheckEntry e{"affine", 0.0, 1e-4, false};
  e.max_rel_err =
      grad_check(loss, params, opt.probes, opt.eps, derive_seed(opt.seed, 22));
  e.pass = e.max_rel_err < e.tolerance;
  return e;
}

GradCheckEntry check_batch_norm(const GradCheckOptions& opt, bool inject) {
  Rng rng(derive_seed(opt.seed, 31));
  Parameter input("input", random_tensor({5, 5, 3}, rng));
  Parameter gamma("gamma", random_tensor({3}, rng));
  Parameter beta("beta", random_tensor({3}, rng));
  const Tensor weights = random_tensor({5, 5, 3}, rng);

  auto loss = [&] {
    RunningStats stats(3);
    BatchNormCache cache;
    return weighted_sum(batch_norm(input.value, gamma.value, beta.value, stats,
                                   BatchNormMode::kTrain, &cache),
                        weights);
  };
  RunningStats stats(3);
  BatchNormCache cache;
  batch_norm(input.value, gamma.value, beta.value, stats,
             BatchNormMode::kTrain, &cache);
  BatchNormGrads g =
      batch_norm_backward(weights, gamma.value, cache, BatchNormMode::kTrain);
  input.grad = g.input;
  gamma.grad = g.gamma;
  beta.grad = g.beta;
  if (inject) corrupt(gamma);

  std::vector<Parameter*> params{&input, &gamma, &beta};
  GradCheckEntry e{"batch_norm", 0.0, 1e-4, false};
  e.max_rel_err =
      grad_check(loss, params, opt.probes, opt.eps, derive_seed(opt.seed, 32));
  e.pass = e.max_rel_err < e.tolerance;
  return e;
}

GradCheckEntry check_cell_step(const GradCheckOptions& opt, CellKind kind,
                               const char* name, bool inject) {
  CellConfig cfg;
  cfg.kind = kind;
  cfg.arrangement = Arrangement::kConv;
  cfg.r = 3;
  cfg.d = 2;
  cfg.k = 3;

  Rng rng(derive_seed(opt.seed, 41));
  CellParams cell = init_cell_params(cfg, derive_seed(opt.seed, 42));
  Parameter x("x", random_tensor({4, 4, cfg.d}, rng));
  Parameter h_prev("h_prev", random_tensor({4, 4, cfg.r}, rng));
  Parameter c_prev("c_prev", random_tensor({4, 4, cfg.r}, rng));
  const Tensor weights = random_tensor({4, 4, cfg.r}, rng);

  auto loss = [&] {
    CellState prev;
    prev.h = h_prev.value;
    if (kind == CellKind::kLstm) prev.c = c_prev.value;
    const CellState next = cell_step(x.value, prev, cell, cfg);
    return weighted_sum(next.h, weights);
  };

  CellState prev;
  prev.h = h_prev.value;
  if (kind == CellKind::kLstm) prev.c = c_prev.value;
  GateTraceEntry trace;
  cell_step(x.value, prev, cell, cfg, &trace);
  cell.zero_grads();
  StepGrads g = cell_step_backward(x.value, h_prev.value, c_prev.value, trace,
                                   weights, Tensor(), cell, cfg);
  x.grad = g.dx;
  h_prev.grad = g.dh_prev;
  if (kind == CellKind::kLstm) c_prev.grad = g.dc_prev;

  std::vector<Parameter*> params{&x, &h_prev};
  if (kind == CellKind::kLstm) params.push_back(&c_prev);
  for (auto& p : cell.items) params.push_back(&p);
  if (inject) corrupt(cell.items[0]);

  GradCheckEntry e{name, 0.0, 1e-4, false};
  e.max_rel_err =
      grad_check(loss, params, opt.probes, opt.eps, derive_seed(opt.seed, 43));
  e.pass = e.max_rel_err < e.tolerance;
  return e;
}

GradCheckEntry check_encoder(const GradCheckOptions& opt, CellKind kind,
                             const char* name, bool inject) {
  EncoderConfig cfg;
  cfg.cell.kind = kind;
  cfg.cell.arrangement = Arrangement::kConv;
  cfg.cell.r = opt.r;
  cfg.cell.d = opt.d;
  cfg.cell.k = 3;
  cfg.n_classes = opt.n_classes;
  cfg.k_class = 3;

  Rng rng(derive_seed(opt.seed, 51));
  SequenceSample sample;
  sample.x = random_tensor({opt.steps, opt.rows, opt.cols, opt.d}, rng);
  sample.mask.assign(static_cast<std::size_t>(opt.steps), 1);
  sample.y = LabelMap(opt.rows, opt.cols);
  for (auto& v : sample.y.v)
    v = static_cast<std::int16_t>(rng.uniform_int(opt.n_classes));

  EncoderParams params = init_encoder_params(cfg, derive_seed(opt.seed, 52));
  auto loss = [&] {
    return forward(sample, params, cfg, BatchNormMode::kTrain).loss;
  };

  EncoderTrace trace;
  forward(sample, params, cfg, BatchNormMode::kTrain, &trace);
  params.zero_grads();
  backward(sample, params, cfg, trace);
  if (inject) corrupt(params.head_w1);

  GradCheckEntry e{name, 0.0, 1e-4, false};
  e.max_rel_err = grad_check(loss, params.all(), opt.probes, opt.eps,
                             derive_seed(opt.seed, 53));
  e.pass = e.max_rel_err < e.tolerance;
  return e;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckOptions& opt) {
  auto injected = [&opt](const char* name) {
    return opt.inject_bad_grad == name;
  };
  std::vector<GradCheckEntry> out;
  out.push_back(check_conv2d(opt, injected("conv2d")));
  out.push_back(check_affine(opt, injected("affine")));
  out.push_back(check_batch_norm(opt, injected("batch_norm")));
  out.push_back(
      check_cell_step(opt, CellKind::kRnn, "rnn_step", injected("rnn_step")));
  out.push_back(check_cell_step(opt, CellKind::kLstm, "lstm_step",
                                injected("lstm_step")));
  out.push_back(
      check_cell_step(opt, CellKind::kGru, "gru_step", injected("gru_step")));
  out.push_back(check_encoder(opt, CellKind::kRnn, "encoder_rnn",
                              injected("encoder_rnn")));
  out.push_back(check_encoder(opt, CellKind::kGru, "encoder_gru",
                              injected("encoder_gru")));
  out.push_back(check_encoder(opt, CellKind::kLstm, "encoder_lstm",
                              injected("encoder_lstm")));
  return out;
}

}  // namespace mtse
