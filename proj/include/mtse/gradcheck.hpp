#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtse/tensor.hpp"

namespace mtse {

// Compares analytic gradients (already stored in each Parameter::grad)
// against central finite differences of `loss_fn`. `loss_fn` must be a pure
// scalar function of the current parameter values; probed coordinates are
// drawn with a seeded generator. Returns the max relative error
// |analytic - cd| / max(|analytic|, |cd|, 1e-8) over all probes.
double grad_check(const std::function<double()>& loss_fn,
                  const std::vector<Parameter*>& params, int probe_count,
                  double eps, std::uint64_t seed);

// One line of the gradcheck report: op name, observed error, tolerance.
struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  int rows = 8;
  int cols = 8;
  int steps = 4;
  int r = 4;
  int d = 3;
  int n_classes = 2;
  int probes = 40;
  double eps = 1e-5;
  std::uint64_t seed = 0;
  std::string inject_bad_grad;  // op name whose analytic grad gets perturbed
};

// Runs the whole per-module suite (tensor ops, one-step cells, head,
// end-to-end encoders). Every parameterized op appears exactly once.
std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckOptions& opt);

}  // namespace mtse
