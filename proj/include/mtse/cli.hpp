#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtse {

// Resolved options per subcommand. The binary binds flags and the optional
// JSON config file onto these; the run_* functions are the testable command
// implementations. Each run writes exactly one manifest next to its outputs
// and returns the process exit code (errors are thrown as typed exceptions).

struct GenerateOptions {
  int tile = 24;
  int bands = 13;
  int classes = 8;
  int t_per_season = 30;
  int seasons = 1;
  double cloud_prob = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  int min_field = 16;
  double class_skew = 1.0;
  int samples = 60;
  std::string ratio = "4:1:1";
  std::string out;
};
int run_generate(const GenerateOptions& opt);

struct TrainOptions {
  std::string data;
  std::string cell = "gru";  // rnn | lstm | gru
  int r = 32;
  int k_rnn = 3;
  int k_class = 3;
  int batch = 8;
  int epochs = 10;
  int n_keep = 30;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::string optimizer = "adam";  // adam | sgd
  double clip_norm = 0.0;          // 0 disables
  std::string activation = "leaky_relu";  // relu | leaky_relu
  int checkpoint_interval = 0;
  int threads = 0;
  std::string out;
};
int run_train(const TrainOptions& opt);

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string split = "eval";  // train | val | eval
  std::string out;
  bool perfect = false;  // debug: feed labels as logits
  int heatmap_scale = 16;
  int threads = 0;
};
int run_eval(const EvalOptions& opt);

struct InferOptions {
  std::string checkpoint;
  std::string data;
  int sample = 0;
  std::string out;
  bool perfect = false;
  int rgb_frame = -1;  // -1 = middle unmasked observation
};
int run_infer(const InferOptions& opt);

struct ActivationsOptions {
  std::string checkpoint;
  std::string data;
  int sample = 0;
  std::vector<int> cells;
  std::string out;
  int inject_cloud_step = -1;  // -1 = no injection
  std::uint64_t seed = 0;
};
int run_activations(const ActivationsOptions& opt);

struct GradcheckCliOptions {
  int rows = 8;
  int cols = 8;
  int steps = 4;
  int r = 4;
  int d = 3;
  int classes = 2;
  int probes = 40;
  std::uint64_t seed = 0;
  std::string inject_bad_grad;
  std::string out;  // optional report directory
};
int run_gradcheck(const GradcheckCliOptions& opt);

// Exit-code contract shared with main(): 0 success, 2 config error,
// 3 data error, 4 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

}  // namespace mtse
