#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtse/encoder.hpp"
#include "mtse/rng.hpp"
#include "mtse/tensor.hpp"

namespace mtse {

// Generation recipe for one synthetic scene. A scene is one tile's multi-
// temporal observation stack: per-class phenological reflectance curves on a
// field-parcel mosaic, cloud occlusions as temporal noise, and day-of-year /
// year metadata channels. Input depth d = n_bands + 2.
struct SceneSpec {
  int tile = 24;            // 24 or 48 pixels
  int n_bands = 13;
  int n_classes = 8;        // 2..17
  int t_per_season = 30;
  int seasons = 1;          // 1..2
  double cloud_prob = 0.0;  // per observation
  double noise_sigma = 0.0; // reflectance units
  std::uint64_t seed = 0;
  int min_field = 16;       // pixels
  double class_skew = 1.0;  // Zipf exponent of the class draw; 0 = uniform

  int depth() const { return n_bands + 2; }
  int total_frames() const { return t_per_season * seasons; }
  void validate() const;
};

// Double-logistic seasonal reflectance curve for one band.
struct BandPhenology {
  double rho_min = 0.05;
  double rho_max = 0.5;
  double t_green = 120.0;   // green-up day
  double t_senesce = 270.0; // senescence day
  double slope_up = 0.1;
  double slope_down = 0.1;
};

struct PhenologyProfile {
  std::vector<BandPhenology> bands;
};

// Deterministic per (spec.seed, class). Classes are staggered in green-up
// and senescence so their temporal profiles stay separable.
PhenologyProfile class_profile(const SceneSpec& spec, int class_id);

// rho(t) = rho_min + (rho_max - rho_min) * (sigma(a(t-t_g)) - sigma(b(t-t_s)))
double band_reflectance(const BandPhenology& band, double day);
std::vector<double> reflectance(const PhenologyProfile& profile, double day);

// Recursive axis-aligned rectangle splitting; pieces stop splitting below
// 2*min_field pixels and receive a class from the skewed draw.
LabelMap partition_fields(const SceneSpec& spec, Rng& rng);

// Applies at most one cloud event to the band channels of one [h,w,d] frame:
// whole-frame with probability cloud_prob/2, otherwise a random rectangle.
// Returns the cloud mask (diagnostics only, never model-visible).
std::vector<std::uint8_t> apply_clouds(Tensor& frame, int n_bands,
                                       double cloud_prob, Rng& rng);

// Full scene: [T,h,w,d] observations, all-true mask, constant-in-time labels.
SequenceSample generate_scene(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Dataset container ("MTSE" files).

enum class Split : std::uint8_t { kTrain = 0, kValidation = 1, kEvaluation = 2 };

struct SplitRatio {
  int train = 4;
  int val = 1;
  int eval = 1;
};

// One stored sample at 32-bit precision, as read from / written to file.
struct SampleRecord {
  Split split = Split::kTrain;
  std::vector<std::uint8_t> mask;
  std::vector<float> x;
  std::vector<std::int16_t> labels;
};

struct Dataset {
  int frames = 0, rows = 0, cols = 0, depth = 0, n_classes = 0;
  std::vector<SampleRecord> records;
  std::string metadata_json;

  int count() const { return static_cast<int>(records.size()); }
  SequenceSample sample(int index) const;     // lifts storage to doubles
  std::vector<int> indices(Split split) const;
};

// Generates n samples with per-sample derived seeds and cyclic split
// assignment in ratio order (train..., val, eval).
Dataset generate_dataset(const SceneSpec& spec, int n_samples,
                         SplitRatio ratio = {});

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

const char* split_name(Split s);

}  // namespace mtse
