#include "mtse/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mtse {

void SceneSpec::validate() const {
  if (tile != 24 && tile != 48) throw ConfigError("scene: tile must be 24 or 48");
  if (n_bands < 1) throw ConfigError("scene: n_bands must be >= 1");
  if (n_classes < 1 || n_classes > 17)
    throw ConfigError("scene: n_classes must be in 1..17");
  if (t_per_season < 1) throw ConfigError("scene: t_per_season must be >= 1");
  if (seasons < 1 || seasons > 2) throw ConfigError("scene: seasons must be 1 or 2");
  if (cloud_prob < 0.0 || cloud_prob >= 1.0)
    throw ConfigError("scene: cloud_prob must be in [0,1)");
  if (noise_sigma < 0.0) throw ConfigError("scene: noise_sigma must be >= 0");
  if (min_field < 1) throw ConfigError("scene: min_field must be >= 1");
  if (min_field > tile * tile)
    throw ConfigError("scene: tile too small for min_field");
}

namespace {

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Hash-uniform in [0,1), keyed on (seed, class, band, salt).
double hash01(std::uint64_t seed, int cls, int band, int salt) {
  const std::uint64_t h = derive_seed(
      seed, (static_cast<std::uint64_t>(cls) << 20) ^
                static_cast<std::uint64_t>(band),
      static_cast<std::uint64_t>(salt));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

constexpr double kSeasonStart = 60.0;
constexpr double kSeasonEnd = 330.0;
constexpr double kCloudLevel = 0.9;
constexpr double kCloudSigma = 0.05;

}  // namespace

PhenologyProfile class_profile(const SceneSpec& spec, int class_id) {
  // Green-up/senescence ladders keep any two classes at least a few days
  // apart, which separates their temporal profiles regardless of the
  // per-band amplitude draws.
  const double frac =
      spec.n_classes > 1
          ? static_cast<double>(class_id) / static_cast<double>(spec.n_classes)
          : 0.0;
  const double t_green = 80.0 + 150.0 * frac;
  const double t_senesce =
      t_green + 70.0 + 50.0 * hash01(spec.seed, class_id, -1, 1);

  PhenologyProfile profile;
  profile.bands.resize(static_cast<std::size_t>(spec.n_bands));
  for (int b = 0; b < spec.n_bands; ++b) {
    BandPhenology& band = profile.bands[static_cast<std::size_t>(b)];
    band.rho_min = 0.04 + 0.10 * hash01(spec.seed, -1, b, 2);
    const double amplitude = 0.25 + 0.45 * hash01(spec.seed, class_id, b, 3);
    band.rho_max = band.rho_min + amplitude;
    band.t_green = t_green;
    band.t_senesce = t_senesce;
    band.slope_up = 0.10 + 0.10 * hash01(spec.seed, class_id, b, 4);
    band.slope_down = 0.08 + 0.08 * hash01(spec.seed, class_id, b, 5);
  }
  return profile;
}

double band_reflectance(const BandPhenology& band, double day) {
  const double rise = logistic(band.slope_up * (day - band.t_green));
  const double fall = logistic(band.slope_down * (day - band.t_senesce));
  return band.rho_min + (band.rho_max - band.rho_min) * (rise - fall);
}

std::vector<double> reflectance(const PhenologyProfile& profile, double day) {
  std::vector<double> out;
  out.reserve(profile.bands.size());
  for (const BandPhenology& b : profile.bands)
    out.push_back(band_reflectance(b, day));
  return out;
}

namespace {

struct Rect {
  int y0, x0, rows, cols;
  long area() const { return static_cast<long>(rows) * cols; }
};

int draw_class(const SceneSpec& spec, Rng& rng) {
  if (spec.n_classes == 1) return 0;
  double total = 0.0;
  for (int c = 0; c < spec.n_classes; ++c)
    total += std::pow(static_cast<double>(c + 1), -spec.class_skew);
  double u = rng.uniform() * total;
  for (int c = 0; c < spec.n_classes; ++c) {
    u -= std::pow(static_cast<double>(c + 1), -spec.class_skew);
    if (u <= 0.0) return c;
  }
  return spec.n_classes - 1;
}

}  // namespace

LabelMap partition_fields(const SceneSpec& spec, Rng& rng) {
  if (spec.min_field > spec.tile * spec.tile)
    throw ConfigError("partition_fields: tile too small for min_field");

  LabelMap labels(spec.tile, spec.tile);
  std::vector<Rect> stack{{0, 0, spec.tile, spec.tile}};
  while (!stack.empty()) {
    const Rect r = stack.back();
    stack.pop_back();
    const int longer = std::max(r.rows, r.cols);
    if (r.area() < 2L * spec.min_field || longer < 2) {
      const int cls = draw_class(spec, rng);
      for (int y = r.y0; y < r.y0 + r.rows; ++y)
        for (int x = r.x0; x < r.x0 + r.cols; ++x)
          labels.at(y, x) = static_cast<std::int16_t>(cls);
      continue;
    }
    const int cut =
        1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(longer - 1)));
    if (r.rows >= r.cols) {
      stack.push_back({r.y0 + cut, r.x0, r.rows - cut, r.cols});
      stack.push_back({r.y0, r.x0, cut, r.cols});
    } else {
      stack.push_back({r.y0, r.x0 + cut, r.rows, r.cols - cut});
      stack.push_back({r.y0, r.x0, r.rows, cut});
    }
  }
  return labels;
}

std::vector<std::uint8_t> apply_clouds(Tensor& frame, int n_bands,
                                       double cloud_prob, Rng& rng) {
  const int h = frame.extent(0), w = frame.extent(1);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
  if (rng.uniform() >= cloud_prob) return mask;

  int y0 = 0, x0 = 0, rows = h, cols = w;
  const bool whole_frame = rng.uniform() < 0.5;
  if (!whole_frame) {
    y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h)));
    x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w)));
    rows = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - y0)));
    cols = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - x0)));
  }
  for (int y = y0; y < y0 + rows; ++y) {
    for (int x = x0; x < x0 + cols; ++x) {
      mask[static_cast<std::size_t>(y) * w + x] = 1;
      for (int b = 0; b < n_bands; ++b)
        frame.at(y, x, b) = kCloudLevel + rng.normal(0.0, kCloudSigma);
    }
  }
  return mask;
}

SequenceSample generate_scene(const SceneSpec& spec) {
  spec.validate();
  const int t_total = spec.total_frames();
  const int h = spec.tile, w = spec.tile, d = spec.depth();

  Rng rng_partition(derive_seed(spec.seed, 101));
  Rng rng_days(derive_seed(spec.seed, 102));
  Rng rng_noise(derive_seed(spec.seed, 103));
  Rng rng_clouds(derive_seed(spec.seed, 104));

  SequenceSample sample;
  sample.y = partition_fields(spec, rng_partition);
  sample.mask.assign(static_cast<std::size_t>(t_total), 1);
  sample.x = Tensor({t_total, h, w, d});

  // Irregular observation days: one acquisition per revisit window with a
  // random phase, like a quasi-periodic sensor with weather gaps. Keeps the
  // whole season covered while the spacing stays uneven.
  std::vector<double> days;
  std::vector<double> years;
  for (int s = 0; s < spec.seasons; ++s) {
    std::vector<double> season_days;
    const double window =
        (kSeasonEnd - kSeasonStart) / static_cast<double>(spec.t_per_season);
    for (int i = 0; i < spec.t_per_season; ++i)
      season_days.push_back(kSeasonStart +
                            (static_cast<double>(i) + rng_days.uniform()) *
                                window);
    std::sort(season_days.begin(), season_days.end());
    const double year_norm =
        spec.seasons == 1 ? 0.0
                          : static_cast<double>(s) /
                                static_cast<double>(spec.seasons - 1);
    for (double day : season_days) {
      days.push_back(day);
      years.push_back(year_norm);
    }
  }

  std::vector<PhenologyProfile> profiles;
  for (int c = 0; c < spec.n_classes; ++c)
    profiles.push_back(class_profile(spec, c));

  const std::size_t frame_elems = static_cast<std::size_t>(h) * w * d;
  for (int t = 0; t < t_total; ++t) {
    const double day_norm = days[static_cast<std::size_t>(t)] / 365.0;
    const double year_norm = years[static_cast<std::size_t>(t)];
    Tensor frame({h, w, d});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const PhenologyProfile& prof =
            profiles[static_cast<std::size_t>(sample.y.at(y, x))];
        for (int b = 0; b < spec.n_bands; ++b) {
          double v = band_reflectance(prof.bands[static_cast<std::size_t>(b)],
                                      days[static_cast<std::size_t>(t)]);
          if (spec.noise_sigma > 0.0) v += rng_noise.normal(0.0, spec.noise_sigma);
          frame.at(y, x, b) = v;
        }
        frame.at(y, x, spec.n_bands) = day_norm;
        frame.at(y, x, spec.n_bands + 1) = year_norm;
      }
    }
    apply_clouds(frame, spec.n_bands, spec.cloud_prob, rng_clouds);
    std::memcpy(sample.x.data() + static_cast<std::size_t>(t) * frame_elems,
                frame.data(), frame_elems * sizeof(double));
  }
  sample.x.check_finite("generate_scene");
  return sample;
}

SequenceSample Dataset::sample(int index) const {
  if (index < 0 || index >= count())
    throw DataError("dataset: sample index out of range");
  const SampleRecord& rec = records[static_cast<std::size_t>(index)];
  SequenceSample s;
  s.mask = rec.mask;
  s.y.rows = rows;
  s.y.cols = cols;
  s.y.v = rec.labels;
  std::vector<double> data(rec.x.size());
  for (std::size_t i = 0; i < rec.x.size(); ++i)
    data[i] = static_cast<double>(rec.x[i]);
  s.x = Tensor::from_data({frames, rows, cols, depth}, std::move(data));
  return s;
}

std::vector<int> Dataset::indices(Split split) const {
  std::vector<int> out;
  for (int i = 0; i < count(); ++i)
    if (records[static_cast<std::size_t>(i)].split == split) out.push_back(i);
  return out;
}

Dataset generate_dataset(const SceneSpec& spec, int n_samples,
                         SplitRatio ratio) {
  spec.validate();
  if (spec.n_classes < 2)
    throw ConfigError("dataset: n_classes must be >= 2 for classification");
  if (n_samples < 1) throw ConfigError("dataset: need at least one sample");
  if (ratio.train < 1 || ratio.val < 0 || ratio.eval < 0)
    throw ConfigError("dataset: bad split ratio");

  Dataset ds;
  ds.frames = spec.total_frames();
  ds.rows = spec.tile;
  ds.cols = spec.tile;
  ds.depth = spec.depth();
  ds.n_classes = spec.n_classes;

  const int period = ratio.train + ratio.val + ratio.eval;
  for (int i = 0; i < n_samples; ++i) {
    SceneSpec per_sample = spec;
    per_sample.seed = derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(i));
    SequenceSample scene = generate_scene(per_sample);

    SampleRecord rec;
    const int phase = i % period;
    rec.split = phase < ratio.train
                    ? Split::kTrain
                    : (phase < ratio.train + ratio.val ? Split::kValidation
                                                       : Split::kEvaluation);
    rec.mask = scene.mask;
    rec.labels = scene.y.v;
    rec.x.resize(scene.x.size());
    for (std::size_t j = 0; j < scene.x.size(); ++j)
      rec.x[j] = static_cast<float>(scene.x[j]);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

namespace {

constexpr char kMagic[4] = {'M', 'T', 'S', 'E'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError("dataset: truncated file");
  return v;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("dataset: cannot open for writing: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(ds.frames));
  write_u32(out, static_cast<std::uint32_t>(ds.rows));
  write_u32(out, static_cast<std::uint32_t>(ds.cols));
  write_u32(out, static_cast<std::uint32_t>(ds.depth));
  write_u32(out, static_cast<std::uint32_t>(ds.n_classes));
  write_u32(out, static_cast<std::uint32_t>(ds.count()));

  const std::size_t tensor_elems = static_cast<std::size_t>(ds.frames) *
                                   ds.rows * ds.cols * ds.depth;
  const std::size_t label_elems = static_cast<std::size_t>(ds.rows) * ds.cols;
  for (const SampleRecord& rec : ds.records) {
    if (rec.x.size() != tensor_elems || rec.labels.size() != label_elems ||
        rec.mask.size() != static_cast<std::size_t>(ds.frames))
      throw DataError("dataset: sample dims do not match header");
    const std::uint8_t tag = static_cast<std::uint8_t>(rec.split);
    out.write(reinterpret_cast<const char*>(&tag), 1);
    out.write(reinterpret_cast<const char*>(rec.mask.data()),
              static_cast<std::streamsize>(rec.mask.size()));
    out.write(reinterpret_cast<const char*>(rec.x.data()),
              static_cast<std::streamsize>(rec.x.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(rec.labels.data()),
              static_cast<std::streamsize>(rec.labels.size() * sizeof(std::int16_t)));
  }
  out.write(ds.metadata_json.data(),
            static_cast<std::streamsize>(ds.metadata_json.size()));
  if (!out) throw DataError("dataset: write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("dataset: bad magic");
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) throw DataError("dataset: unsupported version");

  Dataset ds;
  ds.frames = static_cast<int>(read_u32(in));
  ds.rows = static_cast<int>(read_u32(in));
  ds.cols = static_cast<int>(read_u32(in));
  ds.depth = static_cast<int>(read_u32(in));
  ds.n_classes = static_cast<int>(read_u32(in));
  const std::uint32_t n = read_u32(in);
  if (ds.frames < 1 || ds.rows < 1 || ds.cols < 1 || ds.depth < 1)
    throw DataError("dataset: bad header dims");

  const std::size_t tensor_elems = static_cast<std::size_t>(ds.frames) *
                                   ds.rows * ds.cols * ds.depth;
  const std::size_t label_elems = static_cast<std::size_t>(ds.rows) * ds.cols;
  for (std::uint32_t i = 0; i < n; ++i) {
    SampleRecord rec;
    std::uint8_t tag = 0;
    in.read(reinterpret_cast<char*>(&tag), 1);
    if (tag > 2) throw DataError("dataset: bad split tag");
    rec.split = static_cast<Split>(tag);
    rec.mask.resize(static_cast<std::size_t>(ds.frames));
    in.read(reinterpret_cast<char*>(rec.mask.data()),
            static_cast<std::streamsize>(rec.mask.size()));
    rec.x.resize(tensor_elems);
    in.read(reinterpret_cast<char*>(rec.x.data()),
            static_cast<std::streamsize>(tensor_elems * sizeof(float)));
    rec.labels.resize(label_elems);
    in.read(reinterpret_cast<char*>(rec.labels.data()),
            static_cast<std::streamsize>(label_elems * sizeof(std::int16_t)));
    if (!in) throw DataError("dataset: truncated file");
    ds.records.push_back(std::move(rec));
  }
  std::string meta((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  ds.metadata_json = std::move(meta);
  return ds;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "val";
    case Split::kEvaluation: return "eval";
  }
  return "?";
}

}  // namespace mtse
