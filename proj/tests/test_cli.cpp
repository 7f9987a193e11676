#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtse/checkpoint.hpp"
#include "mtse/cli.hpp"
#include "mtse/image_io.hpp"
#include "mtse/manifest.hpp"
#include "mtse/synthdata.hpp"

using namespace mtse;
namespace fs = std::filesystem;

namespace {

struct WorkDir {
  fs::path root;
  explicit WorkDir(const std::string& name) : root(fs::path("cli_work") / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  std::string path(const std::string& rel) const { return (root / rel).string(); }
};

GenerateOptions small_generate(const WorkDir& wd, const std::string& file) {
  GenerateOptions g;
  g.tile = 24;
  g.bands = 2;
  g.classes = 3;
  g.t_per_season = 4;
  g.samples = 12;
  g.seed = 5;
  g.out = wd.path(file);
  return g;
}

TrainOptions small_train(const WorkDir& wd, const std::string& data,
                         const std::string& out) {
  TrainOptions t;
  t.data = wd.path(data);
  t.cell = "gru";
  t.r = 4;
  t.batch = 4;
  t.epochs = 1;
  t.n_keep = 3;
  t.seed = 21;
  t.out = wd.path(out);
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Parses the per-class recall column of metrics.csv.
std::vector<double> recall_column(const std::string& csv, int n_classes) {
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // header
  std::vector<double> recalls;
  for (int c = 0; c < n_classes; ++c) {
    REQUIRE(std::getline(lines, line));
    std::istringstream fields(line);
    std::string field;
    for (int f = 0; f < 3; ++f) REQUIRE(std::getline(fields, field, ','));
    recalls.push_back(std::stod(field));
  }
  return recalls;
}

int run_cli(const std::string& args) {
#ifdef MTSE_CLI_PATH
  const std::string cmd = std::string(MTSE_CLI_PATH) + " " + args;
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
#else
  (void)args;
  return -1;
#endif
}

}  // namespace

TEST_CASE("generate writes a valid, reproducible container") {
  WorkDir wd("generate");
  GenerateOptions g = small_generate(wd, "a.mtse");
  CHECK(run_generate(g) == 0);

  std::ifstream in(g.out, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "MTSE");
  in.close();

  Dataset ds = read_dataset(g.out);
  CHECK(ds.n_classes == 3);
  CHECK(ds.depth == 4);
  CHECK(ds.count() == 12);
  CHECK(!ds.metadata_json.empty());
  CHECK(fs::exists(g.out + ".manifest.json"));

  GenerateOptions g2 = g;
  g2.out = wd.path("b.mtse");
  CHECK(run_generate(g2) == 0);
  CHECK(fnv1a_file(g.out) == fnv1a_file(g2.out));

  GenerateOptions g3 = g;
  g3.seed = 6;
  g3.out = wd.path("c.mtse");
  CHECK(run_generate(g3) == 0);
  CHECK(fnv1a_file(g.out) != fnv1a_file(g3.out));
}

TEST_CASE("generate honors the class count") {
  WorkDir wd("generate17");
  GenerateOptions g = small_generate(wd, "d.mtse");
  g.classes = 17;
  g.samples = 3;
  CHECK(run_generate(g) == 0);
  CHECK(read_dataset(g.out).n_classes == 17);
}

TEST_CASE("train smoke run, manifest param counts, reruns identical") {
  WorkDir wd("train");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);

  TrainOptions t = small_train(wd, "data.mtse", "run_gru");
  CHECK(run_train(t) == 0);
  CHECK(fs::exists(wd.path("run_gru/checkpoint.mtck")));
  CHECK(fs::exists(wd.path("run_gru/history.csv")));
  CHECK(fs::exists(wd.path("run_gru/manifest.json")));

  // Manifests record the cell parameter counts; GRU:LSTM must be 3:4.
  TrainOptions tl = small_train(wd, "data.mtse", "run_lstm");
  tl.cell = "lstm";
  CHECK(run_train(tl) == 0);
  const std::string m_gru = slurp(wd.path("run_gru/manifest.json"));
  const std::string m_lstm = slurp(wd.path("run_lstm/manifest.json"));
  auto count_of = [](const std::string& text) {
    const std::string key = "\"param_count_cell\": ";
    const std::size_t at = text.find(key);
    REQUIRE(at != std::string::npos);
    return std::stol(text.substr(at + key.size()));
  };
  CHECK(count_of(m_gru) * 4 == count_of(m_lstm) * 3);

  // Re-run with identical flags and seed: byte-identical history/checkpoint.
  TrainOptions t2 = small_train(wd, "data.mtse", "run_gru2");
  CHECK(run_train(t2) == 0);
  CHECK(fnv1a_file(wd.path("run_gru/history.csv")) ==
        fnv1a_file(wd.path("run_gru2/history.csv")));
  CHECK(fnv1a_file(wd.path("run_gru/checkpoint.mtck")) ==
        fnv1a_file(wd.path("run_gru2/checkpoint.mtck")));
}

TEST_CASE("eval with the perfect predictor and heatmap cross-check") {
  WorkDir wd("eval");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);

  EvalOptions e;
  e.data = wd.path("data.mtse");
  e.split = "eval";
  e.out = wd.path("report");
  e.perfect = true;
  e.heatmap_scale = 8;
  CHECK(run_eval(e) == 0);

  const std::string csv = slurp(wd.path("report/metrics.csv"));
  CHECK(csv.find("overall_accuracy,1") != std::string::npos);
  CHECK(csv.find("kappa,1") != std::string::npos);
  std::istringstream lines(csv);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 1 + 3 + 2);

  // Heatmap diagonal blocks carry the recall values from the CSV.
  const std::vector<double> recalls = recall_column(csv, 3);
  RgbImage heat = read_ppm(wd.path("report/confusion.ppm"));
  REQUIRE(heat.rows == 3 * 8);
  for (int c = 0; c < 3; ++c) {
    const double v = heat.at(c * 8, c * 8)[0] / 255.0;
    CHECK(std::fabs(v - recalls[static_cast<std::size_t>(c)]) <= 1.0 / 255.0);
  }
}

TEST_CASE("eval of a trained checkpoint works end to end") {
  WorkDir wd("eval2");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);
  TrainOptions t = small_train(wd, "data.mtse", "run");
  REQUIRE(run_train(t) == 0);

  EvalOptions e;
  e.checkpoint = wd.path("run/checkpoint.mtck");
  e.data = wd.path("data.mtse");
  e.split = "eval";
  e.out = wd.path("report");
  CHECK(run_eval(e) == 0);
  CHECK(fs::exists(wd.path("report/metrics.csv")));
  CHECK(fs::exists(wd.path("report/confusion_rownorm.csv")));
  CHECK(slurp(wd.path("report/confusion_rownorm.csv")).rfind("# rows=", 0) == 0);
}

TEST_CASE("eval rejects a checkpoint trained for a different dataset") {
  WorkDir wd("evalbad");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);
  TrainOptions t = small_train(wd, "data.mtse", "run");
  REQUIRE(run_train(t) == 0);

  GenerateOptions g2 = small_generate(wd, "other.mtse");
  g2.classes = 5;
  REQUIRE(run_generate(g2) == 0);

  EvalOptions e;
  e.checkpoint = wd.path("run/checkpoint.mtck");
  e.data = wd.path("other.mtse");
  e.out = wd.path("report");
  CHECK_THROWS_AS(run_eval(e), ConfigError);
}

TEST_CASE("infer exports a coherent set of maps") {
  WorkDir wd("infer");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);
  TrainOptions t = small_train(wd, "data.mtse", "run");
  REQUIRE(run_train(t) == 0);

  InferOptions i;
  i.checkpoint = wd.path("run/checkpoint.mtck");
  i.data = wd.path("data.mtse");
  i.sample = 1;
  i.out = wd.path("maps");
  CHECK(run_infer(i) == 0);

  for (const char* f : {"input_rgb.ppm", "labels.ppm", "prediction.ppm",
                        "loss.pgm", "class_0.pgm", "class_1.pgm",
                        "class_2.pgm"})
    CHECK(fs::exists(wd.path(std::string("maps/") + f)));
  CHECK(!fs::exists(wd.path("maps/class_3.pgm")));

  // The exported activations' argmax must agree with the prediction map,
  // up to 8-bit quantization ties.
  std::vector<GrayImage> acts;
  for (int c = 0; c < 3; ++c)
    acts.push_back(read_pgm(wd.path("maps/class_" + std::to_string(c) + ".pgm")));
  RgbImage pred = read_ppm(wd.path("maps/prediction.ppm"));
  for (int y = 0; y < pred.rows; ++y)
    for (int x = 0; x < pred.cols; ++x) {
      int pred_class = -1;
      for (int c = 0; c < 3; ++c)
        if (pred.at(y, x) == class_color(c)) pred_class = c;
      REQUIRE(pred_class >= 0);
      int best = 0;
      for (int c = 1; c < 3; ++c)
        if (acts[static_cast<std::size_t>(c)].at(y, x) >
            acts[static_cast<std::size_t>(best)].at(y, x))
          best = c;
      // The predicted class must be among the quantized maxima.
      CHECK(acts[static_cast<std::size_t>(pred_class)].at(y, x) ==
            acts[static_cast<std::size_t>(best)].at(y, x));
    }
}

TEST_CASE("infer with the perfect predictor yields an all-zero loss map") {
  WorkDir wd("inferperfect");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);

  InferOptions i;
  i.data = wd.path("data.mtse");
  i.sample = 0;
  i.out = wd.path("maps");
  i.perfect = true;
  CHECK(run_infer(i) == 0);
  GrayImage loss = read_pgm(wd.path("maps/loss.pgm"));
  for (std::uint8_t v : loss.v) CHECK(v == 0);
}

TEST_CASE("infer rejects out-of-range samples") {
  WorkDir wd("inferbad");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);
  InferOptions i;
  i.data = wd.path("data.mtse");
  i.sample = 99;
  i.out = wd.path("maps");
  i.perfect = true;
  CHECK_THROWS_AS(run_infer(i), DataError);
}

TEST_CASE("activations export") {
  WorkDir wd("act");
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);
  TrainOptions t = small_train(wd, "data.mtse", "run");
  t.cell = "lstm";
  REQUIRE(run_train(t) == 0);

  ActivationsOptions a;
  a.checkpoint = wd.path("run/checkpoint.mtck");
  a.data = wd.path("data.mtse");
  a.sample = 0;
  a.cells = {0, 2};
  a.out = wd.path("gates");

  SUBCASE("files, ranges and counts") {
    CHECK(run_activations(a) == 0);
    int files = 0;
    for (const auto& entry : fs::directory_iterator(wd.path("gates")))
      if (entry.path().extension() == ".pgm") ++files;
    // 2 cells x 4 observations x 4 gates (i, j, f, c).
    CHECK(files == 2 * 4 * 4);

    GrayImage img = read_pgm(wd.path("gates/cell000_t001_i.pgm"));
    for (std::uint8_t v : img.v) {
      const double back = v / 255.0;
      CHECK(back >= 0.0);
      CHECK(back <= 1.0);
    }
    const std::string csv = slurp(wd.path("gates/gate_means.csv"));
    std::istringstream lines(csv);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 1 + 2 * 4 * 4);
  }
  SUBCASE("cell index out of range") {
    a.cells = {99};
    CHECK_THROWS_AS(run_activations(a), ConfigError);
  }
  SUBCASE("cloud injection recorded in the manifest") {
    a.inject_cloud_step = 2;
    a.out = wd.path("gates_cloud");
    CHECK(run_activations(a) == 0);
    const std::string manifest = slurp(wd.path("gates_cloud/manifest.json"));
    CHECK(manifest.find("cloud_sensitivity") != std::string::npos);
    CHECK(manifest.find("cloud_identifiable") != std::string::npos);
  }
}

TEST_CASE("gradcheck command exit codes") {
  GradcheckCliOptions g;
  g.probes = 15;
  CHECK(run_gradcheck(g) == 0);
  g.inject_bad_grad = "conv2d";
  CHECK(run_gradcheck(g) == kExitNumeric);
}

TEST_CASE("lock file blocks concurrent runs on the same directory") {
  WorkDir wd("lock");
  fs::create_directories(wd.path("out"));
  std::ofstream(wd.path("out/.mtse.lock")) << "held\n";
  GenerateOptions g = small_generate(wd, "out/data.mtse");
  g.samples = 1;
  CHECK_THROWS_AS(run_generate(g), ConfigError);
}

#ifdef MTSE_CLI_PATH
TEST_CASE("binary maps typed errors to the exit-code contract") {
  WorkDir wd("exitcodes");
  // Unknown cell kind -> config error (2).
  GenerateOptions g = small_generate(wd, "data.mtse");
  REQUIRE(run_generate(g) == 0);
  CHECK(run_cli("train --data " + wd.path("data.mtse") +
                " --cell nosuch --out " + wd.path("r1") + " >/dev/null 2>&1") ==
        kExitConfig);
  // Missing dataset -> data error (3).
  CHECK(run_cli("train --data " + wd.path("missing.mtse") + " --out " +
                wd.path("r2") + " >/dev/null 2>&1") == kExitData);
  // Injected bad gradient -> numerical failure (4).
  CHECK(run_cli("gradcheck --probes 10 --inject-bad-grad gru_step "
                ">/dev/null 2>&1") == kExitNumeric);
}

TEST_CASE("config file supplies flags, command line overrides") {
  WorkDir wd("config");
  {
    std::ofstream cfg(wd.path("gen.json"));
    cfg << "{\"tile\": 24, \"bands\": 2, \"classes\": 4, "
           "\"t-per-season\": 3, \"samples\": 6, \"seed\": 9, \"out\": \""
        << wd.path("from_config.mtse") << "\"}";
  }
  CHECK(run_cli("generate --config " + wd.path("gen.json") +
                " >/dev/null 2>&1") == 0);
  Dataset ds = read_dataset(wd.path("from_config.mtse"));
  CHECK(ds.n_classes == 4);
  CHECK(ds.count() == 6);

  // Command line wins over the file.
  CHECK(run_cli("generate --config " + wd.path("gen.json") +
                " --classes 2 --out " + wd.path("override.mtse") +
                " >/dev/null 2>&1") == 0);
  CHECK(read_dataset(wd.path("override.mtse")).n_classes == 2);
}
#endif
