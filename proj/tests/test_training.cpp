#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "mtse/checkpoint.hpp"
#include "mtse/training.hpp"

using namespace mtse;

namespace {

// Tiny learnable dataset built directly in memory: pixel values encode the
// class with a mild temporal ramp, so a small conv cell separates it fast.
Dataset learnable_dataset(int n_samples, int tile = 8, int frames = 4,
                          int bands = 1, int classes = 2,
                          std::uint64_t seed = 0, int train_count = -1) {
  Dataset ds;
  ds.frames = frames;
  ds.rows = tile;
  ds.cols = tile;
  ds.depth = bands + 2;
  ds.n_classes = classes;

  Rng rng(seed);
  for (int s = 0; s < n_samples; ++s) {
    SampleRecord rec;
    rec.split = (train_count < 0 || s < train_count) ? Split::kTrain
                                                     : Split::kEvaluation;
    rec.mask.assign(static_cast<std::size_t>(frames), 1);
    rec.labels.resize(static_cast<std::size_t>(tile) * tile);
    for (auto& v : rec.labels)
      v = static_cast<std::int16_t>(rng.uniform_int(classes));
    rec.x.resize(static_cast<std::size_t>(frames) * tile * tile * ds.depth);
    std::size_t at = 0;
    for (int t = 0; t < frames; ++t) {
      const double day = static_cast<double>(t + 1) / (frames + 1);
      for (int y = 0; y < tile; ++y)
        for (int x = 0; x < tile; ++x) {
          const int cls = rec.labels[static_cast<std::size_t>(y) * tile + x];
          for (int b = 0; b < bands; ++b)
            rec.x[at++] = static_cast<float>(
                0.1 + 0.3 * cls + 0.1 * day * (cls + 1) +
                0.01 * rng.uniform());
          rec.x[at++] = static_cast<float>(day);
          rec.x[at++] = 0.0f;
        }
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

EncoderConfig small_encoder(const Dataset& ds, CellKind kind = CellKind::kGru,
                            int r = 4) {
  EncoderConfig cfg;
  cfg.cell.kind = kind;
  cfg.cell.arrangement = Arrangement::kConv;
  cfg.cell.r = r;
  cfg.cell.d = ds.depth;
  cfg.cell.k = 3;
  cfg.n_classes = ds.n_classes;
  cfg.k_class = 3;
  return cfg;
}

bool params_equal(const EncoderParams& a, const EncoderParams& b) {
  const auto pa = a.all();
  const auto pb = b.all();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.size(); ++j)
      if (pa[i]->value[j] != pb[i]->value[j]) return false;
  return true;
}

}  // namespace

TEST_CASE("subsample_sequence") {
  SUBCASE("keeps everything when n_keep covers the sequence") {
    Rng rng(1);
    CHECK(subsample_sequence(5, 5, rng) == std::vector<int>{0, 1, 2, 3, 4});
    Rng rng2(2);
    CHECK(subsample_sequence(3, 9, rng2) == std::vector<int>{0, 1, 2});
  }
  SUBCASE("indices strictly increasing and unique") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
      const int avail = 2 + static_cast<int>(rng.uniform_int(40));
      const int keep = 1 + static_cast<int>(rng.uniform_int(avail));
      const std::vector<int> idx = subsample_sequence(avail, keep, rng);
      CHECK(static_cast<int>(idx.size()) == std::min(keep, avail));
      for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
      CHECK(idx.front() >= 0);
      CHECK(idx.back() < avail);
    }
  }
  SUBCASE("deterministic per seed") {
    Rng a(7), b(7);
    CHECK(subsample_sequence(10, 3, a) == subsample_sequence(10, 3, b));
  }
  SUBCASE("empty availability is an error") {
    Rng rng(1);
    CHECK_THROWS_AS(subsample_sequence(0, 3, rng), DataError);
  }
}

TEST_CASE("optimizer_step") {
  TrainConfig cfg;
  SUBCASE("sgd definition") {
    cfg.optimizer = OptimizerKind::kSgd;
    cfg.learning_rate = 0.1;
    Parameter w("w", Tensor::from_data({1}, {1.0}));
    w.grad[0] = 0.5;
    std::vector<Parameter*> params{&w};
    OptimizerState st;
    optimizer_step(params, st, cfg);
    CHECK(w.value[0] == doctest::Approx(0.95).epsilon(1e-12));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
      cfg.optimizer = kind;
      Parameter w("w", Tensor::from_data({2}, {0.25, -1.5}));
      std::vector<Parameter*> params{&w};
      OptimizerState st;
      optimizer_step(params, st, cfg);
      CHECK(w.value[0] == 0.25);
      CHECK(w.value[1] == -1.5);
    }
  }
  SUBCASE("adam first step cancels bias correction") {
    cfg.optimizer = OptimizerKind::kAdam;
    cfg.learning_rate = 1e-3;
    Parameter w("w", Tensor({4}, 2.0));
    w.grad.fill(1.0);
    std::vector<Parameter*> params{&w};
    OptimizerState st;
    optimizer_step(params, st, cfg);
    for (std::size_t i = 0; i < w.value.size(); ++i)
      CHECK(w.value[i] == doctest::Approx(2.0 - 1e-3).epsilon(1e-6));
  }
  SUBCASE("non-finite gradients abort the step") {
    Parameter w("w", Tensor({1}, 1.0));
    w.grad[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<Parameter*> params{&w};
    OptimizerState st;
    CHECK_THROWS_AS(optimizer_step(params, st, cfg), NumericError);
  }
}

TEST_CASE("gradient clipping preserves direction") {
  Rng rng(5);
  Parameter a("a", Tensor({16}));
  Parameter b("b", Tensor({9}));
  for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] = rng.uniform(-3, 3);
  for (std::size_t i = 0; i < b.grad.size(); ++i) b.grad[i] = rng.uniform(-3, 3);
  std::vector<double> before;
  for (std::size_t i = 0; i < a.grad.size(); ++i) before.push_back(a.grad[i]);
  for (std::size_t i = 0; i < b.grad.size(); ++i) before.push_back(b.grad[i]);

  std::vector<Parameter*> params{&a, &b};
  const double pre_norm = clip_gradients(params, 1.0);
  CHECK(pre_norm > 1.0);

  double dot = 0.0, norm_before = 0.0, norm_after = 0.0;
  std::size_t at = 0;
  for (const Parameter* p : {&a, &b})
    for (std::size_t i = 0; i < p->grad.size(); ++i, ++at) {
      dot += before[at] * p->grad[i];
      norm_before += before[at] * before[at];
      norm_after += p->grad[i] * p->grad[i];
    }
  const double cosine = dot / std::sqrt(norm_before * norm_after);
  CHECK(cosine == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::sqrt(norm_after) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fit") {
  SUBCASE("zero learning rate changes nothing") {
    Dataset ds = learnable_dataset(4);
    EncoderConfig cfg = small_encoder(ds);
    EncoderParams params = init_encoder_params(cfg, 1);
    EncoderParams before = params;
    TrainConfig train;
    train.learning_rate = 0.0;
    train.epochs = 2;
    train.batch_size = 2;
    train.n_keep = 3;
    fit(ds, params, cfg, train);
    CHECK(params_equal(params, before));
  }
  SUBCASE("single-sample overfit reaches a tenth of the initial loss") {
    Dataset ds = learnable_dataset(1);
    EncoderConfig cfg = small_encoder(ds);
    EncoderParams params = init_encoder_params(cfg, 2);
    TrainConfig train;
    train.learning_rate = 1e-2;
    train.epochs = 200;
    train.batch_size = 1;
    train.n_keep = 4;
    train.seed = 3;
    FitResult result = fit(ds, params, cfg, train);
    REQUIRE(result.history.size() == 200);
    CHECK(result.history.back().loss <
          0.1 * result.history.front().loss);
  }
  SUBCASE("two runs with the same seeds match exactly") {
    Dataset ds = learnable_dataset(6);
    EncoderConfig cfg = small_encoder(ds);
    TrainConfig train;
    train.learning_rate = 1e-3;
    train.epochs = 3;
    train.batch_size = 2;
    train.n_keep = 3;
    train.seed = 11;

    EncoderParams p1 = init_encoder_params(cfg, 4);
    EncoderParams p2 = init_encoder_params(cfg, 4);
    FitResult r1 = fit(ds, p1, cfg, train);
    FitResult r2 = fit(ds, p2, cfg, train);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i)
      CHECK(r1.history[i].loss == r2.history[i].loss);
    CHECK(params_equal(p1, p2));
  }
  SUBCASE("thread count does not change the result") {
    Dataset ds = learnable_dataset(6);
    EncoderConfig cfg = small_encoder(ds);
    TrainConfig train;
    train.learning_rate = 1e-3;
    train.epochs = 2;
    train.batch_size = 3;
    train.n_keep = 3;
    train.seed = 13;

    EncoderParams p1 = init_encoder_params(cfg, 4);
    EncoderParams p2 = init_encoder_params(cfg, 4);
    train.threads = 1;
    FitResult r1 = fit(ds, p1, cfg, train);
    train.threads = 2;
    FitResult r2 = fit(ds, p2, cfg, train);
    for (std::size_t i = 0; i < r1.history.size(); ++i)
      CHECK(r1.history[i].loss == r2.history[i].loss);
    CHECK(params_equal(p1, p2));
  }
  SUBCASE("empty training split is an error") {
    Dataset ds = learnable_dataset(3, 8, 4, 1, 2, 0, 0);
    EncoderConfig cfg = small_encoder(ds);
    EncoderParams params = init_encoder_params(cfg, 1);
    TrainConfig train;
    CHECK_THROWS_AS(fit(ds, params, cfg, train), DataError);
  }
}

TEST_CASE("evaluate on the training data after an overfit run") {
  Dataset ds = learnable_dataset(2, 8, 4, 1, 2, 9);
  EncoderConfig cfg = small_encoder(ds);
  EncoderParams params = init_encoder_params(cfg, 5);
  TrainConfig train;
  train.learning_rate = 1e-2;
  train.epochs = 120;
  train.batch_size = 2;
  train.n_keep = 4;
  train.seed = 17;
  fit(ds, params, cfg, train);

  ConfusionMatrix cm(ds.n_classes);
  MetricsReport rep = evaluate(params, cfg, ds, Split::kTrain, &cm);
  CHECK(rep.overall_accuracy > 0.99);
  CHECK(static_cast<int>(rep.per_class.size()) == ds.n_classes);

  MetricsReport again = evaluate(params, cfg, ds, Split::kTrain);
  CHECK(again.overall_accuracy == rep.overall_accuracy);
  CHECK(again.kappa.value == rep.kappa.value);
}

TEST_CASE("checkpoint round-trip") {
  Dataset ds = learnable_dataset(2);
  EncoderConfig cfg = small_encoder(ds, CellKind::kLstm);
  EncoderParams params = init_encoder_params(cfg, 6);
  // Push the running stats off their defaults so they round-trip too.
  SequenceSample sample = ds.sample(0);
  forward(sample, params, cfg, BatchNormMode::kTrain);

  SUBCASE("forward is identical at stored precision") {
    save_checkpoint("ck_test.mtck", cfg, params, nullptr, 42, "{\"oa\":0.5}");
    Checkpoint ck = load_checkpoint("ck_test.mtck");
    CHECK(ck.step == 42);
    CHECK(ck.config.cell.r == cfg.cell.r);

    EncoderParams rounded = params;
    round_params_to_f32(rounded);
    ForwardResult expect =
        forward(sample, rounded, cfg, BatchNormMode::kInfer);
    ForwardResult got =
        forward(sample, ck.params, ck.config, BatchNormMode::kInfer);
    CHECK(expect.loss == got.loss);
    for (std::size_t i = 0; i < expect.y_hat.size(); ++i)
      CHECK(expect.y_hat[i] == got.y_hat[i]);
    std::remove("ck_test.mtck");
  }
  SUBCASE("save-load-save is byte stable") {
    save_checkpoint("ck_a.mtck", cfg, params, nullptr, 7);
    Checkpoint ck = load_checkpoint("ck_a.mtck");
    save_checkpoint("ck_b.mtck", ck.config, ck.params, nullptr, ck.step);
    std::ifstream fa("ck_a.mtck", std::ios::binary);
    std::ifstream fb("ck_b.mtck", std::ios::binary);
    std::string a((std::istreambuf_iterator<char>(fa)),
                  std::istreambuf_iterator<char>());
    std::string b((std::istreambuf_iterator<char>(fb)),
                  std::istreambuf_iterator<char>());
    // Headers carry the same config and step; metrics default to {} in both.
    CHECK(a == b);
    std::remove("ck_a.mtck");
    std::remove("ck_b.mtck");
  }
  SUBCASE("optimizer moments round-trip") {
    TrainConfig train;
    train.epochs = 1;
    train.batch_size = 2;
    train.n_keep = 4;
    OptimizerState opt;
    std::vector<Parameter*> plist = params.all();
    opt.ensure(plist);
    for (Parameter* p : plist) p->grad.fill(0.25);
    optimizer_step(plist, opt, train);

    save_checkpoint("ck_opt.mtck", cfg, params, &opt, 1);
    Checkpoint ck = load_checkpoint("ck_opt.mtck");
    REQUIRE(ck.opt.m.size() == opt.m.size());
    for (std::size_t i = 0; i < opt.m.size(); ++i)
      for (std::size_t j = 0; j < opt.m[i].size(); ++j) {
        CHECK(static_cast<double>(static_cast<float>(opt.m[i][j])) ==
              ck.opt.m[i][j]);
        CHECK(static_cast<double>(static_cast<float>(opt.v[i][j])) ==
              ck.opt.v[i][j]);
      }
    std::remove("ck_opt.mtck");
  }
  SUBCASE("truncated checkpoint is a typed error") {
    save_checkpoint("ck_t.mtck", cfg, params, nullptr, 1);
    std::ifstream in("ck_t.mtck", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out("ck_t.mtck", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 37));
    out.close();
    CHECK_THROWS_AS(load_checkpoint("ck_t.mtck"), DataError);
    std::remove("ck_t.mtck");
  }
  SUBCASE("bad magic is a typed error") {
    std::ofstream out("ck_m.mtck", std::ios::binary | std::ios::trunc);
    out << "NOPE and then some bytes";
    out.close();
    CHECK_THROWS_AS(load_checkpoint("ck_m.mtck"), DataError);
    std::remove("ck_m.mtck");
  }
}

TEST_CASE("history csv carries only deterministic columns") {
  std::vector<HistoryRow> rows{{1, 0, 0.5}, {2, 0, 0.25}};
  const std::string csv = history_csv(rows);
  CHECK(csv == "step,epoch,loss\n1,0,0.5\n2,0,0.25\n");
}
