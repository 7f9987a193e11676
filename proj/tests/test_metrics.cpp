#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mtse/metrics.hpp"
#include "mtse/rng.hpp"

using namespace mtse;

namespace {

ConfusionMatrix worked_matrix() {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 40);
  cm.add(0, 1, 10);
  cm.add(1, 0, 20);
  cm.add(1, 1, 30);
  return cm;
}

// Brute-force recount straight from raw label pairs, sharing no code with
// the ConfusionMatrix implementation.
struct BruteForce {
  std::vector<int> truth, pred;
  int n;

  double accuracy() const {
    long hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      hit += truth[i] == pred[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(truth.size());
  }
  long pairs(int t, int p) const {
    long c = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      c += (truth[i] == t && pred[i] == p) ? 1 : 0;
    return c;
  }
  long with_truth(int t) const {
    long c = 0;
    for (int v : truth) c += v == t ? 1 : 0;
    return c;
  }
  long with_pred(int p) const {
    long c = 0;
    for (int v : pred) c += v == p ? 1 : 0;
    return c;
  }
  double kappa() const {
    const double total = static_cast<double>(truth.size());
    const double po = accuracy();
    double pe = 0.0;
    for (int c = 0; c < n; ++c)
      pe += static_cast<double>(with_truth(c)) *
            static_cast<double>(with_pred(c)) / (total * total);
    return (po - pe) / (1.0 - pe);
  }
};

}  // namespace

TEST_CASE("update") {
  ConfusionMatrix cm(3);
  SUBCASE("empty maps leave the matrix unchanged") {
    LabelMap pred(2, 2, 0), truth(2, 2, kIgnoreLabel);
    cm.update(pred, truth);
    CHECK(cm.total() == 0);
  }
  SUBCASE("agreement fills the diagonal only") {
    LabelMap pred(2, 2), truth(2, 2);
    pred.at(0, 0) = truth.at(0, 0) = 2;
    pred.at(0, 1) = truth.at(0, 1) = 1;
    pred.at(1, 0) = truth.at(1, 0) = 0;
    pred.at(1, 1) = truth.at(1, 1) = 1;
    cm.update(pred, truth);
    CHECK(cm.total() == 4);
    CHECK(cm.diagonal() == 4);
  }
  SUBCASE("hand-enumerated counts") {
    LabelMap pred(2, 2), truth(2, 2);
    truth.at(0, 0) = 0; pred.at(0, 0) = 1;
    truth.at(0, 1) = 1; pred.at(0, 1) = 1;
    truth.at(1, 0) = 2; pred.at(1, 0) = 0;
    truth.at(1, 1) = kIgnoreLabel; pred.at(1, 1) = 2;
    cm.update(pred, truth);
    CHECK(cm.count(0, 1) == 1);
    CHECK(cm.count(1, 1) == 1);
    CHECK(cm.count(2, 0) == 1);
    CHECK(cm.total() == 3);
  }
  SUBCASE("label out of range") {
    CHECK_THROWS_AS(cm.add(3, 0), DataError);
    CHECK_THROWS_AS(cm.add(0, -1), DataError);
  }
}

TEST_CASE("worked 2x2 matrix") {
  ConfusionMatrix cm = worked_matrix();
  CHECK(overall_accuracy(cm) == doctest::Approx(0.70).epsilon(1e-12));

  PrecisionRecallF c0 = precision_recall_f(cm, 0);
  CHECK(c0.precision.value == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(c0.recall.value == doctest::Approx(0.80).epsilon(1e-12));
  CHECK(c0.f.value == doctest::Approx(2.0 * (2.0 / 3.0) * 0.8 /
                                      (2.0 / 3.0 + 0.8)).epsilon(1e-12));

  CHECK(cohen_kappa(cm).value == doctest::Approx(0.40).epsilon(1e-12));
  CHECK(conditional_kappa(cm, 0).value == doctest::Approx(0.50).epsilon(1e-12));

  const auto rows = row_normalize(cm);
  CHECK(rows[0][0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(rows[0][1] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(rows[1][0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(rows[1][1] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("degenerate and extreme cases") {
  SUBCASE("diagonal matrix") {
    ConfusionMatrix cm(3);
    cm.add(0, 0, 5);
    cm.add(1, 1, 2);
    cm.add(2, 2, 9);
    CHECK(overall_accuracy(cm) == 1.0);
    CHECK(cohen_kappa(cm).value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(conditional_kappa(cm, 0).value == doctest::Approx(1.0).epsilon(1e-12));
    const auto rows = row_normalize(cm);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
              (i == j ? 1.0 : 0.0));
  }
  SUBCASE("all off-diagonal") {
    ConfusionMatrix cm(2);
    cm.add(0, 1, 4);
    cm.add(1, 0, 6);
    CHECK(overall_accuracy(cm) == 0.0);
  }
  SUBCASE("class never predicted nor present is flagged zeros") {
    ConfusionMatrix cm(3);
    cm.add(0, 0, 5);
    cm.add(1, 1, 5);
    PrecisionRecallF m = precision_recall_f(cm, 2);
    CHECK(m.precision.degenerate);
    CHECK(m.recall.degenerate);
    CHECK(m.f.degenerate);
    CHECK(m.precision.value == 0.0);
    CHECK(m.recall.value == 0.0);
    CHECK(m.f.value == 0.0);
  }
  SUBCASE("statistical independence gives kappa zero") {
    // n_ij = row_i * col_j / N built with integer cells.
    ConfusionMatrix cm(2);
    cm.add(0, 0, 5);
    cm.add(0, 1, 5);
    cm.add(1, 0, 10);
    cm.add(1, 1, 10);
    CHECK(std::fabs(cohen_kappa(cm).value) < 1e-12);
  }
  SUBCASE("row matching the column marginals gives conditional kappa zero") {
    ConfusionMatrix cm(2);
    cm.add(0, 0, 6);
    cm.add(0, 1, 4);
    cm.add(1, 0, 12);
    cm.add(1, 1, 8);
    CHECK(std::fabs(conditional_kappa(cm, 0).value) < 1e-12);
  }
  SUBCASE("zero row stays zero and is flagged") {
    ConfusionMatrix cm(2);
    cm.add(1, 0, 3);
    cm.add(1, 1, 3);
    std::vector<std::uint8_t> zero_rows;
    const auto rows = row_normalize(cm, &zero_rows);
    CHECK(zero_rows[0] == 1);
    CHECK(zero_rows[1] == 0);
    CHECK(rows[0][0] == 0.0);
    CHECK(rows[0][1] == 0.0);
  }
  SUBCASE("precision-side conditional kappa uses the column marginal") {
    ConfusionMatrix cm = worked_matrix();
    // (N*40 - 50*60) / (N*60 - 50*60) = 1000/3000
    CHECK(conditional_kappa(cm, 0, KappaSide::kPrecision).value ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("metrics agree with a brute-force recount over raw maps") {
  Rng rng(321);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(5));
    const int pixels = 20 + static_cast<int>(rng.uniform_int(200));
    BruteForce bf;
    bf.n = n;
    LabelMap pred(1, pixels), truth(1, pixels);
    for (int i = 0; i < pixels; ++i) {
      const int t = static_cast<int>(rng.uniform_int(n));
      const int p = rng.uniform() < 0.5
                        ? t
                        : static_cast<int>(rng.uniform_int(n));
      truth.at(0, i) = static_cast<std::int16_t>(t);
      pred.at(0, i) = static_cast<std::int16_t>(p);
      bf.truth.push_back(t);
      bf.pred.push_back(p);
    }
    ConfusionMatrix cm(n);
    cm.update(pred, truth);

    CHECK(overall_accuracy(cm) == doctest::Approx(bf.accuracy()).epsilon(1e-12));
    CHECK(cohen_kappa(cm).value == doctest::Approx(bf.kappa()).epsilon(1e-12));
    for (int c = 0; c < n; ++c) {
      CHECK(cm.count(c, c) == bf.pairs(c, c));
      PrecisionRecallF m = precision_recall_f(cm, c);
      if (bf.with_pred(c) > 0)
        CHECK(m.precision.value ==
              doctest::Approx(static_cast<double>(bf.pairs(c, c)) /
                              static_cast<double>(bf.with_pred(c)))
                  .epsilon(1e-12));
      if (bf.with_truth(c) > 0)
        CHECK(m.recall.value ==
              doctest::Approx(static_cast<double>(bf.pairs(c, c)) /
                              static_cast<double>(bf.with_truth(c)))
                  .epsilon(1e-12));
    }
  }
}

TEST_CASE("structural identities") {
  Rng rng(654);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(5));
    ConfusionMatrix cm(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        cm.add(i, j, static_cast<long>(rng.uniform_int(50)));
    if (cm.total() == 0) cm.add(0, 0, 1);

    // Overall accuracy equals the count-weighted mean of per-class recall.
    double weighted = 0.0;
    for (int c = 0; c < n; ++c) {
      if (cm.row_sum(c) == 0) continue;
      weighted += precision_recall_f(cm, c).recall.value *
                  static_cast<double>(cm.row_sum(c));
    }
    weighted /= static_cast<double>(cm.total());
    CHECK(overall_accuracy(cm) == doctest::Approx(weighted).epsilon(1e-12));

    // kappa < p_o whenever 0 < p_e and p_o < 1.
    const double po = overall_accuracy(cm);
    double pe = 0.0;
    for (int c = 0; c < n; ++c)
      pe += static_cast<double>(cm.row_sum(c)) *
            static_cast<double>(cm.col_sum(c)) /
            (static_cast<double>(cm.total()) * static_cast<double>(cm.total()));
    if (pe > 0.0 && pe < 1.0 && po < 1.0) CHECK(cohen_kappa(cm).value < po);

    // Metrics are invariant to scaling every count by the same integer.
    ConfusionMatrix scaled(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) scaled.add(i, j, 7 * cm.count(i, j));
    CHECK(overall_accuracy(scaled) ==
          doctest::Approx(overall_accuracy(cm)).epsilon(1e-12));
    CHECK(cohen_kappa(scaled).value ==
          doctest::Approx(cohen_kappa(cm).value).epsilon(1e-12));
    for (int c = 0; c < n; ++c)
      CHECK(conditional_kappa(scaled, c).value ==
            doctest::Approx(conditional_kappa(cm, c).value).epsilon(1e-12));
  }
}

TEST_CASE("csv export") {
  ConfusionMatrix cm = worked_matrix();
  MetricsReport rep = compute_report(cm);

  const std::string csv = metrics_csv(rep);
  std::istringstream lines(csv);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 1 + rep.n_classes + 2);  // header, classes, two summaries
  CHECK(csv.find("overall_accuracy,0.7") != std::string::npos);
  CHECK(csv.find("kappa,0.4") != std::string::npos);

  const std::string conf = confusion_csv(cm);
  CHECK(conf.find("# rows=reference") != std::string::npos);
  CHECK(conf.find("0.8,0.2") != std::string::npos);
  CHECK(conf.find("0.4,0.6") != std::string::npos);
}
