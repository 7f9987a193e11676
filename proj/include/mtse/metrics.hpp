#pragma once

#include <string>
#include <vector>

#include "mtse/encoder.hpp"

namespace mtse {

// n x n count histogram; rows index the reference (ground truth), columns
// the prediction. Mergeable by entrywise addition.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n);

  void add(int truth, int pred, long count = 1);
  // Per-pixel update; IGNORE-labeled truth pixels are skipped.
  void update(const LabelMap& pred, const LabelMap& truth);
  void merge(const ConfusionMatrix& other);

  int classes() const { return n_; }
  long count(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * n_ + pred];
  }
  long total() const;
  long row_sum(int truth) const;
  long col_sum(int pred) const;
  long diagonal() const;

 private:
  int n_;
  std::vector<long> counts_;
};

// Degenerate divisions yield value 0 with the flag set, never NaN.
struct FlaggedValue {
  double value = 0.0;
  bool degenerate = false;
};

double overall_accuracy(const ConfusionMatrix& cm);

struct PrecisionRecallF {
  FlaggedValue precision, recall, f;
};
PrecisionRecallF precision_recall_f(const ConfusionMatrix& cm, int cls);

FlaggedValue cohen_kappa(const ConfusionMatrix& cm);

// Fung & LeDrew per-class kappa. The recall (reference-row) side is the
// default; the precision side is available for comparison.
enum class KappaSide { kRecall, kPrecision };
FlaggedValue conditional_kappa(const ConfusionMatrix& cm, int cls,
                               KappaSide side = KappaSide::kRecall);

// Each nonzero row rescaled to sum 1; zero rows stay zero and are flagged.
// The diagonal of the result equals per-class recall.
std::vector<std::vector<double>> row_normalize(
    const ConfusionMatrix& cm, std::vector<std::uint8_t>* zero_rows = nullptr);

struct ClassMetrics {
  int cls = 0;
  PrecisionRecallF prf;
  FlaggedValue kappa;
};

struct MetricsReport {
  int n_classes = 0;
  std::vector<ClassMetrics> per_class;
  double overall_accuracy = 0.0;
  FlaggedValue kappa;
};

MetricsReport compute_report(const ConfusionMatrix& cm);

// CSV with one row per class (precision, recall, f, conditional kappa) and
// summary rows for overall accuracy and kappa.
std::string metrics_csv(const MetricsReport& report);
// Row-normalized matrix CSV. The header comment documents the orientation.
std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace mtse
