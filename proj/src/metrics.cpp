#include "mtse/metrics.hpp"

#include <cstdio>

namespace mtse {

ConfusionMatrix::ConfusionMatrix(int n) : n_(n) {
  if (n < 1) throw ConfigError("confusion matrix: need at least one class");
  counts_.assign(static_cast<std::size_t>(n) * n, 0);
}

void ConfusionMatrix::add(int truth, int pred, long count) {
  if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_)
    throw DataError("confusion matrix: label out of range");
  counts_[static_cast<std::size_t>(truth) * n_ + pred] += count;
}

void ConfusionMatrix::update(const LabelMap& pred, const LabelMap& truth) {
  if (pred.rows != truth.rows || pred.cols != truth.cols)
    throw ConfigError("confusion matrix: map shapes differ");
  for (std::size_t i = 0; i < truth.v.size(); ++i) {
    if (truth.v[i] == kIgnoreLabel) continue;
    add(truth.v[i], pred.v[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ConfigError("confusion matrix: class count differs");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

long ConfusionMatrix::total() const {
  long t = 0;
  for (long c : counts_) t += c;
  return t;
}

long ConfusionMatrix::row_sum(int truth) const {
  long t = 0;
  for (int p = 0; p < n_; ++p) t += count(truth, p);
  return t;
}

long ConfusionMatrix::col_sum(int pred) const {
  long t = 0;
  for (int r = 0; r < n_; ++r) t += count(r, pred);
  return t;
}

long ConfusionMatrix::diagonal() const {
  long t = 0;
  for (int i = 0; i < n_; ++i) t += count(i, i);
  return t;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total < 1) throw DataError("overall_accuracy: empty confusion matrix");
  return static_cast<double>(cm.diagonal()) / static_cast<double>(total);
}

PrecisionRecallF precision_recall_f(const ConfusionMatrix& cm, int cls) {
  const long hit = cm.count(cls, cls);
  const long predicted = cm.col_sum(cls);
  const long reference = cm.row_sum(cls);

  PrecisionRecallF out;
  if (predicted == 0)
    out.precision = {0.0, true};
  else
    out.precision = {static_cast<double>(hit) / static_cast<double>(predicted),
                     false};
  if (reference == 0)
    out.recall = {0.0, true};
  else
    out.recall = {static_cast<double>(hit) / static_cast<double>(reference),
                  false};
  const double p = out.precision.value, r = out.recall.value;
  if (p + r <= 0.0)
    out.f = {0.0, true};
  else
    out.f = {2.0 * p * r / (p + r), false};
  return out;
}

FlaggedValue cohen_kappa(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total < 1) throw DataError("cohen_kappa: empty confusion matrix");
  const double n = static_cast<double>(total);
  const double p_o = static_cast<double>(cm.diagonal()) / n;
  double p_e = 0.0;
  for (int i = 0; i < cm.classes(); ++i)
    p_e += static_cast<double>(cm.row_sum(i)) *
           static_cast<double>(cm.col_sum(i)) / (n * n);
  if (p_e >= 1.0) return {p_o >= 1.0 ? 1.0 : 0.0, true};
  return {(p_o - p_e) / (1.0 - p_e), false};
}

FlaggedValue conditional_kappa(const ConfusionMatrix& cm, int cls,
                               KappaSide side) {
  const double n = static_cast<double>(cm.total());
  if (n < 1.0) throw DataError("conditional_kappa: empty confusion matrix");
  const double hit = static_cast<double>(cm.count(cls, cls));
  const double row = static_cast<double>(cm.row_sum(cls));
  const double col = static_cast<double>(cm.col_sum(cls));
  const double marginal =
      side == KappaSide::kRecall ? row : col;  // normalizing marginal
  const double denom = n * marginal - row * col;
  if (denom == 0.0) return {0.0, true};
  return {(n * hit - row * col) / denom, false};
}

std::vector<std::vector<double>> row_normalize(
    const ConfusionMatrix& cm, std::vector<std::uint8_t>* zero_rows) {
  const int n = cm.classes();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n), 0.0));
  if (zero_rows) zero_rows->assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const long row = cm.row_sum(i);
    if (row == 0) {
      if (zero_rows) (*zero_rows)[static_cast<std::size_t>(i)] = 1;
      continue;
    }
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          static_cast<double>(cm.count(i, j)) / static_cast<double>(row);
  }
  return out;
}

MetricsReport compute_report(const ConfusionMatrix& cm) {
  MetricsReport rep;
  rep.n_classes = cm.classes();
  for (int c = 0; c < cm.classes(); ++c) {
    ClassMetrics m;
    m.cls = c;
    m.prf = precision_recall_f(cm, c);
    m.kappa = conditional_kappa(cm, c);
    rep.per_class.push_back(m);
  }
  rep.overall_accuracy = overall_accuracy(cm);
  rep.kappa = cohen_kappa(cm);
  return rep;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "class,precision,recall,f_measure,conditional_kappa\n";
  for (const ClassMetrics& m : report.per_class) {
    out += std::to_string(m.cls) + "," + fmt(m.prf.precision.value) + "," +
           fmt(m.prf.recall.value) + "," + fmt(m.prf.f.value) + "," +
           fmt(m.kappa.value) + "\n";
  }
  out += "overall_accuracy," + fmt(report.overall_accuracy) + ",,,\n";
  out += "kappa," + fmt(report.kappa.value) + ",,,\n";
  return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  // Rows are reference (ground truth), columns prediction; each nonzero row
  // is normalized to sum 1, so the diagonal carries per-class recall.
  std::string out = "# rows=reference, cols=prediction, row-normalized\n";
  const auto rows = row_normalize(cm);
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      out += fmt(row[j]);
      out += j + 1 < row.size() ? ',' : '\n';
    }
  }
  return out;
}

}  // namespace mtse
