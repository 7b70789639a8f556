#include "mer/metrics.hpp"

#include <stdexcept>

namespace mer {

Metrics metrics_from_confusion(const std::vector<std::vector<int64_t>>& confusion) {
  const size_t c = confusion.size();
  for (const auto& row : confusion)
    if (row.size() != c) throw std::invalid_argument("confusion matrix must be square");

  Metrics m;
  m.confusion = confusion;
  m.support.assign(c, 0);
  m.per_class_f1.assign(c, 0.0);

  int64_t correct = 0;
  std::vector<int64_t> col_sum(c, 0);
  for (size_t i = 0; i < c; ++i) {
    for (size_t j = 0; j < c; ++j) {
      m.support[i] += confusion[i][j];
      col_sum[j] += confusion[i][j];
      m.total += confusion[i][j];
    }
    correct += confusion[i][i];
  }
  if (m.total == 0) throw std::invalid_argument("confusion matrix is empty");
  m.accuracy = double(correct) / double(m.total);

  for (size_t i = 0; i < c; ++i) {
    const double tp = double(confusion[i][i]);
    const double precision = col_sum[i] > 0 ? tp / double(col_sum[i]) : 0.0;
    const double recall = m.support[i] > 0 ? tp / double(m.support[i]) : 0.0;
    const double f1 =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.per_class_f1[i] = f1;
    m.weighted_f1 += double(m.support[i]) / double(m.total) * f1;
  }
  return m;
}

Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                        int num_classes) {
  if (truth.size() != predicted.size())
    throw std::invalid_argument("metrics: truth/prediction length mismatch");
  std::vector<std::vector<int64_t>> confusion(
      size_t(num_classes), std::vector<int64_t>(size_t(num_classes), 0));
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 ||
        predicted[i] >= num_classes)
      throw std::invalid_argument("metrics: class index out of range");
    ++confusion[size_t(truth[i])][size_t(predicted[i])];
  }
  return metrics_from_confusion(confusion);
}

}  // namespace mer
