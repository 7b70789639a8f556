#pragma once
// Accuracy, per-class F1, support-weighted F1, confusion matrix
// (rows = true class, columns = predicted class).

#include <cstdint>
#include <vector>

namespace mer {

struct Metrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<std::vector<int64_t>> confusion;
  std::vector<int64_t> support;
  int64_t total = 0;
};

Metrics metrics_from_confusion(const std::vector<std::vector<int64_t>>& confusion);
Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                        int num_classes);

}  // namespace mer
