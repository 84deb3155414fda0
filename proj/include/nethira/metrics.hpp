#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace nethira {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // true instances

  bool operator==(const ClassMetrics&) const = default;
};

/// Confusion matrix (rows = truth, columns = prediction) with per-class and
/// unweighted macro precision, recall and F1. Any ratio whose denominator is
/// zero is reported as 0, so a class absent from both truth and predictions
/// contributes F1 = 0 to the macro mean.
struct MetricsReport {
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;

  std::size_t n_classes() const { return confusion.size(); }
  std::size_t total() const;
  nlohmann::json to_json() const;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion);

/// Throws Error{kClassCountMismatch} for labels outside [0, n_classes).
MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted,
                              std::size_t n_classes);

}  // namespace nethira
