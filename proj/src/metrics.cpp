#include "nethira/metrics.hpp"

#include "nethira/error.hpp"

namespace nethira {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::size_t MetricsReport::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) {
    for (std::size_t c : row) n += c;
  }
  return n;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassMetrics& m : per_class) {
    classes.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
  }
  return {{"confusion", confusion},
          {"per_class", classes},
          {"macro", {{"precision", macro_precision}, {"recall", macro_recall}, {"f1", macro_f1}}},
          {"zero_division", 0}};
}

MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  MetricsReport report;
  const std::size_t n = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != n) throw Error(ErrorCode::kInvalidArgument, "confusion matrix must be square");
  }
  report.per_class.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t tp = confusion[c][c];
    std::size_t predicted = 0;
    std::size_t actual = 0;
    for (std::size_t k = 0; k < n; ++k) {
      predicted += confusion[k][c];
      actual += confusion[c][k];
    }
    ClassMetrics& m = report.per_class[c];
    m.precision = ratio(tp, predicted);
    m.recall = ratio(tp, actual);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.support = actual;
    report.macro_precision += m.precision;
    report.macro_recall += m.recall;
    report.macro_f1 += m.f1;
  }
  if (n > 0) {
    report.macro_precision /= static_cast<double>(n);
    report.macro_recall /= static_cast<double>(n);
    report.macro_f1 /= static_cast<double>(n);
  }
  report.confusion = std::move(confusion);
  return report;
}

MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted,
                              std::size_t n_classes) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorCode::kInvalidArgument, "truth and prediction lengths differ");
  }
  std::vector<std::vector<std::size_t>> confusion(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= n_classes ||
        static_cast<std::size_t>(p) >= n_classes) {
      throw Error(ErrorCode::kClassCountMismatch, "label outside [0, n_classes)");
    }
    ++confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return metrics_from_confusion(std::move(confusion));
}

}  // namespace nethira
