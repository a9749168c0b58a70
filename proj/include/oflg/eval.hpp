#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace oflg {

using ConfusionMatrix = std::vector<std::vector<long>>;

/// k x k counts, rows = true class, columns = predicted class.
ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          std::size_t k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct MetricsReport {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  /// Zero-denominator notes, e.g. a class that was never predicted.
  std::vector<std::string> warnings;
};

/// Per-class precision, recall and F1 plus their unweighted mean F1.
/// A zero denominator yields 0 for that metric and a warning.
MetricsReport prf_macro(const ConfusionMatrix& confusion);

MetricsReport evaluate(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                       std::size_t k);

/// Aligned text table: one row per class then a macro row.
void print_report(std::ostream& out, const MetricsReport& report,
                  const std::vector<std::string>& class_names);
/// label,precision,recall,f1,support rows plus a macro row.
void write_report_csv(std::ostream& out, const MetricsReport& report,
                      const std::vector<std::string>& class_names);

}  // namespace oflg
