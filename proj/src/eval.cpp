#include "oflg/eval.hpp"

#include <iomanip>
#include <ostream>

#include "oflg/common.hpp"

namespace oflg {

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          std::size_t k) {
  if (y_true.size() != y_pred.size()) throw Error("confusion: label vectors differ in length");
  ConfusionMatrix m(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto t = static_cast<std::size_t>(y_true[i]);
    const auto p = static_cast<std::size_t>(y_pred[i]);
    if (y_true[i] < 0 || y_pred[i] < 0 || t >= k || p >= k) {
      throw Error("confusion: label out of range at position " + std::to_string(i));
    }
    ++m[t][p];
  }
  return m;
}

MetricsReport prf_macro(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  if (k < 2) throw Error("metrics need at least two classes");
  MetricsReport r;
  r.confusion = cm;
  r.per_class.resize(k);
  long total = 0, correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (cm[c].size() != k) throw Error("confusion matrix is not square");
    long tp = cm[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      total += cm[c][o];
      if (o == c) continue;
      fp += cm[o][c];
      fn += cm[c][o];
    }
    correct += tp;
    auto& m = r.per_class[c];
    m.support = tp + fn;
    if (tp + fp > 0) {
      m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
      r.warnings.push_back("class " + std::to_string(c) + ": precision undefined (no predictions), set to 0");
    }
    if (tp + fn > 0) {
      m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
      r.warnings.push_back("class " + std::to_string(c) + ": recall undefined (no true examples), set to 0");
    }
    if (m.precision + m.recall > 0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    r.macro_f1 += m.f1;
  }
  r.macro_f1 /= static_cast<double>(k);
  r.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

MetricsReport evaluate(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                       std::size_t k) {
  return prf_macro(confusion(y_true, y_pred, k));
}

void print_report(std::ostream& out, const MetricsReport& r,
                  const std::vector<std::string>& names) {
  const auto flags = out.flags();
  out << std::left << std::setw(8) << "label" << std::right << std::setw(11) << "precision"
      << std::setw(9) << "recall" << std::setw(9) << "F1" << std::setw(10) << "support" << '\n';
  out << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    out << std::left << std::setw(8) << (c < names.size() ? names[c] : std::to_string(c))
        << std::right << std::setw(11) << m.precision << std::setw(9) << m.recall << std::setw(9)
        << m.f1 << std::setw(10) << m.support << '\n';
  }
  out << std::left << std::setw(8) << "macro" << std::right << std::setw(11) << "" << std::setw(9)
      << "" << std::setw(9) << r.macro_f1 << '\n';
  out << "accuracy " << r.accuracy << '\n';
  out.flags(flags);
}

void write_report_csv(std::ostream& out, const MetricsReport& r,
                      const std::vector<std::string>& names) {
  out << "label,precision,recall,f1,support\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    out << (c < names.size() ? names[c] : std::to_string(c)) << ',' << format_double(m.precision)
        << ',' << format_double(m.recall) << ',' << format_double(m.f1) << ',' << m.support << '\n';
  }
  out << "macro,,," << format_double(r.macro_f1) << ',' << '\n';
}

}  // namespace oflg
