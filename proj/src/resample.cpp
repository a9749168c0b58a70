#include "oflg/resample.hpp"

#include <algorithm>
#include <cmath>

namespace oflg {

namespace {

void check_counts(const ClassCounts& counts) {
  if (counts.size() < 2) throw Error("resampling needs at least two classes");
  for (const auto& [label, n] : counts) {
    if (n == 0) throw Error("class " + std::to_string(label) + " has no examples");
  }
}

}  // namespace

std::size_t target_count(const ClassCounts& counts, double undersample_fraction) {
  if (!(undersample_fraction >= 0.0 && undersample_fraction <= 1.0)) {
    throw Error("undersampling fraction must lie in [0, 1]");
  }
  check_counts(counts);
  std::size_t lo = counts.begin()->second, hi = lo;
  for (const auto& [label, n] : counts) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  const double target = static_cast<double>(lo) +
                        (1.0 - undersample_fraction) * static_cast<double>(hi - lo);
  return static_cast<std::size_t>(std::llround(target));
}

ResamplePlan plan_resample(const ClassCounts& counts, double undersample_fraction) {
  ResamplePlan plan;
  plan.undersample_fraction = undersample_fraction;
  plan.target = target_count(counts, undersample_fraction);
  for (const auto& [label, n] : counts) {
    plan.actions[label] = n > plan.target   ? ResampleAction::Undersample
                          : n < plan.target ? ResampleAction::Oversample
                                            : ResampleAction::Keep;
  }
  return plan;
}

ClassCounts count_labels(const std::vector<int>& labels) {
  ClassCounts counts;
  for (int l : labels) ++counts[l];
  return counts;
}

std::vector<std::size_t> rebalance_indices(const std::vector<int>& labels,
                                           double undersample_fraction, std::uint64_t seed) {
  const auto counts = count_labels(labels);
  const std::size_t target = target_count(counts, undersample_fraction);

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(target * by_class.size());
  for (auto& [label, idx] : by_class) {
    if (idx.size() >= target) {
      // partial Fisher-Yates: the first `target` slots are a uniform subset
      for (std::size_t i = 0; i < target; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      }
      out.insert(out.end(), idx.begin(), idx.begin() + target);
    } else {
      out.insert(out.end(), idx.begin(), idx.end());
      for (std::size_t k = idx.size(); k < target; ++k) {
        out.push_back(idx[rng.below(idx.size())]);
      }
    }
  }
  rng.shuffle(out);
  return out;
}

}  // namespace oflg
