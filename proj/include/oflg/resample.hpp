#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "oflg/common.hpp"

namespace oflg {

/// Examples per class label; at least two classes, each with a positive count.
using ClassCounts = std::map<int, std::size_t>;

enum class ResampleAction { Undersample, Oversample, Keep };

struct ResamplePlan {
  double undersample_fraction = 0.0;
  std::size_t target = 0;
  std::map<int, ResampleAction> actions;
};

/// Common per-class size: round(min + (1 - p_u) * (max - min)). p_u = 1 is
/// pure undersampling to the minority size, p_u = 0 pure oversampling to
/// the majority size.
std::size_t target_count(const ClassCounts& counts, double undersample_fraction);

ResamplePlan plan_resample(const ClassCounts& counts, double undersample_fraction);

ClassCounts count_labels(const std::vector<int>& labels);

/// Returns indices into `labels` forming the balanced set: classes above
/// the target are subsampled without replacement; classes below keep every
/// original once plus uniform draws with replacement. The result order is a
/// seeded shuffle.
std::vector<std::size_t> rebalance_indices(const std::vector<int>& labels,
                                           double undersample_fraction, std::uint64_t seed);

template <typename T, typename LabelOf>
std::vector<T> rebalance(const std::vector<T>& examples, LabelOf label_of,
                         double undersample_fraction, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (const auto& e : examples) labels.push_back(label_of(e));
  std::vector<T> out;
  for (std::size_t i : rebalance_indices(labels, undersample_fraction, seed)) {
    out.push_back(examples[i]);
  }
  return out;
}

}  // namespace oflg
