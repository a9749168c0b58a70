#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "oflg/corpus.hpp"

namespace oflg {

/// Document-term counts stored sparsely: each row lists (column, count)
/// pairs with increasing column.
class BowMatrix {
 public:
  using Entry = std::pair<std::uint32_t, double>;

  BowMatrix() = default;
  explicit BowMatrix(std::size_t columns) : columns_(columns) {}

  void add_row(std::vector<Entry> entries);
  std::size_t rows() const { return rows_.size(); }
  std::size_t cols() const { return columns_; }
  const std::vector<Entry>& row(std::size_t r) const { return rows_.at(r); }
  /// Value at (r, c), zero when absent.
  double at(std::size_t r, std::size_t c) const;

  static BowMatrix from_dense(const std::vector<std::vector<double>>& dense);

 private:
  std::size_t columns_ = 0;
  std::vector<std::vector<Entry>> rows_;
};

/// Raw occurrence counts over the vocabulary; PAD, UNK and unknown tokens
/// contribute nothing. Column c is vocabulary index c.
BowMatrix bow_matrix(const std::vector<std::vector<std::string>>& token_lists, const Vocabulary& vocab);

/// 1 - sum_i (n_i / N)^2; zero for an empty node.
double gini(const std::vector<double>& class_counts);

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> distribution;  // per-class sample counts reaching the node
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  int predict(const BowMatrix& x, std::size_t row) const;
  std::size_t depth() const;
};

struct ForestOptions {
  std::size_t n_trees = 100;
  /// Features tried per node; 0 means floor(sqrt(columns)).
  std::size_t max_features = 0;
  std::size_t min_samples_split = 2;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  std::size_t classes = 0;
  ForestOptions options;
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;  // sample-weighted mean Gini of the children
};

/// Best threshold split of `samples` over the candidate features: left is
/// value <= threshold, thresholds are midpoints between consecutive distinct
/// values. Ties keep the first candidate in feature order, then the lower
/// threshold. Returns feature -1 when no candidate separates the samples.
SplitChoice best_split(const BowMatrix& x, const std::vector<int>& y, std::size_t classes,
                       const std::vector<std::size_t>& samples, const std::vector<std::size_t>& features);

/// Bootstrap-sampled greedy Gini trees with a fresh random feature subset
/// per node, grown until pure or below min_samples_split. Per-tree seeds
/// derive from the master seed, so results do not depend on `threads`.
ForestModel train_forest(const BowMatrix& x, const std::vector<int>& y, std::size_t classes,
                         const ForestOptions& options);

/// Majority vote, ties to the lowest label.
std::vector<int> predict_forest(const ForestModel& model, const BowMatrix& x);
int vote(const std::vector<int>& tree_votes, std::size_t classes);

struct LabeledDoc {
  std::vector<std::string> tokens;
  int label = 0;
};

struct PuCandidate {
  double undersample_fraction = 0.0;
  std::vector<double> fold_macro_f1;
  double mean_macro_f1 = 0.0;
};

struct PuSelection {
  double best = 0.0;
  std::vector<PuCandidate> table;
};

struct PuSearchOptions {
  std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  ForestOptions forest;
};

/// Stratified k-fold cross-validation of the random forest for each p_u;
/// only the training folds are rebalanced. Best mean macro-F1 wins, ties to
/// the smaller p_u.
PuSelection cv_select_pu(const std::vector<LabeledDoc>& data, std::size_t classes,
                         const PuSearchOptions& options);

void write_pu_report_csv(std::ostream& out, const PuSelection& selection);

}  // namespace oflg
