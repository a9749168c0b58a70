#include "oflg/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <thread>

#include "oflg/eval.hpp"
#include "oflg/resample.hpp"

namespace oflg {

void BowMatrix::add_row(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first >= columns_) throw Error("bow row: column out of range");
    if (i && entries[i].first == entries[i - 1].first) throw Error("bow row: duplicate column");
  }
  rows_.push_back(std::move(entries));
}

double BowMatrix::at(std::size_t r, std::size_t c) const {
  const auto& row = rows_.at(r);
  const auto it = std::lower_bound(row.begin(), row.end(), Entry{static_cast<std::uint32_t>(c), -INFINITY});
  return it != row.end() && it->first == c ? it->second : 0.0;
}

BowMatrix BowMatrix::from_dense(const std::vector<std::vector<double>>& dense) {
  BowMatrix m(dense.empty() ? 0 : dense.front().size());
  for (const auto& r : dense) {
    if (r.size() != m.cols()) throw Error("ragged dense matrix");
    std::vector<Entry> e;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (r[c] != 0.0) e.emplace_back(static_cast<std::uint32_t>(c), r[c]);
    }
    m.add_row(std::move(e));
  }
  return m;
}

BowMatrix bow_matrix(const std::vector<std::vector<std::string>>& token_lists, const Vocabulary& vocab) {
  BowMatrix m(vocab.size());
  for (const auto& tokens : token_lists) {
    std::vector<BowMatrix::Entry> counts;
    for (const auto& t : tokens) {
      const int idx = vocab.index_of(t);
      if (idx == Vocabulary::kUnk || idx == Vocabulary::kPad) continue;
      counts.emplace_back(static_cast<std::uint32_t>(idx), 1.0);
    }
    std::sort(counts.begin(), counts.end());
    std::vector<BowMatrix::Entry> merged;
    for (const auto& e : counts) {
      if (!merged.empty() && merged.back().first == e.first) merged.back().second += 1.0;
      else merged.push_back(e);
    }
    m.add_row(std::move(merged));
  }
  return m;
}

double gini(const std::vector<double>& counts) {
  double n = 0.0;
  for (double c : counts) n += c;
  if (n <= 0.0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / n) * (c / n);
  return 1.0 - s;
}

// ---------------------------------------------------------------------------

namespace {

int argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

struct ValueGroup {
  double value;
  int label;      // -1 for the aggregated implicit-zero group
  double weight;  // sample count for the zero group
};

/// Split search over prepared per-feature nonzero lists. `zero_counts`
/// holds per-class counts of samples whose value is an implicit zero.
// impurities closer than this count as ties; the earlier split wins
constexpr double kTieTolerance = 1e-12;

class SplitSearch {
 public:
  SplitSearch(std::size_t classes, const std::vector<double>& node_counts)
      : classes_(classes), node_counts_(node_counts) {
    for (double c : node_counts) total_ += c;
  }

  /// Updates `best` if this feature yields a strictly better split.
  void consider(int feature, std::vector<ValueGroup>& groups, SplitChoice& best) const {
    // implicit zeros = node totals minus labelled nonzero entries
    std::vector<double> zero(node_counts_);
    double zero_total = total_;
    for (const auto& g : groups) {
      zero[static_cast<std::size_t>(g.label)] -= 1.0;
      zero_total -= 1.0;
    }
    std::sort(groups.begin(), groups.end(), [](const ValueGroup& a, const ValueGroup& b) {
      return a.value < b.value || (a.value == b.value && a.label < b.label);
    });

    std::vector<double> left(classes_, 0.0), right = node_counts_;
    double n_left = 0.0;
    bool zero_done = zero_total <= 0.5;
    auto add_zero_block = [&] {
      for (std::size_t c = 0; c < classes_; ++c) {
        left[c] += zero[c];
        right[c] -= zero[c];
      }
      n_left += zero_total;
      zero_done = true;
    };

    // Walk distinct values in order; the zero block sits at value 0.
    std::size_t i = 0;
    double current = 0.0;
    bool have_current = false;
    while (i < groups.size() || !zero_done) {
      double next_value;
      const bool take_zero = !zero_done && (i >= groups.size() || groups[i].value > 0.0);
      next_value = take_zero ? 0.0 : groups[i].value;

      if (have_current && next_value > current && n_left > 0.0 && n_left < total_) {
        const double imp = (n_left * gini(left) + (total_ - n_left) * gini(right)) / total_;
        const double thr = current + (next_value - current) / 2.0;
        if (best.feature < 0 || imp < best.impurity - kTieTolerance) best = {feature, thr, imp};
      }
      if (take_zero) {
        add_zero_block();
      } else {
        const auto lbl = static_cast<std::size_t>(groups[i].label);
        left[lbl] += 1.0;
        right[lbl] -= 1.0;
        n_left += 1.0;
        ++i;
      }
      current = next_value;
      have_current = true;
    }
  }

 private:
  std::size_t classes_;
  std::vector<double> node_counts_;
  double total_ = 0.0;
};

std::vector<double> class_counts(const std::vector<int>& y, const std::vector<std::size_t>& samples,
                                 std::size_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (auto s : samples) counts[static_cast<std::size_t>(y[s])] += 1.0;
  return counts;
}

/// Collects nonzero (value, label) pairs of each candidate feature.
std::vector<std::vector<ValueGroup>> gather(const BowMatrix& x, const std::vector<int>& y,
                                            const std::vector<std::size_t>& samples,
                                            const std::vector<std::size_t>& features,
                                            std::vector<int>& slot) {
  std::vector<std::vector<ValueGroup>> lists(features.size());
  for (std::size_t k = 0; k < features.size(); ++k) slot[features[k]] = static_cast<int>(k);
  for (auto s : samples) {
    for (const auto& [col, val] : x.row(s)) {
      const int k = slot[col];
      if (k >= 0) lists[static_cast<std::size_t>(k)].push_back({val, y[s], 1.0});
    }
  }
  for (auto f : features) slot[f] = -1;
  return lists;
}

class TreeBuilder {
 public:
  TreeBuilder(const BowMatrix& x, const std::vector<int>& y, std::size_t classes,
              std::size_t max_features, std::size_t min_split, std::uint64_t seed)
      : x_(x), y_(y), classes_(classes), max_features_(max_features), min_split_(min_split),
        rng_(seed), slot_(x.cols(), -1), perm_(x.cols()) {
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
  }

  DecisionTree build(std::vector<std::size_t> samples) {
    DecisionTree tree;
    grow(tree, std::move(samples));
    return tree;
  }

 private:
  int grow(DecisionTree& tree, std::vector<std::size_t> samples) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const auto counts = class_counts(y_, samples, classes_);
    tree.nodes[static_cast<std::size_t>(id)].distribution = counts;
    if (samples.size() < min_split_ || gini(counts) == 0.0) return id;

    const SplitChoice split = choose(samples, counts);
    if (split.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto s : samples) {
      (x_.at(s, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right).push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();
    const int l = grow(tree, std::move(left));
    const int r = grow(tree, std::move(right));
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  SplitChoice choose(const std::vector<std::size_t>& samples, const std::vector<double>& counts) {
    const SplitSearch search(classes_, counts);
    SplitChoice best;
    const std::size_t m = std::min(max_features_, perm_.size());
    for (std::size_t i = 0; i < m; ++i) std::swap(perm_[i], perm_[i + rng_.below(perm_.size() - i)]);
    std::vector<std::size_t> subset(perm_.begin(), perm_.begin() + static_cast<std::ptrdiff_t>(m));
    evaluate(samples, subset, search, best);
    if (best.feature >= 0) return best;

    // Keep looking past max_features among features that vary at this node.
    std::vector<std::size_t> present;
    for (auto s : samples) {
      for (const auto& [col, val] : x_.row(s)) {
        if (slot_[col] == -1) {
          slot_[col] = -2;
          present.push_back(col);
        }
      }
    }
    for (auto f : subset) {
      if (slot_[f] == -2) slot_[f] = -3;  // already tried
    }
    std::vector<std::size_t> rest;
    for (auto f : present) {
      if (slot_[f] == -2) rest.push_back(f);
      slot_[f] = -1;
    }
    for (auto f : subset) slot_[f] = -1;
    std::sort(rest.begin(), rest.end());
    rng_.shuffle(rest);
    for (std::size_t start = 0; start < rest.size() && best.feature < 0; start += std::max<std::size_t>(m, 1)) {
      const std::size_t end = std::min(rest.size(), start + std::max<std::size_t>(m, 1));
      std::vector<std::size_t> chunk(rest.begin() + static_cast<std::ptrdiff_t>(start),
                                     rest.begin() + static_cast<std::ptrdiff_t>(end));
      evaluate(samples, chunk, search, best);
    }
    return best;
  }

  void evaluate(const std::vector<std::size_t>& samples, const std::vector<std::size_t>& features,
                const SplitSearch& search, SplitChoice& best) {
    auto lists = gather(x_, y_, samples, features, slot_);
    for (std::size_t k = 0; k < features.size(); ++k) {
      search.consider(static_cast<int>(features[k]), lists[k], best);
    }
  }

  const BowMatrix& x_;
  const std::vector<int>& y_;
  std::size_t classes_, max_features_, min_split_;
  Rng rng_;
  std::vector<int> slot_;
  std::vector<std::size_t> perm_;
};

}  // namespace

SplitChoice best_split(const BowMatrix& x, const std::vector<int>& y, std::size_t classes,
                       const std::vector<std::size_t>& samples, const std::vector<std::size_t>& features) {
  const auto counts = class_counts(y, samples, classes);
  const SplitSearch search(classes, counts);
  std::vector<int> slot(x.cols(), -1);
  auto lists = gather(x, y, samples, features, slot);
  SplitChoice best;
  for (std::size_t k = 0; k < features.size(); ++k) {
    search.consider(static_cast<int>(features[k]), lists[k], best);
  }
  return best;
}

int DecisionTree::predict(const BowMatrix& x, std::size_t row) const {
  if (nodes.empty()) throw Error("empty decision tree");
  std::size_t n = 0;
  while (nodes[n].feature >= 0) {
    const auto& node = nodes[n];
    n = static_cast<std::size_t>(x.at(row, static_cast<std::size_t>(node.feature)) <= node.threshold ? node.left : node.right);
  }
  return argmax_first(nodes[n].distribution);
}

std::size_t DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  std::size_t deepest = 0;
  while (!stack.empty()) {
    auto [n, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (nodes[n].feature >= 0) {
      stack.emplace_back(static_cast<std::size_t>(nodes[n].left), d + 1);
      stack.emplace_back(static_cast<std::size_t>(nodes[n].right), d + 1);
    }
  }
  return deepest;
}

ForestModel train_forest(const BowMatrix& x, const std::vector<int>& y, std::size_t classes,
                         const ForestOptions& options) {
  if (x.rows() == 0) throw Error("cannot train a forest on empty data");
  if (y.size() != x.rows()) throw Error("label count differs from matrix rows");
  if (options.n_trees == 0) throw Error("forest needs at least one tree");
  for (int l : y) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw Error("label out of range");
  }
  ForestModel model;
  model.classes = classes;
  model.options = options;
  if (model.options.max_features == 0) {
    model.options.max_features = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(x.cols())))));
  }
  model.trees.resize(options.n_trees);

  Rng master(options.seed);
  std::vector<std::uint64_t> seeds(options.n_trees);
  for (auto& s : seeds) s = master.split();

  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t t = first; t < options.n_trees; t += stride) {
      Rng rng(seeds[t]);
      std::vector<std::size_t> sample(x.rows());
      for (auto& s : sample) s = rng.below(x.rows());
      TreeBuilder builder(x, y, classes, model.options.max_features,
                          std::max<std::size_t>(options.min_samples_split, 2), rng.split());
      model.trees[t] = builder.build(std::move(sample));
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, options.n_trees);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work, i, threads);
  }
  return model;
}

int vote(const std::vector<int>& tree_votes, std::size_t classes) {
  if (tree_votes.empty()) throw Error("empty forest has no vote");
  std::vector<double> tally(classes, 0.0);
  for (int v : tree_votes) tally.at(static_cast<std::size_t>(v)) += 1.0;
  return argmax_first(tally);
}

std::vector<int> predict_forest(const ForestModel& model, const BowMatrix& x) {
  if (model.trees.empty()) throw Error("empty forest");
  std::vector<int> out(x.rows());
  std::vector<int> votes(model.trees.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t t = 0; t < model.trees.size(); ++t) votes[t] = model.trees[t].predict(x, r);
    out[r] = vote(votes, model.classes);
  }
  return out;
}

// ---------------------------------------------------------------------------

PuSelection cv_select_pu(const std::vector<LabeledDoc>& data, std::size_t classes,
                         const PuSearchOptions& options) {
  if (options.folds < 2) throw Error("cross-validation needs at least two folds");
  if (options.grid.empty()) throw Error("empty p_u grid");
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int l = data[i].label;
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw Error("label out of range");
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].size() < options.folds) {
      throw Error("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                  " examples, fewer than " + std::to_string(options.folds) + " folds");
    }
  }

  // stratified fold assignment
  Rng rng(options.seed);
  std::vector<std::size_t> fold_of(data.size());
  for (auto& idx : by_class) {
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) fold_of[idx[k]] = k % options.folds;
  }
  std::vector<std::uint64_t> fold_seeds(options.folds);
  for (auto& s : fold_seeds) s = rng.split();

  PuSelection sel;
  for (double pu : options.grid) {
    PuCandidate cand;
    cand.undersample_fraction = pu;
    for (std::size_t f = 0; f < options.folds; ++f) {
      std::vector<std::size_t> train_idx, test_idx;
      for (std::size_t i = 0; i < data.size(); ++i) (fold_of[i] == f ? test_idx : train_idx).push_back(i);

      std::vector<int> train_labels;
      for (auto i : train_idx) train_labels.push_back(data[i].label);
      std::vector<std::vector<std::string>> train_tokens;
      std::vector<int> y;
      for (auto k : rebalance_indices(train_labels, pu, fold_seeds[f])) {
        train_tokens.push_back(data[train_idx[k]].tokens);
        y.push_back(train_labels[k]);
      }
      const auto vocab = Vocabulary::build(train_tokens);
      ForestOptions fo = options.forest;
      fo.seed = fold_seeds[f] ^ 0xf0f0f0f0ULL;
      const auto forest = train_forest(bow_matrix(train_tokens, vocab), y, classes, fo);

      std::vector<std::vector<std::string>> test_tokens;
      std::vector<int> y_test;
      for (auto i : test_idx) {
        test_tokens.push_back(data[i].tokens);
        y_test.push_back(data[i].label);
      }
      const auto pred = predict_forest(forest, bow_matrix(test_tokens, vocab));
      cand.fold_macro_f1.push_back(evaluate(y_test, pred, classes).macro_f1);
    }
    double sum = 0.0;
    for (double s : cand.fold_macro_f1) sum += s;
    cand.mean_macro_f1 = sum / static_cast<double>(cand.fold_macro_f1.size());
    sel.table.push_back(std::move(cand));
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < sel.table.size(); ++i) {
    const auto& a = sel.table[i];
    const auto& b = sel.table[best];
    if (a.mean_macro_f1 > b.mean_macro_f1 ||
        (a.mean_macro_f1 == b.mean_macro_f1 && a.undersample_fraction < b.undersample_fraction)) {
      best = i;
    }
  }
  sel.best = sel.table[best].undersample_fraction;
  return sel;
}

void write_pu_report_csv(std::ostream& out, const PuSelection& sel) {
  out << "p_u";
  const std::size_t folds = sel.table.empty() ? 0 : sel.table.front().fold_macro_f1.size();
  for (std::size_t f = 0; f < folds; ++f) out << ",fold" << f + 1;
  out << ",mean_macro_f1\n";
  for (const auto& c : sel.table) {
    out << format_double(c.undersample_fraction);
    for (double s : c.fold_macro_f1) out << ',' << format_double(s);
    out << ',' << format_double(c.mean_macro_f1) << '\n';
  }
}

}  // namespace oflg
