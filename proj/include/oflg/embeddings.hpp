#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "oflg/corpus.hpp"
#include "oflg/nn.hpp"

namespace oflg {

using RowVector = Eigen::RowVectorXd;

struct NgramConfig {
  std::size_t min_n = 3;
  std::size_t max_n = 6;
  std::size_t buckets = 100000;

  void validate() const;
};

/// Character n-grams (in code points) of '<' + word + '>' for
/// min_n <= n <= max_n, hashed with 32-bit FNV-1a modulo the bucket count.
/// The wrapped word itself is included when its length is within range.
std::vector<std::uint32_t> extract_ngrams(std::string_view word, const NgramConfig& cfg);
/// The n-gram strings, in the same order as extract_ngrams.
std::vector<std::string> ngram_strings(std::string_view word, const NgramConfig& cfg);

/// Subword-aware CBOW embeddings. Input rows are addressed in one index
/// space: [0, V) are word rows, [V, V + B) are n-gram bucket rows.
struct FastTextModel {
  NgramConfig ngrams;
  std::vector<std::string> words;
  std::unordered_map<std::string, int> word_index;
  std::vector<std::uint64_t> counts;
  nn::Matrix word_input;   // V x d
  nn::Matrix buckets;      // B x d
  nn::Matrix word_output;  // V x d

  std::size_t dim() const { return static_cast<std::size_t>(word_input.cols()); }
  std::size_t vocab_size() const { return words.size(); }
  int find(std::string_view word) const;

  /// Word row (if known) followed by the bucket rows of its n-grams.
  std::vector<int> input_rows(std::string_view word) const;
  /// Same, for a known word id (cached).
  const std::vector<int>& input_rows(int word_id) const;

  auto input_row(int r) { return r < static_cast<int>(words.size()) ? word_input.row(r) : buckets.row(r - static_cast<int>(words.size())); }
  auto input_row(int r) const { return r < static_cast<int>(words.size()) ? word_input.row(r) : buckets.row(r - static_cast<int>(words.size())); }

  /// Rebuilds the per-word row cache; call after changing words or ngrams.
  void index_subwords();

  /// Allocates matrices for `words` with uniform(-1/d, 1/d) inputs and zero outputs.
  static FastTextModel create(std::vector<std::string> words, std::vector<std::uint64_t> counts,
                              const NgramConfig& cfg, std::size_t dim, std::uint64_t seed);

  /// Text format: header `V B d`, V lines `word v1 .. vd`, then B bucket lines.
  void save(std::ostream& out) const;
  static FastTextModel load(std::istream& in, std::size_t min_n = 3, std::size_t max_n = 6);

 private:
  std::vector<std::vector<int>> subword_rows_;
};

/// Mean of the word row (if in vocabulary) and its n-gram bucket rows.
/// Throws when the word is unknown and has no n-grams.
RowVector word_vector(const FastTextModel& model, std::string_view word);

struct CbowParams {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  double subsample = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One CBOW prediction: context word ids, the center word, and noise words.
struct CbowExample {
  std::vector<int> context;
  int target = 0;
  std::vector<int> negatives;
};

/// -log sigma(u_t . h) - sum_n log sigma(-u_n . h), h = mean over context of
/// each context word's mean input row.
double cbow_loss(const FastTextModel& model, const CbowExample& ex);

/// Gradient of cbow_loss as (row, gradient) pairs; a row can repeat, in
/// which case the entries add up.
struct CbowGradient {
  std::vector<std::pair<int, RowVector>> input;   // combined input-row index space
  std::vector<std::pair<int, RowVector>> output;  // word ids
};
CbowGradient cbow_gradient(const FastTextModel& model, const CbowExample& ex);

/// Plain SGD step along -lr * gradient. Returns the loss before the step.
double cbow_update(FastTextModel& model, const CbowExample& ex, double lr);

/// Trains on a tokenized corpus, single-threaded and deterministic for a
/// given seed. The step size decays linearly to zero over all epochs.
FastTextModel train_cbow(const std::vector<std::vector<std::string>>& corpus,
                         const NgramConfig& cfg, const CbowParams& params);

/// Token -> vector map from `token v1 .. vd` lines; d comes from the first line.
struct TextEmbeddings {
  std::size_t dim = 0;
  std::unordered_map<std::string, RowVector> vectors;

  /// Throws when nothing was loaded.
  std::size_t require_dim() const;
};
TextEmbeddings load_text_embeddings(std::istream& in);

/// V x d matrix for the network: PAD row zero, UNK row the mean of the
/// remaining filled rows, tokens missing from the source copy the UNK row.
nn::Matrix build_embedding_matrix(const Vocabulary& vocab, const FastTextModel& source);
nn::Matrix build_embedding_matrix(const Vocabulary& vocab, const TextEmbeddings& source);

double cosine_similarity(const RowVector& a, const RowVector& b);

}  // namespace oflg
