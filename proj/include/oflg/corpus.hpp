#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "oflg/common.hpp"

namespace oflg {

/// The three hierarchical OLID subtasks.
enum class Task { A, B, C };

Task parse_task(std::string_view text);
char task_letter(Task task);

/// Class names for a task in label-index order. Task A: NOT=0, OFF=1;
/// task B: UNT=0, TIN=1; task C: IND=0, GRP=1, OTH=2.
const std::vector<std::string>& class_names(Task task);
std::size_t class_count(Task task);
/// Label index for a class name of the task; throws on unknown names.
int label_index(Task task, std::string_view name);

struct TweetRecord {
  std::string id;
  std::string raw_text;
  std::string clean_text;
  int user_count = 0;
  std::optional<int> label_a;
  std::optional<int> label_b;
  std::optional<int> label_c;

  const std::optional<int>& label(Task task) const;
};

/// Reads an OLID tab-separated file. The header names the columns: `id`
/// and `tweet` are required, `subtask_a/b/c` are optional. "NULL" marks an
/// absent label. Throws Error naming the line for malformed rows, unknown
/// labels, or labels that break the A > B > C hierarchy.
std::vector<TweetRecord> parse_olid(std::istream& in);

struct CleanResult {
  std::string text;
  int user_count = 0;
};

/// Normalizes a raw tweet: counts '@USER', collapses runs of '@USER'
/// tokens, lowercases, strips '#' and '@', spaces out punctuation and
/// squeezes whitespace.
CleanResult clean(std::string_view raw);

std::vector<std::string> tokenize(std::string_view clean_text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  /// PAD and UNK first, then distinct tokens in first-occurrence order.
  static Vocabulary build(const std::vector<std::vector<std::string>>& token_lists);

  std::size_t size() const { return index_to_token_.size(); }
  /// Index of the token, or kUnk.
  int index_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t index) const { return index_to_token_.at(index); }
  const std::vector<std::string>& tokens() const { return index_to_token_; }

  /// FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  /// One token per line; the line number is the index.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);

 private:
  void add(const std::string& token);

  std::unordered_map<std::string, int> token_to_index_;
  std::vector<std::string> index_to_token_;
};

/// Fixed-length index sequence: unknown tokens map to UNK, long inputs keep
/// their last `length` tokens, short inputs are padded at the front.
std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                        std::size_t length);

struct EncodedExample {
  std::vector<int> indices;
  int user_count = 0;
  int label = 0;
};

std::vector<TweetRecord> filter_task(const std::vector<TweetRecord>& records, Task task);

struct ClassUserStats {
  std::string label;
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

/// Per-class mean and population standard deviation of user_count.
/// Throws when a class has no records.
std::vector<ClassUserStats> user_count_stats(const std::vector<TweetRecord>& records, Task task);

/// Writes `id, clean_text, user_count, label_a, label_b, label_c` with a header.
void write_clean_tsv(std::ostream& out, const std::vector<TweetRecord>& records);

/// Stratified seeded split. Returns (train indices, validation indices);
/// each class contributes round(fraction * class size) validation items.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, double val_fraction, std::uint64_t seed);

}  // namespace oflg
