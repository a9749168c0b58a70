#include "oflg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace oflg {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '(': case ')': case '"': case '\'':
      return true;
    default:
      return false;
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<int> parse_label(Task task, const std::string& value, std::size_t line_no) {
  if (value == "NULL" || value.empty()) return std::nullopt;
  const auto& names = class_names(task);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == value) return static_cast<int>(i);
  }
  throw Error("line " + std::to_string(line_no) + ": unknown subtask_" +
              std::string(1, static_cast<char>(std::tolower(task_letter(task)))) + " label '" +
              value + "'");
}

}  // namespace

Task parse_task(std::string_view text) {
  if (text == "a" || text == "A") return Task::A;
  if (text == "b" || text == "B") return Task::B;
  if (text == "c" || text == "C") return Task::C;
  throw Error("unknown task '" + std::string(text) + "' (expected a, b or c)");
}

char task_letter(Task task) {
  switch (task) {
    case Task::A: return 'A';
    case Task::B: return 'B';
    case Task::C: return 'C';
  }
  return '?';
}

const std::vector<std::string>& class_names(Task task) {
  static const std::vector<std::string> a{"NOT", "OFF"};
  static const std::vector<std::string> b{"UNT", "TIN"};
  static const std::vector<std::string> c{"IND", "GRP", "OTH"};
  switch (task) {
    case Task::A: return a;
    case Task::B: return b;
    case Task::C: return c;
  }
  return a;
}

std::size_t class_count(Task task) { return class_names(task).size(); }

int label_index(Task task, std::string_view name) {
  const auto& names = class_names(task);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw Error("unknown label '" + std::string(name) + "' for task " + task_letter(task));
}

const std::optional<int>& TweetRecord::label(Task task) const {
  switch (task) {
    case Task::A: return label_a;
    case Task::B: return label_b;
    case Task::C: return label_c;
  }
  return label_a;
}

std::vector<TweetRecord> parse_olid(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);

  int col_id = -1, col_tweet = -1, col_a = -1, col_b = -1, col_c = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& h = header[i];
    const int idx = static_cast<int>(i);
    if (h == "id") col_id = idx;
    else if (h == "tweet") col_tweet = idx;
    else if (h == "subtask_a") col_a = idx;
    else if (h == "subtask_b") col_b = idx;
    else if (h == "subtask_c") col_c = idx;
  }
  if (col_id < 0 || col_tweet < 0) {
    throw Error("line 1: header must contain 'id' and 'tweet' columns");
  }

  std::vector<TweetRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != header.size()) {
      throw Error("line " + std::to_string(line_no) + ": expected " +
                  std::to_string(header.size()) + " columns, found " +
                  std::to_string(cols.size()));
    }
    TweetRecord rec;
    rec.id = cols[col_id];
    rec.raw_text = cols[col_tweet];
    if (col_a >= 0) rec.label_a = parse_label(Task::A, cols[col_a], line_no);
    if (col_b >= 0) rec.label_b = parse_label(Task::B, cols[col_b], line_no);
    if (col_c >= 0) rec.label_c = parse_label(Task::C, cols[col_c], line_no);

    const int off = label_index(Task::A, "OFF");
    const int tin = label_index(Task::B, "TIN");
    if (rec.label_b && rec.label_a != off) {
      throw Error("line " + std::to_string(line_no) + ": subtask_b label requires subtask_a OFF");
    }
    if (rec.label_c && rec.label_b != tin) {
      throw Error("line " + std::to_string(line_no) + ": subtask_c label requires subtask_b TIN");
    }

    auto cleaned = clean(rec.raw_text);
    rec.clean_text = std::move(cleaned.text);
    rec.user_count = cleaned.user_count;
    records.push_back(std::move(rec));
  }
  return records;
}

CleanResult clean(std::string_view raw) {
  static constexpr std::string_view kUser = "@USER";
  CleanResult result;

  for (std::size_t pos = raw.find(kUser); pos != std::string_view::npos;
       pos = raw.find(kUser, pos + kUser.size())) {
    ++result.user_count;
  }

  // Runs of standalone '@USER' tokens become one token. Whitespace is
  // normalized here already; the final squeeze makes that harmless.
  std::string text;
  text.reserve(raw.size());
  bool prev_user = false;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && is_space(raw[i])) ++i;
    const std::size_t start = i;
    while (i < raw.size() && !is_space(raw[i])) ++i;
    if (start == i) break;
    const auto token = raw.substr(start, i - start);
    const bool is_user = token == kUser;
    if (is_user && prev_user) continue;
    prev_user = is_user;
    if (!text.empty()) text.push_back(' ');
    text.append(token);
  }

  std::string spaced;
  spaced.reserve(text.size() * 2);
  for (char c : text) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c == '#' || c == '@') continue;
    if (is_split_punct(c)) {
      spaced.push_back(' ');
      spaced.push_back(c);
      spaced.push_back(' ');
    } else {
      spaced.push_back(c);
    }
  }

  result.text.reserve(spaced.size());
  for (const auto& tok : tokenize(spaced)) {
    if (!result.text.empty()) result.text.push_back(' ');
    result.text += tok;
  }
  return result;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnkToken));
}

void Vocabulary::add(const std::string& token) {
  if (token_to_index_.contains(token)) return;
  token_to_index_.emplace(token, static_cast<int>(index_to_token_.size()));
  index_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& token_lists) {
  Vocabulary vocab;
  for (const auto& tokens : token_lists) {
    for (const auto& t : tokens) vocab.add(t);
  }
  return vocab;
}

int Vocabulary::index_of(std::string_view token) const {
  const auto it = token_to_index_.find(std::string(token));
  return it == token_to_index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_index_.contains(std::string(token));
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : index_to_token_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& t : index_to_token_) out << t << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  Vocabulary vocab;
  vocab.token_to_index_.clear();
  vocab.index_to_token_.clear();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw Error("vocabulary line " + std::to_string(line_no) + " is empty");
    if (vocab.token_to_index_.contains(line)) {
      throw Error("vocabulary line " + std::to_string(line_no) + ": duplicate token '" + line + "'");
    }
    vocab.add(line);
  }
  if (vocab.size() < 2 || vocab.token(kPad) != kPadToken || vocab.token(kUnk) != kUnkToken) {
    throw Error("vocabulary must start with " + std::string(kPadToken) + " and " +
                std::string(kUnkToken));
  }
  return vocab;
}

std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                        std::size_t length) {
  if (length == 0) throw Error("sequence length must be at least 1");
  std::vector<int> out(length, Vocabulary::kPad);
  const std::size_t n = std::min(tokens.size(), length);
  const std::size_t skip = tokens.size() - n;
  for (std::size_t i = 0; i < n; ++i) {
    out[length - n + i] = vocab.index_of(tokens[skip + i]);
  }
  return out;
}

std::vector<TweetRecord> filter_task(const std::vector<TweetRecord>& records, Task task) {
  std::vector<TweetRecord> out;
  for (const auto& r : records) {
    if (r.label(task)) out.push_back(r);
  }
  return out;
}

std::vector<ClassUserStats> user_count_stats(const std::vector<TweetRecord>& records, Task task) {
  const auto& names = class_names(task);
  std::vector<std::vector<int>> per_class(names.size());
  for (const auto& r : records) {
    if (const auto& l = r.label(task)) per_class[*l].push_back(r.user_count);
  }
  std::vector<ClassUserStats> stats;
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto& counts = per_class[c];
    if (counts.empty()) throw Error("no records for class " + names[c]);
    double sum = 0.0;
    for (int v : counts) sum += v;
    const double mean = sum / static_cast<double>(counts.size());
    double sq = 0.0;
    for (int v : counts) sq += (v - mean) * (v - mean);
    stats.push_back({names[c], counts.size(), mean,
                     std::sqrt(sq / static_cast<double>(counts.size()))});
  }
  return stats;
}

void write_clean_tsv(std::ostream& out, const std::vector<TweetRecord>& records) {
  auto label = [](Task task, const std::optional<int>& l) -> std::string {
    return l ? class_names(task)[*l] : "NULL";
  };
  out << "id\tclean_text\tuser_count\tlabel_a\tlabel_b\tlabel_c\n";
  for (const auto& r : records) {
    out << r.id << '\t' << r.clean_text << '\t' << r.user_count << '\t'
        << label(Task::A, r.label_a) << '\t' << label(Task::B, r.label_b) << '\t'
        << label(Task::C, r.label_c) << '\n';
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error("validation fraction must lie in (0, 1)");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train, val;
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * idx.size()));
    val.insert(val.end(), idx.begin(), idx.begin() + n_val);
    train.insert(train.end(), idx.begin() + n_val, idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

}  // namespace oflg
