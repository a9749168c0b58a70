#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace testsupport {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  path_ = fs::temp_directory_path() / ("oflg-" + tag + "-" + std::to_string(rd()));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_synthetic_olid(const fs::path& path, std::size_t n, std::uint64_t seed) {
  static const char* triggers[] = {"idiot", "trash", "stupid", "moron"};
  static const char* filler[] = {"the",   "game",  "was",   "great", "today", "we",    "love",
                                 "this",  "team",  "what",  "a",     "day",   "for",   "all",
                                 "people", "vote", "news",  "watch", "again", "new",   "music",
                                 "is",    "so",    "good",  "you",   "are",   "right", "here",
                                 "time",  "think", "never", "maybe", "coffee", "city", "rain"};
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::size_t> pick_f(0, std::size(filler) - 1);
  std::uniform_int_distribution<std::size_t> pick_t(0, std::size(triggers) - 1);
  std::uniform_int_distribution<int> len(4, 14), users(0, 3);
  std::bernoulli_distribution offensive(0.35);

  std::ofstream out(path);
  out << "id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c\n";
  for (std::size_t i = 0; i < n; ++i) {
    const bool off = offensive(gen);
    std::vector<std::string> words;
    for (int u = users(gen); u > 0; --u) words.push_back("@USER");
    const int k = len(gen);
    for (int w = 0; w < k; ++w) words.push_back(filler[pick_f(gen)]);
    std::string b = "NULL", c = "NULL";
    if (off) {
      std::uniform_int_distribution<std::size_t> at(0, words.size());
      const auto t = pick_t(gen);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(at(gen)), triggers[t]);
      // idiot/moron are targeted; the target type follows the trigger and mention count
      if (t == 0 || t == 3) {
        b = "TIN";
        c = t == 0 ? "IND" : (words.front() == "@USER" ? "GRP" : "OTH");
      } else {
        b = "UNT";
      }
    }
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    text += off ? "!" : ".";
    out << (10000 + i) << '\t' << text << '\t' << (off ? "OFF" : "NOT") << '\t' << b << '\t' << c << '\n';
  }
}

std::vector<double> fd_gradient(const std::function<double()>& f, double* x, std::size_t n,
                                double h) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

BowData separable_bow(std::size_t n, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::size_t> cls(0, classes - 1), noise(0, 39), own(0, 4), extra(0, 3);
  BowData d;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cls(gen);
    std::vector<std::string> doc;
    for (auto k = 3 + extra(gen); k > 0; --k) doc.push_back("n" + std::to_string(noise(gen)));
    for (auto k = 1 + extra(gen) / 2; k > 0; --k) doc.push_back("c" + std::to_string(c) + "_" + std::to_string(own(gen)));
    std::shuffle(doc.begin(), doc.end(), gen);
    d.docs.push_back(std::move(doc));
    d.labels.push_back(static_cast<int>(c));
  }
  return d;
}

namespace {

double plain_gini(const std::vector<double>& c) {
  double n = 0.0, s = 0.0;
  for (double v : c) n += v;
  for (double v : c) s += v * v;
  return n == 0.0 ? 0.0 : 1.0 - s / (n * n);
}

}  // namespace

SplitOracle exhaustive_split(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                             std::size_t classes) {
  SplitOracle best;
  const double n = static_cast<double>(x.size());
  for (std::size_t f = 0; f < x[0].size(); ++f) {
    std::vector<double> vals;
    for (const auto& row : x) vals.push_back(row[f]);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double thr = (vals[k] + vals[k + 1]) / 2.0;
      std::vector<double> l(classes, 0.0), r(classes, 0.0);
      for (std::size_t i = 0; i < x.size(); ++i) (x[i][f] <= thr ? l : r)[static_cast<std::size_t>(y[i])] += 1.0;
      double nl = 0.0;
      for (double v : l) nl += v;
      const double imp = (nl * plain_gini(l) + (n - nl) * plain_gini(r)) / n;
      if (best.feature < 0 || imp < best.impurity - 1e-12) best = {static_cast<int>(f), thr, imp};
    }
  }
  return best;
}

}  // namespace testsupport
