#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace testsupport {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Writes an OLID-style TSV of `n` synthetic tweets. A tweet is
/// offensive iff it contains one of a few trigger words; the rest is filler
/// drawn from a shared vocabulary, plus a random number of @USER mentions.
/// Offensive tweets also carry consistent task B and C labels.
void write_synthetic_olid(const std::filesystem::path& path, std::size_t n, std::uint64_t seed);

/// Central-difference gradient of f over x, written independently of the
/// library checker.
std::vector<double> fd_gradient(const std::function<double()>& f, double* x, std::size_t n,
                                double h = 1e-6);

/// ||a - b|| / (||a|| + ||b||), 0 when both vanish.
double rel_err(const std::vector<double>& a, const std::vector<double>& b);

std::string read_file(const std::filesystem::path& path);

/// Linearly separable bag-of-words data: each document mixes shared noise
/// words with at least one word private to its class.
struct BowData {
  std::vector<std::vector<std::string>> docs;
  std::vector<int> labels;
};
BowData separable_bow(std::size_t n, std::size_t classes, std::uint64_t seed);

struct SplitOracle {
  int feature = -1;  // -1: no split separates anything
  double threshold = 0.0;
  double impurity = 0.0;
};
/// Brute force over every feature and every midpoint between distinct
/// values of dense rows; the first minimizer in (feature, threshold) order
/// wins, impurities within 1e-12 count as ties.
SplitOracle exhaustive_split(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                             std::size_t classes);

}  // namespace testsupport
