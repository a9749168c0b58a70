#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace oflg::gradcheck {

/// ||a - n|| / max(||a|| + ||n||, 1e-12) over a whole gradient.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central differences of `loss` with respect to every entry of `x`
/// (entries are perturbed in place and restored).
std::vector<double> numeric_gradient(const std::function<double()>& loss, std::span<double> x,
                                     double step = 1e-5);

struct CheckResult {
  std::string name;
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  bool passed = false;
};

/// Names of the checks run by run_all, in order.
const std::vector<std::string>& check_names();

/// Runs one named check on randomized small shapes.
CheckResult run_check(const std::string& name, std::uint64_t seed, double tolerance = 1e-4);

/// Every check for seeds 1..seeds.
std::vector<CheckResult> run_all(std::size_t seeds, double tolerance = 1e-4);

}  // namespace oflg::gradcheck
