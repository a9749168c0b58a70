#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "oflg/nn.hpp"

namespace oflg::hpo {

enum class Scale { Linear, Log };

struct Dimension {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  Scale scale = Scale::Linear;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  /// learning_rate in [1e-5, 1e-1] and weight_decay in [1e-12, 1e-2], both log.
  static SearchSpace defaults();
  void validate() const;
  std::size_t size() const { return dims.size(); }
  /// Unit-cube coordinates to actual values.
  std::vector<double> to_actual(const std::vector<double>& unit) const;
  std::vector<double> to_unit(const std::vector<double>& actual) const;
};

/// Exact GP regression with a squared-exponential kernel over the unit cube.
/// Targets are centred on their mean; the signal variance is the sample
/// variance of the targets (1 with a single observation, 0 when all
/// targets are equal). Lengthscales are chosen from a grid by log marginal
/// likelihood.
class GpSurrogate {
 public:
  static constexpr double kJitter = 1e-8;

  static GpSurrogate fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y);
  static GpSurrogate fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                         const std::vector<double>& lengthscales, double signal_variance);

  struct Posterior {
    double mean = 0.0;
    double variance = 0.0;
  };
  Posterior posterior(const std::vector<double>& x) const;

  double log_marginal_likelihood() const { return lml_; }
  const std::vector<double>& lengthscales() const { return lengthscales_; }
  double signal_variance() const { return signal_variance_; }
  double prior_mean() const { return mean_; }

  /// Candidate lengthscales tried per dimension.
  static const std::vector<double>& lengthscale_grid();

 private:
  double kernel(const std::vector<double>& a, const std::vector<double>& b) const;

  std::vector<std::vector<double>> x_;
  std::vector<double> lengthscales_;
  double signal_variance_ = 1.0;
  double mean_ = 0.0;
  nn::Matrix chol_;         // lower Cholesky factor of K + jitter I
  Eigen::VectorXd alpha_;   // (K + jitter I)^-1 (y - mean)
  double lml_ = 0.0;
};

/// Lower Cholesky factor; throws when the matrix is not positive definite.
nn::Matrix cholesky(const nn::Matrix& a);

/// Minimization convention: (best - mean) Phi(z) + sigma phi(z),
/// z = (best - mean) / sigma; max(best - mean, 0) when sigma is zero.
double expected_improvement(double mean, double variance, double best);

struct TraceRow {
  std::size_t iteration = 0;
  std::vector<double> point;  // actual values
  double objective = 0.0;
  double incumbent = 0.0;
};

struct BoResult {
  std::vector<double> best_point;
  double best_value = 0.0;
  std::vector<TraceRow> trace;
};

struct BoOptions {
  std::size_t n_init = 3;
  std::size_t n_iter = 10;
  std::size_t candidates = 1000;
  std::uint64_t seed = 0;
};

using Objective = std::function<double(const std::vector<double>&)>;

/// Seeded Halton initial design, then rounds of GP fit and EI maximization
/// over random candidates. A throwing or non-finite objective is recorded
/// as +inf and left out of the surrogate.
BoResult bo_loop(const Objective& objective, const SearchSpace& space, const BoOptions& options);

void write_trace_csv(std::ostream& out, const SearchSpace& space, const BoResult& result);

}  // namespace oflg::hpo
