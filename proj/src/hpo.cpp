#include "oflg/hpo.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

namespace oflg::hpo {

SearchSpace SearchSpace::defaults() {
  return {{{"learning_rate", 1e-5, 1e-1, Scale::Log}, {"weight_decay", 1e-12, 1e-2, Scale::Log}}};
}

void SearchSpace::validate() const {
  if (dims.empty()) throw Error("search space has no dimensions");
  for (const auto& d : dims) {
    if (!(d.lower < d.upper)) throw Error("dimension " + d.name + ": lower bound must be below upper");
    if (d.scale == Scale::Log && !(d.lower > 0.0)) {
      throw Error("dimension " + d.name + ": log scale needs a positive lower bound");
    }
  }
}

std::vector<double> SearchSpace::to_actual(const std::vector<double>& unit) const {
  std::vector<double> out(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& d = dims[i];
    out[i] = d.scale == Scale::Log
                 ? std::exp(std::log(d.lower) + unit[i] * (std::log(d.upper) - std::log(d.lower)))
                 : d.lower + unit[i] * (d.upper - d.lower);
  }
  return out;
}

std::vector<double> SearchSpace::to_unit(const std::vector<double>& actual) const {
  std::vector<double> out(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& d = dims[i];
    out[i] = d.scale == Scale::Log
                 ? (std::log(actual[i]) - std::log(d.lower)) / (std::log(d.upper) - std::log(d.lower))
                 : (actual[i] - d.lower) / (d.upper - d.lower);
  }
  return out;
}

// ---------------------------------------------------------------------------

nn::Matrix cholesky(const nn::Matrix& a) {
  const Eigen::Index n = a.rows();
  nn::Matrix l = nn::Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw Error("matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

namespace {

Eigen::VectorXd forward_sub(const nn::Matrix& l, const Eigen::VectorXd& b) {
  Eigen::VectorXd x(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    double s = b(i);
    for (Eigen::Index k = 0; k < i; ++k) s -= l(i, k) * x(k);
    x(i) = s / l(i, i);
  }
  return x;
}

Eigen::VectorXd backward_sub_transposed(const nn::Matrix& l, const Eigen::VectorXd& b) {
  Eigen::VectorXd x(b.size());
  for (Eigen::Index i = b.size(); i-- > 0;) {
    double s = b(i);
    for (Eigen::Index k = i + 1; k < b.size(); ++k) s -= l(k, i) * x(k);
    x(i) = s / l(i, i);
  }
  return x;
}

}  // namespace

const std::vector<double>& GpSurrogate::lengthscale_grid() {
  static const std::vector<double> grid{0.05, 0.1, 0.2, 0.4, 0.8, 1.6};
  return grid;
}

double GpSurrogate::kernel(const std::vector<double>& a, const std::vector<double>& b) const {
  double r2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) / lengthscales_[i];
    r2 += d * d;
  }
  return signal_variance_ * std::exp(-0.5 * r2);
}

GpSurrogate GpSurrogate::fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                             const std::vector<double>& lengthscales, double signal_variance) {
  if (x.empty() || x.size() != y.size()) throw Error("GP fit needs matching, non-empty observations");
  if (lengthscales.size() != x.front().size()) throw Error("GP fit: one lengthscale per dimension");
  GpSurrogate gp;
  gp.x_ = x;
  gp.lengthscales_ = lengthscales;
  gp.signal_variance_ = signal_variance;
  double sum = 0.0;
  for (double v : y) sum += v;
  gp.mean_ = sum / static_cast<double>(y.size());

  const auto n = static_cast<Eigen::Index>(x.size());
  nn::Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = gp.kernel(x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)]);
    }
    k(i, i) += kJitter;
  }
  gp.chol_ = cholesky(k);
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) r(i) = y[static_cast<std::size_t>(i)] - gp.mean_;
  gp.alpha_ = backward_sub_transposed(gp.chol_, forward_sub(gp.chol_, r));
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) log_det += std::log(gp.chol_(i, i));
  gp.lml_ = -0.5 * r.dot(gp.alpha_) - log_det -
            0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  return gp;
}

GpSurrogate GpSurrogate::fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  if (x.empty() || x.size() != y.size()) throw Error("GP fit needs matching, non-empty observations");
  const std::size_t dims = x.front().size();
  double signal = 1.0;
  if (y.size() > 1) {
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    signal = var / static_cast<double>(y.size());
  }

  const auto& grid = lengthscale_grid();
  std::vector<std::size_t> pick(dims, 0);
  GpSurrogate best;
  bool have = false;
  // enumerate the full grid product (dims is small)
  for (;;) {
    std::vector<double> ls(dims);
    for (std::size_t d = 0; d < dims; ++d) ls[d] = grid[pick[d]];
    try {
      auto gp = fit(x, y, ls, signal);
      if (!have || gp.lml_ > best.lml_) {
        best = std::move(gp);
        have = true;
      }
    } catch (const Error&) {
      // not positive definite at this lengthscale; skip it
    }
    std::size_t d = 0;
    while (d < dims && ++pick[d] == grid.size()) pick[d++] = 0;
    if (d == dims) break;
  }
  if (!have) throw Error("GP fit failed for every lengthscale");
  return best;
}

GpSurrogate::Posterior GpSurrogate::posterior(const std::vector<double>& x) const {
  const auto n = static_cast<Eigen::Index>(x_.size());
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks(i) = kernel(x, x_[static_cast<std::size_t>(i)]);
  Posterior p;
  p.mean = mean_ + ks.dot(alpha_);
  const Eigen::VectorXd v = forward_sub(chol_, ks);
  p.variance = std::max(0.0, signal_variance_ - v.squaredNorm());
  return p;
}

double expected_improvement(double mean, double variance, double best) {
  const double sigma = std::sqrt(std::max(0.0, variance));
  const double gain = best - mean;
  if (sigma <= 0.0) return std::max(gain, 0.0);
  const double z = gain / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, gain * cdf + sigma * pdf);
}

// ---------------------------------------------------------------------------

namespace {

double radical_inverse(std::size_t i, std::size_t base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

constexpr std::size_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

}  // namespace

BoResult bo_loop(const Objective& objective, const SearchSpace& space, const BoOptions& options) {
  space.validate();
  const std::size_t dims = space.size();
  if (dims > std::size(kPrimes)) throw Error("too many search dimensions");
  if (options.n_init == 0) throw Error("need at least one initial point");
  Rng rng(options.seed);

  // Halton points with a random shift per dimension (Cranley-Patterson)
  std::vector<double> shift(dims);
  for (auto& s : shift) s = rng.uniform();

  BoResult result;
  result.best_value = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;

  auto evaluate = [&](const std::vector<double>& unit, std::size_t iteration) {
    const auto point = space.to_actual(unit);
    double value;
    try {
      value = objective(point);
    } catch (const std::exception&) {
      value = std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(value)) value = std::numeric_limits<double>::infinity();
    if (std::isfinite(value)) {
      xs.push_back(unit);
      ys.push_back(value);
    }
    if (value < result.best_value || result.best_point.empty()) {
      result.best_value = value;
      result.best_point = point;
    }
    result.trace.push_back({iteration, point, value, result.best_value});
  };

  for (std::size_t i = 0; i < options.n_init; ++i) {
    std::vector<double> u(dims);
    for (std::size_t d = 0; d < dims; ++d) {
      u[d] = std::fmod(radical_inverse(i + 1, kPrimes[d]) + shift[d], 1.0);
    }
    evaluate(u, i + 1);
  }

  std::vector<double> cand(dims);
  for (std::size_t it = 0; it < options.n_iter; ++it) {
    std::vector<double> next(dims);
    if (xs.empty()) {
      for (auto& v : next) v = rng.uniform();
    } else {
      const auto gp = GpSurrogate::fit(xs, ys);
      double best_ei = -1.0;
      for (std::size_t c = 0; c < options.candidates; ++c) {
        for (auto& v : cand) v = rng.uniform();
        const auto post = gp.posterior(cand);
        const double ei = expected_improvement(post.mean, post.variance, result.best_value);
        if (ei > best_ei) {
          best_ei = ei;
          next = cand;
        }
      }
    }
    evaluate(next, options.n_init + it + 1);
  }
  return result;
}

void write_trace_csv(std::ostream& out, const SearchSpace& space, const BoResult& result) {
  out << "iteration";
  for (const auto& d : space.dims) out << ',' << d.name;
  out << ",objective,incumbent\n";
  for (const auto& r : result.trace) {
    out << r.iteration;
    for (double v : r.point) out << ',' << format_double(v);
    out << ',' << format_double(r.objective) << ',' << format_double(r.incumbent) << '\n';
  }
}

}  // namespace oflg::hpo
