#include "faultdx/bayesopt/gaussian_process.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "faultdx/error.hpp"
#include "faultdx/rng.hpp"

namespace faultdx::bayesopt {

namespace {

constexpr double kMaxJitter = 1e-6;

double matern52_scaled(double r) {
  const double s = std::sqrt(5.0) * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

double scaled_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b,
                       const std::vector<double>& ls) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = (a(i) - b(i)) / ls[static_cast<std::size_t>(i)];
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

/// Cholesky of K + noise I, escalating jitter up to kMaxJitter.
std::optional<Factorization> factorize(const Eigen::MatrixXd& x, const KernelParams& kernel) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel.signal_variance * matern52_scaled(scaled_distance(x.row(i), x.row(j), kernel.length_scales));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  k.diagonal().array() += kernel.noise_variance;
  double jitter = 0.0;
  while (true) {
    Factorization f;
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    f.llt.compute(kj);
    if (f.llt.info() == Eigen::Success) {
      f.jitter = jitter;
      return f;
    }
    if (jitter >= kMaxJitter) return std::nullopt;
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
  }
}

double log_marginal(const Factorization& f, const Eigen::VectorXd& y, Eigen::VectorXd* alpha_out) {
  const Eigen::VectorXd alpha = f.llt.solve(y);
  const auto& l = f.llt.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += std::log(l(i, i));
  if (alpha_out != nullptr) *alpha_out = alpha;
  return -0.5 * y.dot(alpha) - log_det - 0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
}

/// Bounded Nelder-Mead (points are clamped into the box) maximizing `f`.
template <typename F>
std::pair<std::vector<double>, double> nelder_mead_max(F&& f, std::vector<double> start, double lo, double hi,
                                                       std::size_t max_evals) {
  const std::size_t d = start.size();
  auto clampv = [&](std::vector<double> v) {
    for (auto& x : v) x = std::clamp(x, lo, hi);
    return v;
  };
  std::vector<std::vector<double>> simplex{clampv(start)};
  for (std::size_t i = 0; i < d; ++i) {
    auto v = start;
    v[i] += (v[i] + 0.5 <= hi) ? 0.5 : -0.5;
    simplex.push_back(clampv(v));
  }
  std::vector<double> vals;
  std::size_t evals = 0;
  auto eval = [&](const std::vector<double>& v) {
    ++evals;
    return f(v);
  };
  for (const auto& v : simplex) vals.push_back(eval(v));
  while (evals < max_evals) {
    std::vector<std::size_t> order(simplex.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];
    if (std::abs(vals[best] - vals[worst]) < 1e-9) break;

    std::vector<double> centroid(d, 0.0);
    for (std::size_t i : order) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < d; ++k) centroid[k] += simplex[i][k] / static_cast<double>(d);
    }
    auto along = [&](double t) {
      std::vector<double> v(d);
      for (std::size_t k = 0; k < d; ++k) v[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
      return clampv(v);
    };
    auto reflected = along(-1.0);
    const double fr = eval(reflected);
    if (fr > vals[best]) {
      auto expanded = along(-2.0);
      const double fe = eval(expanded);
      if (fe > fr) {
        simplex[worst] = expanded;
        vals[worst] = fe;
      } else {
        simplex[worst] = reflected;
        vals[worst] = fr;
      }
    } else if (fr > vals[second_worst]) {
      simplex[worst] = reflected;
      vals[worst] = fr;
    } else {
      auto contracted = along(0.5);
      const double fc = eval(contracted);
      if (fc > vals[worst]) {
        simplex[worst] = contracted;
        vals[worst] = fc;
      } else {
        for (std::size_t i = 0; i < simplex.size(); ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < d; ++k) simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
          vals[i] = eval(simplex[i]);
        }
      }
    }
  }
  const auto it = std::max_element(vals.begin(), vals.end());
  return {simplex[static_cast<std::size_t>(it - vals.begin())], *it};
}

}  // namespace

double matern52(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelParams& kernel) {
  return kernel.signal_variance * matern52_scaled(scaled_distance(a.transpose(), b.transpose(), kernel.length_scales));
}

Prediction Surrogate::predict(const std::vector<double>& x) const {
  if (x.size() != dim()) throw InvalidArgument("prediction point has the wrong dimension");
  const Eigen::Map<const Eigen::RowVectorXd> xr(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::VectorXd ks(inputs_.rows());
  for (Eigen::Index i = 0; i < inputs_.rows(); ++i) {
    ks(i) = kernel_.signal_variance * matern52_scaled(scaled_distance(xr, inputs_.row(i), kernel_.length_scales));
  }
  const double mean = ks.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(ks);
  const double var = std::max(0.0, kernel_.signal_variance - v.squaredNorm());
  return {y_mean_ + y_scale_ * mean, y_scale_ * y_scale_ * var};
}

Surrogate gp_fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& outcomes,
                 const GpFitOptions& options) {
  if (inputs.empty()) throw InvalidArgument("gp_fit needs at least one observation");
  if (inputs.size() != outcomes.size()) throw InvalidArgument("gp_fit: inputs and outcomes differ in length");
  const auto n = static_cast<Eigen::Index>(inputs.size());
  const auto d = static_cast<Eigen::Index>(inputs.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(inputs[static_cast<std::size_t>(i)].size()) != d) {
      throw InvalidArgument("gp_fit: inconsistent input dimension");
    }
    for (Eigen::Index k = 0; k < d; ++k) x(i, k) = inputs[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }

  Surrogate s;
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(outcomes.data(), n);
  s.y_mean_ = y.mean();
  const double var = (y.array() - s.y_mean_).square().mean();
  s.y_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
  y = (y.array() - s.y_mean_) / s.y_scale_;

  KernelParams kernel = options.kernel;
  if (kernel.length_scales.empty()) kernel.length_scales.assign(static_cast<std::size_t>(d), options.initial_length_scale);
  if (kernel.length_scales.size() != static_cast<std::size_t>(d)) {
    throw InvalidArgument("gp_fit: length_scales must match the input dimension");
  }

  if (options.optimize_length_scales && n > 1) {
    const double lo = std::log(options.min_length_scale);
    const double hi = std::log(options.max_length_scale);
    auto objective = [&](const std::vector<double>& log_ls) {
      KernelParams k = kernel;
      for (std::size_t i = 0; i < log_ls.size(); ++i) k.length_scales[i] = std::exp(log_ls[i]);
      const auto f = factorize(x, k);
      if (!f) return -std::numeric_limits<double>::infinity();
      return log_marginal(*f, y, nullptr);
    };
    Rng rng(options.seed);
    std::vector<double> best_point;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(1, options.restarts); ++r) {
      std::vector<double> start(static_cast<std::size_t>(d));
      for (std::size_t i = 0; i < start.size(); ++i) {
        start[i] = r == 0 ? std::clamp(std::log(kernel.length_scales[i]), lo, hi) : rng.uniform(lo, hi);
      }
      auto [point, value] = nelder_mead_max(objective, start, lo, hi, 60 + 40 * static_cast<std::size_t>(d));
      if (value > best_value) {
        best_value = value;
        best_point = point;
      }
    }
    if (!best_point.empty()) {
      for (std::size_t i = 0; i < best_point.size(); ++i) kernel.length_scales[i] = std::exp(best_point[i]);
    }
  }

  auto f = factorize(x, kernel);
  if (!f) throw NumericalError("GP kernel matrix is not positive definite after jitter 1e-6");
  s.kernel_ = kernel;
  s.inputs_ = std::move(x);
  s.jitter_ = f->jitter;
  s.lml_ = log_marginal(*f, y, &s.alpha_);
  s.llt_ = std::move(f->llt);
  return s;
}

}  // namespace faultdx::bayesopt
