#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace faultdx::bayesopt {

/// Matern-5/2 kernel with ARD length-scales.
struct KernelParams {
  double signal_variance = 1.0;
  std::vector<double> length_scales;  // empty: filled with `initial_length_scale`
  double noise_variance = 1e-6;
};

struct GpFitOptions {
  KernelParams kernel;
  double initial_length_scale = 0.3;
  /// Maximize the log marginal likelihood over the length-scales.
  bool optimize_length_scales = true;
  double min_length_scale = 1e-2;
  double max_length_scale = 10.0;
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
};

double matern52(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelParams& kernel);

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// GP posterior over standardized outcomes with a cached Cholesky factor.
class Surrogate {
 public:
  const KernelParams& kernel() const noexcept { return kernel_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(inputs_.cols()); }
  double jitter() const noexcept { return jitter_; }
  double log_marginal_likelihood() const noexcept { return lml_; }

  /// Posterior variance of an observed point is below this level (noise plus
  /// jitter, in outcome units, with rounding slack).
  double noise_floor() const noexcept {
    return y_scale_ * y_scale_ * (kernel_.noise_variance + jitter_ + 64.0 * std::numeric_limits<double>::epsilon() * kernel_.signal_variance);
  }

  /// Posterior mean and variance in the original outcome units. The variance
  /// is floored at 0.
  Prediction predict(const std::vector<double>& x) const;

 private:
  friend Surrogate gp_fit(const std::vector<std::vector<double>>&, const std::vector<double>&,
                          const GpFitOptions&);

  KernelParams kernel_;
  Eigen::MatrixXd inputs_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double jitter_ = 0.0;
  double lml_ = 0.0;
};

/// Fits a GP to (inputs, outcomes). Outcomes are standardized internally;
/// constant outcomes are only centered. Throws NumericalError when the kernel
/// matrix stays indefinite after the maximum jitter of 1e-6.
Surrogate gp_fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& outcomes,
                 const GpFitOptions& options);

}  // namespace faultdx::bayesopt
