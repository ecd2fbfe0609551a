#include "faultdx/bayesopt/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "faultdx/rng.hpp"

namespace faultdx::bayesopt {

namespace {

constexpr double kMinSigma = 1e-12;

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

double expected_improvement(double mean, double sigma, double incumbent) {
  if (!(sigma > kMinSigma)) return 0.0;
  const double gap = mean - incumbent;
  const double z = gap / sigma;
  return std::max(0.0, gap * normal_cdf(z) + sigma * normal_pdf(z));
}

double expected_improvement(const Surrogate& surrogate, const std::vector<double>& x, double incumbent) {
  const auto p = surrogate.predict(x);
  if (p.variance <= surrogate.noise_floor()) return 0.0;
  return expected_improvement(p.mean, std::sqrt(p.variance), incumbent);
}

Config propose_next(const SearchSpace& space, const Surrogate& surrogate, double incumbent,
                    const std::vector<Config>& taken, std::uint64_t seed, const ProposalOptions& options) {
  Rng rng(seed);
  std::vector<std::vector<double>> candidates;
  candidates.reserve(options.n_random_candidates + taken.size());
  const auto& dims = space.dims();
  auto random_point = [&] {
    std::vector<double> u(space.encoded_size(), 0.0);
    std::size_t pos = 0;
    for (const auto& d : dims) {
      if (d.kind == DimKind::categorical) {
        u[pos + rng.below(d.options.size())] = 1.0;
        pos += d.options.size();
      } else {
        u[pos++] = rng.uniform();
      }
    }
    return u;
  };
  for (std::size_t i = 0; i < options.n_random_candidates; ++i) candidates.push_back(random_point());
  for (const auto& t : taken) {
    auto u = space.to_unit(t);
    std::size_t pos = 0;
    for (const auto& d : dims) {
      if (d.kind == DimKind::categorical) {
        pos += d.options.size();
        continue;
      }
      u[pos] = std::clamp(u[pos] + rng.normal(0.0, options.perturbation_sigma), 0.0, 1.0);
      ++pos;
    }
    candidates.push_back(std::move(u));
  }

  std::optional<Config> best;
  double best_ei = -1.0;
  for (const auto& u : candidates) {
    Config c = space.from_unit(u);
    if (std::find(taken.begin(), taken.end(), c) != taken.end()) continue;
    // Score the decoded point so integer rounding is reflected in the EI.
    const double ei = expected_improvement(surrogate, space.to_unit(c), incumbent);
    if (ei > best_ei) {
      best_ei = ei;
      best = std::move(c);
    }
  }
  if (best) return *best;
  // Every candidate collided with a taken config: fall back to fresh draws.
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Config c = space.from_unit(random_point());
    if (std::find(taken.begin(), taken.end(), c) == taken.end()) return c;
  }
  return space.from_unit(random_point());
}

}  // namespace faultdx::bayesopt
