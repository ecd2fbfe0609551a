#pragma once

#include <cstdint>
#include <vector>

#include "faultdx/bayesopt/gaussian_process.hpp"
#include "faultdx/bayesopt/search_space.hpp"

namespace faultdx::bayesopt {

/// Closed-form expected improvement for maximization. Zero when sigma is 0.
double expected_improvement(double mean, double sigma, double incumbent);

double expected_improvement(const Surrogate& surrogate, const std::vector<double>& x, double incumbent);

struct ProposalOptions {
  std::size_t n_random_candidates = 1024;
  double perturbation_sigma = 0.01;
};

/// Maximizes EI over seeded uniform candidates plus every already-sampled
/// point perturbed by N(0, sigma^2). `taken` lists configs that are done or in
/// flight; candidates decoding to any of them are skipped. Ties resolve to
/// the lowest candidate index.
Config propose_next(const SearchSpace& space, const Surrogate& surrogate, double incumbent,
                    const std::vector<Config>& taken, std::uint64_t seed,
                    const ProposalOptions& options = {});

}  // namespace faultdx::bayesopt
