#pragma once

#include <functional>

#include "banforge/graph.hpp"
#include "banforge/param_set.hpp"

namespace banforge {

// Builds the scalar loss on the given graph, creating one named leaf per
// entry of the parameter set it uses (via Graph::param with matching names).
// Called repeatedly with perturbed copies of the parameters.
using LossFn = std::function<Var(Graph&, const ParameterSet&)>;

struct FiniteDiffOptions {
    double epsilon = 1e-5;             // must lie in [1e-7, 1e-3]
    std::size_t max_coords_per_param = 12;
    std::uint64_t seed = 0;
};

// Central-difference gradient check: compares the analytic gradient from
// backward() against (f(x+eps) - f(x-eps)) / 2 eps on sampled coordinates and
// returns the max of |analytic - central| / max(|analytic|, |central|, 1e-8).
//
// Coordinates where the loss is locally non-smooth (a ReLU kink inside the
// probe interval) are excluded by a second-difference screen:
// |f(x+eps) + f(x-eps) - 2 f(x)| > 10 * eps^1.5 marks the coordinate as
// straddling a kink. A C^2 loss contributes O(eps^2) to that quantity, a
// kink crossing O(eps), so the screen separates them without consulting the
// analytic gradient.
double finite_diff_check(const LossFn& loss_fn, const ParameterSet& params, const FiniteDiffOptions& opts = {});

double finite_diff_check(const LossFn& loss_fn, const ParameterSet& params, double epsilon);

} // namespace banforge
