#include "banforge/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <type_traits>

#include "banforge/rng.hpp"

namespace banforge {

namespace {

double eval_loss(const LossFn& loss_fn, const ParameterSet& params) {
    Graph g;
    Var root = loss_fn(g, params);
    const Tensor& v = root.value();
    if (v.numel() != 1) throw ArgumentError("finite_diff_check: loss_fn must return a scalar");
    return static_cast<double>(v[0]);
}

} // namespace

double finite_diff_check(const LossFn& loss_fn, const ParameterSet& params, const FiniteDiffOptions& opts) {
    static_assert(sizeof(real) == 8 || sizeof(real) == 4);
    if constexpr (!std::is_same_v<real, double>) {
        throw NumericError("finite_diff_check requires the 64-bit build");
    }
    if (opts.epsilon < 1e-7 || opts.epsilon > 1e-3) {
        throw ArgumentError("finite_diff_check: epsilon must lie in [1e-7, 1e-3]");
    }

    ParameterSet grads;
    {
        Graph g;
        Var root = loss_fn(g, params);
        if (root.value().numel() != 1) throw ArgumentError("finite_diff_check: loss_fn must return a scalar");
        grads = g.backward(root);
    }
    const double f0 = eval_loss(loss_fn, params);
    const double eps = opts.epsilon;
    const double kink_threshold = 10.0 * std::pow(eps, 1.5);

    double max_rel = 0.0;
    ParameterSet probe = params;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::string& name = params.name(pi);
        if (!grads.has(name)) continue;
        const Tensor& base = params.value(pi);
        const Tensor& analytic = grads.at(name);

        std::set<std::size_t> coords;
        if (base.numel() <= opts.max_coords_per_param) {
            for (std::size_t i = 0; i < base.numel(); ++i) coords.insert(i);
        } else {
            Rng rng = Rng::keyed(opts.seed, {0x66646321ULL, pi});
            while (coords.size() < opts.max_coords_per_param) {
                coords.insert(static_cast<std::size_t>(rng.below(base.numel())));
            }
        }

        for (std::size_t i : coords) {
            Tensor& slot = probe.at(name);
            const real saved = slot[i];
            slot[i] = saved + static_cast<real>(eps);
            const double f_plus = eval_loss(loss_fn, probe);
            slot[i] = saved - static_cast<real>(eps);
            const double f_minus = eval_loss(loss_fn, probe);
            slot[i] = saved;

            if (std::abs(f_plus + f_minus - 2.0 * f0) > kink_threshold) continue;

            const double central = (f_plus - f_minus) / (2.0 * eps);
            const double a = static_cast<double>(analytic[i]);
            const double rel = std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

double finite_diff_check(const LossFn& loss_fn, const ParameterSet& params, double epsilon) {
    FiniteDiffOptions opts;
    opts.epsilon = epsilon;
    return finite_diff_check(loss_fn, params, opts);
}

} // namespace banforge
