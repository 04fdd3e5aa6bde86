#pragma once

#include "mdlm/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <span>

namespace mdlm {

// Builds a scalar loss in `g`. Must obtain parameters through g.parameter().
using LossBuilder = std::function<Var(Graph& g)>;

struct GradCheckOptions {
    double h = 1e-5;
    // 0 checks every coordinate; otherwise a seeded random subset per tensor.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
    // Coordinates where both gradients are below this magnitude count as
    // agreeing; finite differences cannot resolve exact zeros to 1e-4.
    double abs_floor = 0.0;
};

struct GradCheckResult {
    // max |analytic - central| / (|analytic| + |central| + 1e-12)
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients of `f` against central differences.
// Gradients on `params` are reset before and after the check.
GradCheckResult grad_check(const LossBuilder& f, std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

}  // namespace mdlm
