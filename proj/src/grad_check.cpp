#include "mdlm/grad_check.hpp"

#include "mdlm/errors.hpp"
#include "mdlm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mdlm {

namespace {

double evaluate(const LossBuilder& f) {
    Graph g(Graph::Mode::kInference);
    const double v = f(g).item();
    if (!std::isfinite(v)) {
        throw EvaluationError("grad_check: loss evaluated to a non-finite value");
    }
    return v;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& f, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
    if (!(options.h > 0.0)) {
        throw DomainError("grad_check: step h must be positive");
    }
    for (Tensor* p : params) {
        p->zero_grad();
    }
    {
        Graph g;
        Var loss = f(g);
        if (!std::isfinite(loss.item())) {
            throw EvaluationError("grad_check: loss evaluated to a non-finite value");
        }
        g.backward(loss);
    }

    GradCheckResult result;
    Rng rng(options.seed);
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        std::vector<double> analytic(p.size(), 0.0);
        if (p.has_grad()) {
            auto gr = p.grad();
            analytic.assign(gr.begin(), gr.end());
        }
        std::vector<std::size_t> coords(p.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
            for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            }
            coords.resize(options.max_coords_per_tensor);
        }
        for (std::size_t idx : coords) {
            const double saved = p[idx];
            p[idx] = saved + options.h;
            const double up = evaluate(f);
            p[idx] = saved - options.h;
            const double down = evaluate(f);
            p[idx] = saved;
            const double numeric = (up - down) / (2.0 * options.h);
            const double a = analytic[idx];
            double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
            if (std::max(std::abs(a), std::abs(numeric)) < options.abs_floor) {
                rel = 0.0;
            }
            ++result.coords_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_tensor = t;
                result.worst_index = idx;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    for (Tensor* p : params) {
        p->zero_grad();
    }
    return result;
}

}  // namespace mdlm
