#include "mdlm/optimizer.hpp"

#include "mdlm/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace mdlm {

double scheduled_lr(const OptimizerSettings& s, std::size_t step) {
    if (!s.cosine || s.total_steps == 0) {
        return s.lr;
    }
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(s.total_steps));
    return s.min_lr + 0.5 * (s.lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

StepStats AdamW::step(std::span<Tensor* const> params, std::string_view loss_label) {
    double sq = 0.0;
    for (const Tensor* p : params) {
        if (!p->has_grad()) {
            continue;
        }
        for (double g : p->grad()) {
            if (!std::isfinite(g)) {
                throw NonFiniteGradientError("non-finite gradient produced by '" + std::string(loss_label) +
                                             "' at optimizer step " + std::to_string(t_));
            }
            sq += g * g;
        }
    }
    StepStats stats;
    stats.grad_norm = std::sqrt(sq);
    if (settings_.clip_norm > 0.0 && stats.grad_norm > settings_.clip_norm) {
        stats.clip_scale = settings_.clip_norm / stats.grad_norm;
    }
    stats.lr = scheduled_lr(settings_, t_);

    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw ContractError("AdamW: parameter list changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        auto values = p.values();
        auto& m = m_[k];
        auto& v = v_[k];
        if (m.size() != values.size()) {
            throw ContractError("AdamW: parameter shape changed between steps");
        }
        const bool has = p.has_grad();
        std::span<const double> grad = has ? p.grad() : std::span<const double>{};
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = has ? grad[i] * stats.clip_scale : 0.0;
            m[i] = settings_.beta1 * m[i] + (1.0 - settings_.beta1) * g;
            v[i] = settings_.beta2 * v[i] + (1.0 - settings_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            values[i] -= stats.lr * settings_.weight_decay * values[i];
            values[i] -= stats.lr * mhat / (std::sqrt(vhat) + settings_.eps);
        }
    }
    return stats;
}

}  // namespace mdlm
