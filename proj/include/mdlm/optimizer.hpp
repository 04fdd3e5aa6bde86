#pragma once

#include "mdlm/tensor.hpp"

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace mdlm {

struct OptimizerSettings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    // Global-norm clipping threshold; <= 0 disables clipping.
    double clip_norm = 1.0;
    // Cosine annealing from lr to min_lr over total_steps.
    bool cosine = true;
    std::size_t total_steps = 0;
    double min_lr = 0.0;
};

struct StepStats {
    double grad_norm = 0.0;  // before clipping
    double clip_scale = 1.0;
    double lr = 0.0;
};

// Learning rate at optimizer step `step` (0-based).
double scheduled_lr(const OptimizerSettings& s, std::size_t step);

// AdamW with decoupled weight decay, global-norm clipping and a cosine
// schedule. Moment buffers are keyed by position in the parameter list, so
// every call must pass the same tensors in the same order.
class AdamW {
public:
    explicit AdamW(OptimizerSettings settings) : settings_(settings) {}

    // Applies one update from the gradients stored on `params` (a tensor
    // without a gradient counts as zero). Throws NonFiniteGradientError,
    // naming `loss_label`, if any gradient is NaN/Inf; parameters are left
    // untouched in that case. Does not reset gradients.
    StepStats step(std::span<Tensor* const> params, std::string_view loss_label = "loss");

    std::size_t steps_taken() const { return t_; }
    const OptimizerSettings& settings() const { return settings_; }

private:
    OptimizerSettings settings_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace mdlm
