#pragma once

#include "mdlm/model.hpp"
#include "mdlm/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdlm::testing {

// Small enough for exhaustive finite differences, large enough to exercise
// every code path (two layers, two heads).
inline ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig c;
    c.vocab_size = 12;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_len = 12;
    c.seed = seed;
    c.init_std = 0.3;
    return c;
}

inline std::vector<double> random_values(std::size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = scale * rng.normal();
    }
    return v;
}

inline Tensor& param(MaskPredictor& m, const std::string& name) {
    for (auto& [n, t] : m.named_parameters()) {
        if (n == name) return *t;
    }
    throw std::runtime_error("no parameter " + name);
}

// Zero output projection: every position predicts the uniform distribution.
inline MaskPredictor uniform_model(ModelConfig c) {
    MaskPredictor m = MaskPredictor::init(c);
    for (double& v : param(m, "head.w").values()) v = 0.0;
    for (double& v : param(m, "head.b").values()) v = 0.0;
    return m;
}

inline double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace mdlm::testing
