#include "mdlm/masking.hpp"

#include "mdlm/errors.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace mdlm {

std::vector<std::size_t> MaskedState::sequence_mask_positions() const {
    std::vector<std::size_t> out(mask_positions);
    for (auto& p : out) {
        p += prompt.size();
    }
    return out;
}

bool MaskedState::consistent(TokenId mask_id) const {
    std::vector<std::size_t> actual;
    for (std::size_t i = 0; i < response.size(); ++i) {
        if (response[i] == mask_id) {
            actual.push_back(i);
        }
    }
    return actual == mask_positions && noise_level >= 0.0 && noise_level <= 1.0;
}

MaskedState corrupt(const TokenSequence& prompt, const TokenSequence& response, double t, TokenId mask_id, Rng& rng) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw DomainError("corrupt: noise level must lie in [0,1], got " + std::to_string(t));
    }
    MaskedState s{prompt, response, {}, t};
    for (std::size_t i = 0; i < response.size(); ++i) {
        // u < t is never true at t = 0 and always true at t = 1.
        if (rng.uniform() < t) {
            s.response[i] = mask_id;
            s.mask_positions.push_back(i);
        }
    }
    return s;
}

MaskedState corrupt_fixed_count(const TokenSequence& prompt, const TokenSequence& response, std::size_t count,
                                TokenId mask_id, Rng& rng) {
    const std::size_t n = response.size();
    if (count < 1 || count > n) {
        throw DomainError("corrupt_fixed_count: count must lie in [1, " + std::to_string(n) + "], got " +
                          std::to_string(count));
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `count` entries are a uniform subset.
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(idx[i], idx[i + rng.below(n - i)]);
    }
    idx.resize(count);
    MaskedState s = mask_positions(prompt, response, std::move(idx), mask_id);
    s.noise_level = static_cast<double>(count) / static_cast<double>(n);
    return s;
}

MaskedState mask_positions(const TokenSequence& prompt, const TokenSequence& response,
                           std::vector<std::size_t> positions, TokenId mask_id) {
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    MaskedState s{prompt, response, {}, 0.0};
    for (auto p : positions) {
        if (p >= response.size()) {
            throw DomainError("mask_positions: position out of range");
        }
        s.response[p] = mask_id;
    }
    s.mask_positions = std::move(positions);
    s.noise_level =
        response.empty() ? 0.0 : static_cast<double>(s.mask_positions.size()) / static_cast<double>(response.size());
    return s;
}

MaskedState mask_prompt(const MaskedState& state, TokenId mask_id) {
    MaskedState s = state;
    std::fill(s.prompt.begin(), s.prompt.end(), mask_id);
    return s;
}

MaskedState sample_training_state(const TokenSequence& prompt, const TokenSequence& response, TokenId mask_id,
                                  Rng& rng) {
    MaskedState s = corrupt(prompt, response, rng.uniform(), mask_id, rng);
    if (s.mask_positions.empty()) {
        s = corrupt(prompt, response, rng.uniform(), mask_id, rng);
    }
    return s;
}

}  // namespace mdlm
