#pragma once

#include "mdlm/denoiser.hpp"
#include "mdlm/masking.hpp"
#include "mdlm/rng.hpp"

#include <cstddef>
#include <iosfwd>
#include <vector>

namespace mdlm {

struct SamplerOptions {
    // Number of denoising steps; 0 means one step per masked position.
    std::size_t num_steps = 0;
    // 0 commits the argmax token; > 0 samples from p^(1/temperature).
    double temperature = 0.0;
    // Forwarded to the model (prompt_len is filled in by the sampler).
    bool block_prompt_keys = false;
};

struct DenoisingStep {
    std::size_t index = 0;
    // Response before this step's commitments.
    TokenSequence response;
    // Positions committed at this step, in commit order (highest confidence first).
    std::vector<std::size_t> positions;
    std::vector<TokenId> tokens;
    std::vector<double> confidences;
};

struct DenoisingTrace {
    TokenSequence prompt;
    std::vector<DenoisingStep> steps;
    TokenSequence final_response;

    // Step index at which each response position was committed; positions
    // that were never masked map to SIZE_MAX.
    std::vector<std::size_t> commit_steps() const;
};

// Iteratively fills every MASK in `response` while keeping other tokens fixed.
// Each step commits ceil(remaining / steps_left) positions ranked by the
// model's confidence (max probability over non-special tokens). MASK and PAD
// are never committed. Greedy decoding ignores `rng`.
DenoisingTrace denoise(const Denoiser& model, const TokenSequence& prompt, const TokenSequence& response,
                       const SamplerOptions& options, Rng& rng);

// Generation from the all-MASK response of length n.
DenoisingTrace generate(const Denoiser& model, const TokenSequence& prompt, std::size_t n,
                        const SamplerOptions& options, Rng& rng);

// Rollout with the prompt masked: fixed response tokens are held, masked
// ones are filled by iterative denoising.
DenoisingTrace anchor_rollout(const Denoiser& model, const MaskedState& state, const SamplerOptions& options,
                              Rng& rng);

// One JSON object per line: step, positions, tokens, confidences.
void write_trace(std::ostream& out, const DenoisingTrace& trace);

}  // namespace mdlm
