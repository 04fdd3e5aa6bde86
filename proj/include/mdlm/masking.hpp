#pragma once

#include "mdlm/denoiser.hpp"
#include "mdlm/rng.hpp"

#include <cstddef>
#include <vector>

namespace mdlm {

// A prompt plus a partially masked response (the masked denoising state).
struct MaskedState {
    TokenSequence prompt;
    TokenSequence response;
    // Sorted response indices holding the MASK id.
    std::vector<std::size_t> mask_positions;
    double noise_level = 0.0;

    TokenSequence tokens() const { return join(prompt, response); }
    // Mask positions shifted into full-sequence coordinates.
    std::vector<std::size_t> sequence_mask_positions() const;
    bool consistent(TokenId mask_id) const;
};

// Bernoulli(t) masking of every response token; the prompt is untouched.
MaskedState corrupt(const TokenSequence& prompt, const TokenSequence& response, double t, TokenId mask_id, Rng& rng);

// Exactly `count` positions masked, uniform over all subsets of that size.
// noise_level is set to count / n.
MaskedState corrupt_fixed_count(const TokenSequence& prompt, const TokenSequence& response, std::size_t count,
                                TokenId mask_id, Rng& rng);

// Masks an explicit set of response positions (used by replay and tests).
MaskedState mask_positions(const TokenSequence& prompt, const TokenSequence& response,
                           std::vector<std::size_t> positions, TokenId mask_id);

// Null prompt: every prompt token replaced by MASK, length preserved.
MaskedState mask_prompt(const MaskedState& state, TokenId mask_id);

// Draws t ~ U[0,1) and corrupts; if no position is masked, draws once more.
// The result may still have an empty mask set, in which case callers skip.
MaskedState sample_training_state(const TokenSequence& prompt, const TokenSequence& response, TokenId mask_id,
                                  Rng& rng);

}  // namespace mdlm
