#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mdlm {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;
// Probability vector over the vocabulary at one position.
using VocabDistribution = std::vector<double>;

// Row-major [rows x vocab] matrix of log-probabilities.
struct LogProbMatrix {
    std::size_t rows = 0;
    std::size_t vocab = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t r) const { return {values.data() + r * vocab, vocab}; }
    double at(std::size_t r, std::size_t v) const { return values[r * vocab + v]; }
    VocabDistribution probs(std::size_t r) const;
};

struct ForwardOptions {
    // Number of leading prompt tokens in the sequence.
    std::size_t prompt_len = 0;
    // Ablation: no position may attend to a prompt key, which makes
    // response predictions independent of the prompt.
    bool block_prompt_keys = false;
};

// Anything that maps a (partially masked) sequence to per-position
// log-probabilities. Evaluation and sampling work against this interface so
// closed-form oracle models can stand in for the transformer in tests.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual std::size_t vocab_size() const = 0;
    virtual TokenId mask_id() const = 0;
    virtual TokenId pad_id() const = 0;
    virtual LogProbMatrix predict(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const = 0;
};

// A prompt-response pair (x, y).
struct QAPair {
    TokenSequence prompt;
    TokenSequence response;
};

// prompt ++ response as one model input.
TokenSequence join(std::span<const TokenId> prompt, std::span<const TokenId> response);

}  // namespace mdlm
