#include "mdlm/sampler.hpp"

#include "mdlm/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace mdlm {

std::vector<std::size_t> DenoisingTrace::commit_steps() const {
    std::vector<std::size_t> out(final_response.size(), std::numeric_limits<std::size_t>::max());
    for (const auto& step : steps) {
        for (std::size_t p : step.positions) {
            out[p] = step.index;
        }
    }
    return out;
}

namespace {

struct Candidate {
    std::size_t position;
    TokenId token;
    double confidence;
};

Candidate choose(std::span<const double> log_probs, std::size_t position, TokenId mask, TokenId pad,
                 double temperature, Rng& rng) {
    Candidate best{position, 0, -1.0};
    for (std::size_t v = 0; v < log_probs.size(); ++v) {
        if (v == mask || v == pad) {
            continue;
        }
        const double p = std::exp(log_probs[v]);
        if (p > best.confidence) {
            best.confidence = p;
            best.token = static_cast<TokenId>(v);
        }
    }
    if (temperature > 0.0) {
        std::vector<double> w(log_probs.size(), 0.0);
        double z = 0.0;
        const double top = std::log(best.confidence);
        for (std::size_t v = 0; v < w.size(); ++v) {
            if (v != mask && v != pad) {
                w[v] = std::exp((log_probs[v] - top) / temperature);
                z += w[v];
            }
        }
        double u = rng.uniform() * z;
        for (std::size_t v = 0; v < w.size(); ++v) {
            if (w[v] == 0.0) continue;
            best.token = static_cast<TokenId>(v);
            u -= w[v];
            if (u <= 0.0) break;
        }
    }
    return best;
}

}  // namespace

DenoisingTrace denoise(const Denoiser& model, const TokenSequence& prompt, const TokenSequence& response,
                       const SamplerOptions& options, Rng& rng) {
    if (response.empty()) {
        throw InputError("denoise: empty response");
    }
    if (options.temperature < 0.0 || !std::isfinite(options.temperature)) {
        throw DomainError("denoise: temperature must be finite and >= 0");
    }
    const TokenId mask = model.mask_id(), pad = model.pad_id();
    if (model.vocab_size() <= 2) {
        throw ConfigError("denoise: vocabulary has no ordinary tokens");
    }
    DenoisingTrace trace;
    trace.prompt = prompt;
    TokenSequence current = response;
    std::size_t remaining = std::count(current.begin(), current.end(), mask);
    const std::size_t total_steps = options.num_steps == 0 ? remaining : options.num_steps;
    const ForwardOptions fwd{.prompt_len = prompt.size(), .block_prompt_keys = options.block_prompt_keys};

    for (std::size_t k = 0; remaining > 0; ++k) {
        const std::size_t steps_left = total_steps > k ? total_steps - k : 1;
        const std::size_t commit = (remaining + steps_left - 1) / steps_left;

        const LogProbMatrix lp = model.predict(join(prompt, current), fwd);
        std::vector<Candidate> candidates;
        for (std::size_t i = 0; i < current.size(); ++i) {
            if (current[i] == mask) {
                candidates.push_back(choose(lp.row(prompt.size() + i), i, mask, pad, options.temperature, rng));
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) { return a.confidence > b.confidence; });

        DenoisingStep step;
        step.index = k;
        step.response = current;
        for (std::size_t c = 0; c < commit; ++c) {
            const Candidate& cand = candidates[c];
            current[cand.position] = cand.token;
            step.positions.push_back(cand.position);
            step.tokens.push_back(cand.token);
            step.confidences.push_back(cand.confidence);
        }
        remaining -= commit;
        trace.steps.push_back(std::move(step));
    }
    trace.final_response = std::move(current);
    return trace;
}

DenoisingTrace generate(const Denoiser& model, const TokenSequence& prompt, std::size_t n,
                        const SamplerOptions& options, Rng& rng) {
    if (n == 0) {
        throw InputError("generate: response length must be >= 1");
    }
    return denoise(model, prompt, TokenSequence(n, model.mask_id()), options, rng);
}

DenoisingTrace anchor_rollout(const Denoiser& model, const MaskedState& state, const SamplerOptions& options,
                              Rng& rng) {
    const MaskedState null_prompt = mask_prompt(state, model.mask_id());
    if (state.mask_positions.empty()) {
        DenoisingTrace trace;
        trace.prompt = null_prompt.prompt;
        trace.final_response = state.response;
        return trace;
    }
    return denoise(model, null_prompt.prompt, null_prompt.response, options, rng);
}

void write_trace(std::ostream& out, const DenoisingTrace& trace) {
    for (const auto& step : trace.steps) {
        nlohmann::json line = {{"step", step.index},
                               {"positions", step.positions},
                               {"tokens", step.tokens},
                               {"confidences", step.confidences}};
        out << line.dump() << '\n';
    }
}

}  // namespace mdlm
