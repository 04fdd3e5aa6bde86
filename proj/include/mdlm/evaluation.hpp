#pragma once

#include "mdlm/denoiser.hpp"
#include "mdlm/model.hpp"
#include "mdlm/rng.hpp"
#include "mdlm/sampler.hpp"

#include "json.hpp"

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mdlm {

// LCS F1 over token ids. Both empty -> 1, exactly one empty -> 0.
double rouge_l(std::span<const TokenId> hypothesis, std::span<const TokenId> reference);

// ---- Monte-Carlo reconstruction likelihood ------------------------------------

struct ReconstructionEstimate {
    double mean_nll = 0.0;
    double std_error = 0.0;
    // Per-draw NLL: mean over the masked subset of -log p(y_i | x, y_masked).
    std::vector<double> samples;
};

// N draws of l ~ Unif{1..n} and a uniform size-l subset of response positions.
ReconstructionEstimate reconstruction_nll(const Denoiser& model, const QAPair& pair, std::size_t num_samples,
                                          Rng& rng);

inline constexpr std::size_t kAnswerProbSamples = 128;
inline constexpr std::size_t kPseudoPplSamples = 256;

// exp(-mean reconstruction NLL), in (0, 1].
double answer_probability(const Denoiser& model, const QAPair& pair, std::size_t num_samples, Rng& rng);
// exp(mean reconstruction NLL), >= 1.
double pseudo_ppl(const Denoiser& model, const QAPair& pair, std::size_t num_samples, Rng& rng);

// ---- token-level conditional vs anchor KL -------------------------------------

enum class TokenRole { kInContext, kStructural, kStoredKnowledge };

std::string_view to_string(TokenRole role);

// InContext if the token occurs in the prompt, else Structural if it is in
// the lexicon, else StoredKnowledge.
std::vector<TokenRole> tag_token_roles(const QAPair& pair, const std::set<TokenId>& structural_lexicon);

struct TrajectoryOptions {
    // Step count (0: one position per step) and prompt-key blocking.
    SamplerOptions sampler;
    // Commit the reference response's tokens (in the model's confidence
    // order) instead of the model's own argmax, so every run scores the
    // same token sequence.
    bool teacher_forced = true;
};

struct KlTrajectory {
    // kl[step][position]; NaN where the position was already committed.
    std::vector<std::vector<double>> kl;
    std::vector<std::size_t> commit_step;
    // KL at each position's commitment step.
    std::vector<double> at_commit;
    TokenSequence response;
};

// Replays a greedy denoising schedule driven by `conditional` on (x, y_t) and
// records KL(p_cond(.|x, y_t) || p_anchor(.|m, y_t)) for every still-masked
// position at every step.
KlTrajectory token_kl_trajectory(const Denoiser& conditional, const Denoiser& anchor, const QAPair& pair,
                                 const TrajectoryOptions& options = {});

struct CategoryStats {
    std::optional<double> mean;
    std::size_t count = 0;
};

// Mean at-commit KL per role; roles with no tokens are left empty.
std::map<TokenRole, CategoryStats> category_means(std::span<const KlTrajectory> trajectories,
                                                  std::span<const std::vector<TokenRole>> roles);

struct CategoryChange {
    CategoryStats before;
    CategoryStats after;
    // (after - before) / before; empty if either side is empty or before == 0.
    std::optional<double> relative_change;
};

std::map<TokenRole, CategoryChange> category_kl_aggregate(std::span<const KlTrajectory> before,
                                                          std::span<const KlTrajectory> after,
                                                          std::span<const std::vector<TokenRole>> roles);

// CSV rows: example,step,position,kl,role (committed positions omitted).
void write_trajectory_csv(std::ostream& out, std::span<const KlTrajectory> trajectories,
                          std::span<const std::vector<TokenRole>> roles);

// ---- convergence diagnostic -----------------------------------------------------

struct ConvergencePoint {
    double kl_to_base_conditional = 0.0;
    double kl_to_base_unconditional = 0.0;
    double kl_to_uniform = 0.0;
};

// Mean over sampled (t, y_t) and masked positions of KL from the trained
// conditional to the base conditional, the base null-prompt prediction and the
// uniform distribution. The same seed reproduces the same states, so points
// from different checkpoints are directly comparable.
ConvergencePoint convergence_point(const MaskPredictor& trained, const MaskPredictor& base,
                                   std::span<const QAPair> forget, std::uint64_t seed,
                                   std::size_t draws_per_example = 4);

std::vector<ConvergencePoint> convergence_diagnostic(std::span<const MaskPredictor> checkpoints,
                                                     const MaskPredictor& base, std::span<const QAPair> forget,
                                                     std::uint64_t seed, std::size_t draws_per_example = 4);

// ---- split evaluation ------------------------------------------------------------

struct EvalOptions {
    std::size_t answer_prob_samples = kAnswerProbSamples;
    std::size_t ppl_samples = kPseudoPplSamples;
    std::uint64_t seed = 0;
    SamplerOptions sampler;
};

struct ExampleMetrics {
    std::size_t index = 0;
    double rouge_l = 0.0;
    double answer_prob = 0.0;
    double pseudo_ppl = 0.0;
    TokenSequence generated;
};

struct MetricSummary {
    double mean = 0.0;
    double median = 0.0;
};

MetricSummary summarize(std::vector<double> values);

struct EvalReport {
    std::string split;
    std::vector<ExampleMetrics> examples;
    EvalOptions options;

    MetricSummary rouge_l() const;
    MetricSummary answer_prob() const;
    MetricSummary pseudo_ppl() const;
    nlohmann::json to_json() const;
};

// Greedy generation at the reference length, RougeL against the reference,
// answer probability and pseudo-PPL. Each example draws from its own stream
// split off a master generator seeded with options.seed.
EvalReport evaluate_split(const Denoiser& model, std::string split, std::span<const QAPair> pairs,
                          const EvalOptions& options);

}  // namespace mdlm
