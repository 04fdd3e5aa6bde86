#pragma once

#include "mdlm/autodiff.hpp"
#include "mdlm/masking.hpp"
#include "mdlm/model.hpp"
#include "mdlm/optimizer.hpp"
#include "mdlm/rng.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mdlm {

enum class Method { kMdu, kGa, kGd, kNpo, kSimNpo, kWga, kDpo };

std::string_view to_string(Method m);
// Accepts mdu, ga, gd, npo, simnpo, wga, dpo. Throws ConfigError otherwise.
Method parse_method(std::string_view name);

struct UnlearnConfig {
    double tau = 1.0;
    double lambda = 1.0;
    // NPO / SimNPO temperature.
    double beta = 0.2;
    double dpo_beta = 0.1;
    double gamma = 1.0;
    double delta = 0.0;
    double lr = 1e-3;
    std::size_t steps = 0;
    double clip_norm = 1.0;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double forget_term = 0.0;
    double retain_term = 0.0;
    std::vector<double> per_position_kl;
    bool skipped = false;
};

// ---- distributions ---------------------------------------------------------

// Forward KL(p || q). Throws DivergenceUndefinedError where q == 0 < p.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double entropy(std::span<const double> p);

// p^tau / Z. tau == 0 gives the exact uniform distribution, tau == 1 the input.
VocabDistribution anchor_tilt(std::span<const double> p_u, double tau);
// Same in log space, for log-probability rows.
std::vector<double> anchor_tilt_log(std::span<const double> log_p_u, double tau);

// p_c^(1-tau) p_u^tau, renormalised.
VocabDistribution tilted_distribution(std::span<const double> p_c, std::span<const double> p_u, double tau);

// ---- masked-token ELBO -------------------------------------------------------
// Losses return std::nullopt when the state has no masked position (skip).

// -(1/t) sum_{i in M_t} log p(y_i | x, y_t). `clean` is the uncorrupted response.
std::optional<Var> sft_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean, const MaskedState& state);
std::optional<Var> sft_loss(Graph& g, const MaskPredictor& model, const TokenSequence& clean,
                            const MaskedState& state);
std::optional<double> sft_loss_value(const Denoiser& model, const TokenSequence& clean, const MaskedState& state);
// The same quantity written as (1/t) sum KL(onehot(y_i) || p_i).
std::optional<double> sft_loss_kl_form(const Denoiser& model, const TokenSequence& clean, const MaskedState& state);

// Masked-token loss over a whole sequence; `state` must have an empty prompt.
std::optional<Var> pretrain_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean,
                                 const MaskedState& state);

// ---- unlearning losses -------------------------------------------------------

struct ForgetTerm {
    Var loss;
    std::vector<double> per_position_kl;
};

// Mean over M_t of KL(p_theta(.|x, y_t) || tilt(p_theta0(.|m, y_t), tau)).
std::optional<ForgetTerm> mdu_forget_loss(Graph& g, MaskPredictor& model, const MaskPredictor& frozen,
                                          const MaskedState& state, double tau);

std::optional<Var> ga_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean, const MaskedState& state);

std::optional<Var> gd_loss(Graph& g, MaskPredictor& model, const TokenSequence& forget_clean,
                           const MaskedState& forget_state, const TokenSequence& retain_clean,
                           const MaskedState& retain_state, double lambda);

std::optional<Var> npo_loss(Graph& g, MaskPredictor& model, const MaskPredictor& reference,
                            const TokenSequence& clean, const MaskedState& state, double beta);

std::optional<Var> simnpo_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean,
                               const MaskedState& state, double beta, double delta);

// p_i^gamma for each masked position, from the current model, as plain numbers.
std::vector<double> wga_weights(const Denoiser& model, const TokenSequence& clean, const MaskedState& state,
                                double gamma);
// sum_{i in M_t} w_i log p(y_i | x, y_t). `weights` defaults to wga_weights on
// the current parameters; they are constants for the gradient.
std::optional<Var> wga_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean, const MaskedState& state,
                            double gamma, std::optional<std::span<const double>> weights = std::nullopt);

// -log sigmoid(beta (r(y+) - r(y-))) with r(y) = -L_sft(theta) + L_sft(ref).
std::optional<Var> dpo_loss(Graph& g, MaskPredictor& model, const MaskPredictor& reference,
                            const TokenSequence& chosen_clean, const MaskedState& chosen_state,
                            const TokenSequence& rejected_clean, const MaskedState& rejected_state, double beta);

// Scalar forms of the preference losses given per-pair SFT losses.
double npo_value(double sft, double sft_ref, double beta);
double simnpo_value(double sft, std::size_t response_len, double beta, double delta);
// `margin` is r(y+) - r(y-).
double dpo_value(double margin, double beta);
// -sum_i p_i^gamma (-log p_i) over the true-token probabilities p_i.
double wga_value(std::span<const double> probs, double gamma);

// ---- one update --------------------------------------------------------------

// Everything one optimizer step needs for a single forget example.
struct UnlearnExample {
    QAPair forget;
    std::optional<QAPair> retain;
    // DPO only: the substitute answer preferred over forget.response.
    std::optional<TokenSequence> chosen;
};

// Forward + backward of the chosen objective for one example (gradients,
// scaled by `weight`, accumulate on `model`). Draws the forget state, and a
// fresh retain state when lambda > 0 and a retain pair is present. The
// returned breakdown is unscaled.
LossBreakdown accumulate_unlearning_gradients(Method method, MaskPredictor& model, const MaskPredictor& frozen,
                                              const UnlearnExample& example, const UnlearnConfig& config,
                                              Rng& rng, double weight = 1.0);

// One MDU step: sample, forget term against the tilted anchor, optional
// retain term, single optimizer update on `model`.
LossBreakdown mdu_step(MaskPredictor& model, const MaskPredictor& frozen, const QAPair& forget,
                       const std::optional<QAPair>& retain, const UnlearnConfig& config, Rng& rng, AdamW& optimizer);

}  // namespace mdlm
