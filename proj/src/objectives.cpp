#include "mdlm/objectives.hpp"

#include "mdlm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mdlm {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::kMdu: return "mdu";
        case Method::kGa: return "ga";
        case Method::kGd: return "gd";
        case Method::kNpo: return "npo";
        case Method::kSimNpo: return "simnpo";
        case Method::kWga: return "wga";
        case Method::kDpo: return "dpo";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    for (Method m : {Method::kMdu, Method::kGa, Method::kGd, Method::kNpo, Method::kSimNpo, Method::kWga,
                     Method::kDpo}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw ConfigError("unknown unlearning method '" + std::string(name) + "'");
}

void UnlearnConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("unlearn config: " + what); };
    if (!(tau >= 0.0 && tau <= 1.0)) fail("tau must lie in [0, 1]");
    if (!(lambda >= 0.0)) fail("lambda must be >= 0");
    if (!(beta > 0.0)) fail("beta must be > 0");
    if (!(dpo_beta > 0.0)) fail("dpo_beta must be > 0");
    if (!(gamma >= 0.0)) fail("gamma must be >= 0");
    if (!(delta >= 0.0)) fail("delta must be >= 0");
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
    if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
}

// ---- distributions ---------------------------------------------------------

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw DimensionError("kl_divergence: distributions differ in size");
    }
    double kl = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) {
        if (p[v] <= 0.0) {
            continue;
        }
        if (q[v] <= 0.0) {
            throw DivergenceUndefinedError("kl_divergence: q(" + std::to_string(v) + ") = 0 where p > 0");
        }
        kl += p[v] * (std::log(p[v]) - std::log(q[v]));
    }
    return std::max(kl, 0.0);
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) {
            h -= x * std::log(x);
        }
    }
    return h;
}

namespace {

void check_tau(double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw DomainError("temperature must lie in [0, 1]");
    }
}

std::vector<double> normalise_logs(std::vector<double> logs) {
    const double mx = *std::max_element(logs.begin(), logs.end());
    double z = 0.0;
    for (double l : logs) {
        z += std::exp(l - mx);
    }
    const double lz = mx + std::log(z);
    for (double& l : logs) {
        l -= lz;
    }
    return logs;
}

std::vector<double> to_logs(std::span<const double> p) {
    std::vector<double> out(p.size());
    std::transform(p.begin(), p.end(), out.begin(), [](double x) {
        return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
    });
    return out;
}

VocabDistribution to_probs(const std::vector<double>& logs) {
    VocabDistribution out(logs.size());
    std::transform(logs.begin(), logs.end(), out.begin(), [](double l) { return std::exp(l); });
    return out;
}

}  // namespace

std::vector<double> anchor_tilt_log(std::span<const double> log_p_u, double tau) {
    check_tau(tau);
    if (log_p_u.empty()) {
        throw DimensionError("anchor_tilt: empty distribution");
    }
    if (tau == 1.0) {
        return {log_p_u.begin(), log_p_u.end()};
    }
    if (tau == 0.0) {
        return std::vector<double>(log_p_u.size(), -std::log(static_cast<double>(log_p_u.size())));
    }
    std::vector<double> scaled(log_p_u.size());
    std::transform(log_p_u.begin(), log_p_u.end(), scaled.begin(), [tau](double l) { return tau * l; });
    return normalise_logs(std::move(scaled));
}

VocabDistribution anchor_tilt(std::span<const double> p_u, double tau) {
    check_tau(tau);
    if (tau == 1.0) {
        return {p_u.begin(), p_u.end()};
    }
    if (tau == 0.0) {
        return VocabDistribution(p_u.size(), 1.0 / static_cast<double>(p_u.size()));
    }
    return to_probs(anchor_tilt_log(to_logs(p_u), tau));
}

VocabDistribution tilted_distribution(std::span<const double> p_c, std::span<const double> p_u, double tau) {
    check_tau(tau);
    if (p_c.size() != p_u.size() || p_c.empty()) {
        throw DimensionError("tilted_distribution: distributions differ in size");
    }
    if (tau == 0.0) {
        return {p_c.begin(), p_c.end()};
    }
    if (tau == 1.0) {
        return {p_u.begin(), p_u.end()};
    }
    const auto lc = to_logs(p_c);
    const auto lu = to_logs(p_u);
    std::vector<double> mix(p_c.size());
    for (std::size_t v = 0; v < mix.size(); ++v) {
        mix[v] = (1.0 - tau) * lc[v] + tau * lu[v];
    }
    return to_probs(normalise_logs(std::move(mix)));
}

// ---- masked-token ELBO -------------------------------------------------------

namespace {

void check_state(const TokenSequence& clean, const MaskedState& state) {
    if (clean.size() != state.response.size()) {
        throw InputError("clean response length " + std::to_string(clean.size()) + " does not match state length " +
                         std::to_string(state.response.size()));
    }
    if (!state.mask_positions.empty() && !(state.noise_level > 0.0)) {
        throw ContractError("masked state with masked positions but noise level 0");
    }
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> out(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
}

std::vector<std::size_t> targets(const TokenSequence& clean, const MaskedState& state) {
    std::vector<std::size_t> out;
    out.reserve(state.mask_positions.size());
    for (std::size_t i : state.mask_positions) {
        out.push_back(clean[i]);
    }
    return out;
}

// Sum of log p(y_i) over masked positions, as a 1x1 node.
template <class Model>
Var masked_log_likelihood(Graph& g, Model& model, const TokenSequence& clean, const MaskedState& state) {
    const auto tokens = state.tokens();
    const auto positions = state.sequence_mask_positions();
    const Var lp = model.log_probs(g, tokens, positions, ForwardOptions{.prompt_len = state.prompt.size()});
    return sum(pick(lp, iota(positions.size()), targets(clean, state)));
}

template <class Model>
std::optional<Var> sft_impl(Graph& g, Model& model, const TokenSequence& clean, const MaskedState& state) {
    check_state(clean, state);
    if (state.mask_positions.empty()) {
        return std::nullopt;
    }
    return scale(masked_log_likelihood(g, model, clean, state), -1.0 / state.noise_level);
}

// Log-prob rows at the masked positions of `state`, from an inference pass.
LogProbMatrix masked_rows(const Denoiser& model, const MaskedState& state) {
    const auto tokens = state.tokens();
    const LogProbMatrix full = model.predict(tokens, ForwardOptions{.prompt_len = state.prompt.size()});
    LogProbMatrix out{state.mask_positions.size(), full.vocab, {}};
    out.values.reserve(out.rows * out.vocab);
    for (std::size_t p : state.sequence_mask_positions()) {
        const auto row = full.row(p);
        out.values.insert(out.values.end(), row.begin(), row.end());
    }
    return out;
}

}  // namespace

std::optional<Var> sft_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean, const MaskedState& state) {
    return sft_impl(g, model, clean, state);
}

std::optional<Var> sft_loss(Graph& g, const MaskPredictor& model, const TokenSequence& clean,
                            const MaskedState& state) {
    return sft_impl(g, model, clean, state);
}

std::optional<double> sft_loss_value(const Denoiser& model, const TokenSequence& clean, const MaskedState& state) {
    check_state(clean, state);
    if (state.mask_positions.empty()) {
        return std::nullopt;
    }
    const LogProbMatrix rows = masked_rows(model, state);
    double ll = 0.0;
    for (std::size_t k = 0; k < rows.rows; ++k) {
        ll += rows.at(k, clean[state.mask_positions[k]]);
    }
    return -ll / state.noise_level;
}

std::optional<double> sft_loss_kl_form(const Denoiser& model, const TokenSequence& clean, const MaskedState& state) {
    check_state(clean, state);
    if (state.mask_positions.empty()) {
        return std::nullopt;
    }
    const LogProbMatrix rows = masked_rows(model, state);
    double total = 0.0;
    for (std::size_t k = 0; k < rows.rows; ++k) {
        // KL(onehot(y) || p) = sum_v q(v)(log q(v) - log p(v)), with 0 log 0 = 0.
        const std::size_t y = clean[state.mask_positions[k]];
        for (std::size_t v = 0; v < rows.vocab; ++v) {
            const double q = v == y ? 1.0 : 0.0;
            if (q > 0.0) {
                total += q * (std::log(q) - rows.at(k, v));
            }
        }
    }
    return total / state.noise_level;
}

std::optional<Var> pretrain_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean,
                                 const MaskedState& state) {
    if (!state.prompt.empty()) {
        throw InputError("pretrain_loss: the sequence state must not carry a prompt");
    }
    return sft_impl(g, model, clean, state);
}

// ---- unlearning losses -------------------------------------------------------

std::optional<ForgetTerm> mdu_forget_loss(Graph& g, MaskPredictor& model, const MaskPredictor& frozen,
                                          const MaskedState& state, double tau) {
    check_tau(tau);
    if (!frozen.frozen()) {
        throw ContractError("mdu_forget_loss: the anchor model must be frozen");
    }
    if (state.mask_positions.empty()) {
        return std::nullopt;
    }
    const auto positions = state.sequence_mask_positions();
    const Var lp = model.log_probs(g, state.tokens(), positions, ForwardOptions{.prompt_len = state.prompt.size()});

    const LogProbMatrix anchor = masked_rows(frozen, mask_prompt(state, frozen.mask_id()));
    std::vector<double> target;
    target.reserve(anchor.values.size());
    for (std::size_t k = 0; k < anchor.rows; ++k) {
        const auto tilted = anchor_tilt_log(anchor.row(k), tau);
        target.insert(target.end(), tilted.begin(), tilted.end());
    }
    const Var kl = kl_rows_to_constant(lp, target);
    ForgetTerm out{mean(kl), {}};
    const auto kv = kl.value();
    out.per_position_kl.assign(kv.begin(), kv.end());
    return out;
}

std::optional<Var> ga_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean, const MaskedState& state) {
    auto l = sft_loss(g, model, clean, state);
    if (!l) {
        return std::nullopt;
    }
    return neg(*l);
}

std::optional<Var> gd_loss(Graph& g, MaskPredictor& model, const TokenSequence& forget_clean,
                           const MaskedState& forget_state, const TokenSequence& retain_clean,
                           const MaskedState& retain_state, double lambda) {
    auto forget = ga_loss(g, model, forget_clean, forget_state);
    if (!forget) {
        return std::nullopt;
    }
    if (lambda == 0.0) {
        return forget;
    }
    auto retain = sft_loss(g, model, retain_clean, retain_state);
    if (!retain) {
        return forget;
    }
    return add(*forget, scale(*retain, lambda));
}

std::optional<Var> npo_loss(Graph& g, MaskPredictor& model, const MaskPredictor& reference,
                            const TokenSequence& clean, const MaskedState& state, double beta) {
    if (!(beta > 0.0)) {
        throw DomainError("npo_loss: beta must be > 0");
    }
    auto l = sft_loss(g, model, clean, state);
    if (!l) {
        return std::nullopt;
    }
    const double ref = *sft_loss_value(reference, clean, state);
    return scale(log_sigmoid(scale(add_scalar(*l, -ref), beta)), -2.0 / beta);
}

std::optional<Var> simnpo_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean,
                               const MaskedState& state, double beta, double delta) {
    if (!(beta > 0.0)) {
        throw DomainError("simnpo_loss: beta must be > 0");
    }
    auto l = sft_loss(g, model, clean, state);
    if (!l) {
        return std::nullopt;
    }
    const double n = static_cast<double>(clean.size());
    return scale(log_sigmoid(scale(add_scalar(scale(*l, 1.0 / n), -delta), beta)), -2.0 / beta);
}

std::vector<double> wga_weights(const Denoiser& model, const TokenSequence& clean, const MaskedState& state,
                                double gamma) {
    check_state(clean, state);
    const LogProbMatrix rows = masked_rows(model, state);
    std::vector<double> w(rows.rows);
    for (std::size_t k = 0; k < rows.rows; ++k) {
        w[k] = std::exp(gamma * rows.at(k, clean[state.mask_positions[k]]));
    }
    return w;
}

std::optional<Var> wga_loss(Graph& g, MaskPredictor& model, const TokenSequence& clean, const MaskedState& state,
                            double gamma, std::optional<std::span<const double>> weights) {
    if (!(gamma >= 0.0)) {
        throw DomainError("wga_loss: gamma must be >= 0");
    }
    check_state(clean, state);
    if (state.mask_positions.empty()) {
        return std::nullopt;
    }
    std::vector<double> w;
    if (weights) {
        if (weights->size() != state.mask_positions.size()) {
            throw DimensionError("wga_loss: one weight per masked position required");
        }
        w.assign(weights->begin(), weights->end());
    } else {
        w = wga_weights(model, clean, state, gamma);
    }
    const auto positions = state.sequence_mask_positions();
    const Var lp = model.log_probs(g, state.tokens(), positions, ForwardOptions{.prompt_len = state.prompt.size()});
    const Var picked = pick(lp, iota(positions.size()), targets(clean, state));
    const std::size_t k = w.size();
    return sum(mul(picked, g.constant(k, 1, std::move(w))));
}

std::optional<Var> dpo_loss(Graph& g, MaskPredictor& model, const MaskPredictor& reference,
                            const TokenSequence& chosen_clean, const MaskedState& chosen_state,
                            const TokenSequence& rejected_clean, const MaskedState& rejected_state, double beta) {
    if (!(beta > 0.0)) {
        throw DomainError("dpo_loss: beta must be > 0");
    }
    auto lc = sft_loss(g, model, chosen_clean, chosen_state);
    auto lr = sft_loss(g, model, rejected_clean, rejected_state);
    if (!lc || !lr) {
        return std::nullopt;
    }
    const double ref_c = *sft_loss_value(reference, chosen_clean, chosen_state);
    const double ref_r = *sft_loss_value(reference, rejected_clean, rejected_state);
    // r(y+) - r(y-) = (L(y-) - L(y+)) + (Lref(y+) - Lref(y-))
    const Var margin = add_scalar(sub(*lr, *lc), ref_c - ref_r);
    return neg(log_sigmoid(scale(margin, beta)));
}

namespace {

double log_sigmoid_value(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

double npo_value(double sft, double sft_ref, double beta) {
    return -(2.0 / beta) * log_sigmoid_value(beta * (sft - sft_ref));
}

double simnpo_value(double sft, std::size_t response_len, double beta, double delta) {
    return -(2.0 / beta) * log_sigmoid_value(beta * (sft / static_cast<double>(response_len) - delta));
}

double dpo_value(double margin, double beta) { return -log_sigmoid_value(beta * margin); }

double wga_value(std::span<const double> probs, double gamma) {
    double total = 0.0;
    for (double p : probs) {
        total -= std::pow(p, gamma) * -std::log(p);
    }
    return total;
}

// ---- one update --------------------------------------------------------------

LossBreakdown accumulate_unlearning_gradients(Method method, MaskPredictor& model, const MaskPredictor& frozen,
                                              const UnlearnExample& example, const UnlearnConfig& config,
                                              Rng& rng, double weight) {
    config.validate();
    if (model.frozen()) {
        throw ContractError("cannot train a frozen model");
    }
    const TokenId mask = model.mask_id();
    const QAPair& f = example.forget;
    const MaskedState state = sample_training_state(f.prompt, f.response, mask, rng);

    Graph g;
    LossBreakdown out;
    std::optional<Var> forget;
    switch (method) {
        case Method::kMdu: {
            auto term = mdu_forget_loss(g, model, frozen, state, config.tau);
            if (term) {
                forget = term->loss;
                out.per_position_kl = std::move(term->per_position_kl);
            }
            break;
        }
        case Method::kGa:
        case Method::kGd:
            forget = ga_loss(g, model, f.response, state);
            break;
        case Method::kNpo:
            forget = npo_loss(g, model, frozen, f.response, state, config.beta);
            break;
        case Method::kSimNpo:
            forget = simnpo_loss(g, model, f.response, state, config.beta, config.delta);
            break;
        case Method::kWga:
            forget = wga_loss(g, model, f.response, state, config.gamma);
            break;
        case Method::kDpo: {
            if (!example.chosen) {
                throw InputError("dpo needs a chosen response for every forget example");
            }
            const TokenSequence& chosen = *example.chosen;
            // Same t and positions when the lengths agree; independent otherwise.
            MaskedState chosen_state;
            if (chosen.size() == f.response.size()) {
                chosen_state = mask_positions(f.prompt, chosen, state.mask_positions, mask);
                chosen_state.noise_level = state.noise_level;
            } else {
                chosen_state = sample_training_state(f.prompt, chosen, mask, rng);
            }
            forget = dpo_loss(g, model, frozen, chosen, chosen_state, f.response, state, config.dpo_beta);
            break;
        }
    }
    if (!forget) {
        out.skipped = true;
        return out;
    }
    Var total = *forget;
    out.forget_term = forget->item();
    if (config.lambda > 0.0 && example.retain) {
        const QAPair& r = *example.retain;
        const MaskedState rs = sample_training_state(r.prompt, r.response, mask, rng);
        if (auto retain = sft_loss(g, model, r.response, rs)) {
            out.retain_term = retain->item();
            total = add(total, scale(*retain, config.lambda));
        }
    }
    out.total = total.item();
    g.backward(weight == 1.0 ? total : scale(total, weight));
    return out;
}

LossBreakdown mdu_step(MaskPredictor& model, const MaskPredictor& frozen, const QAPair& forget,
                       const std::optional<QAPair>& retain, const UnlearnConfig& config, Rng& rng,
                       AdamW& optimizer) {
    model.zero_grads();
    const UnlearnExample example{forget, retain, std::nullopt};
    LossBreakdown out = accumulate_unlearning_gradients(Method::kMdu, model, frozen, example, config, rng);
    if (!out.skipped) {
        auto params = model.parameters();
        optimizer.step(params, "mdu");
    }
    model.zero_grads();
    return out;
}

}  // namespace mdlm
