#include "mdlm/errors.hpp"
#include "mdlm/grad_check.hpp"
#include "mdlm/objectives.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace mdlm {
namespace {

using testing::param;
using testing::tiny_config;
using testing::uniform_model;

constexpr double kLn2 = std::numbers::ln2;

const TokenSequence kPrompt = {4, 5, 6};
const TokenSequence kResponse = {7, 8, 9, 10};

MaskedState state_at(const TokenSequence& prompt, std::vector<std::size_t> positions, double t) {
    MaskedState s = mask_positions(prompt, kResponse, std::move(positions), 1);
    s.noise_level = t;
    return s;
}

// Fixed per-position distributions, independent of the input.
class TableDenoiser : public Denoiser {
public:
    explicit TableDenoiser(std::vector<VocabDistribution> rows) : rows_(std::move(rows)) {}
    std::size_t vocab_size() const override { return rows_[0].size(); }
    TokenId mask_id() const override { return 1; }
    TokenId pad_id() const override { return 0; }
    LogProbMatrix predict(std::span<const TokenId> tokens, const ForwardOptions&) const override {
        LogProbMatrix out{tokens.size(), vocab_size(), {}};
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            for (double p : rows_[i % rows_.size()]) out.values.push_back(std::log(p));
        }
        return out;
    }

private:
    std::vector<VocabDistribution> rows_;
};

// ---- distributions ---------------------------------------------------------

TEST(Kl, IdenticalDistributionsGiveZero) {
    const std::vector<double> p = {0.2, 0.3, 0.5};
    EXPECT_EQ(kl_divergence(p, p), 0.0);
}

TEST(Kl, OneHotAgainstFairCoin) {
    EXPECT_NEAR(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), kLn2, 1e-15);
}

TEST(Kl, Asymmetric) {
    const std::vector<double> p = {0.9, 0.1}, q = {0.5, 0.5};
    const double forward = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    const double reverse = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    EXPECT_NEAR(kl_divergence(p, q), forward, 1e-15);
    EXPECT_NEAR(kl_divergence(q, p), reverse, 1e-15);
    EXPECT_GT(std::abs(forward - reverse), 0.1);
}

TEST(Kl, ZeroTargetMassIsUndefined) {
    EXPECT_THROW(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}),
                 DivergenceUndefinedError);
}

TEST(AnchorTilt, UnitTemperatureIsIdentity) {
    const std::vector<double> p = {0.7, 0.2, 0.1};
    EXPECT_EQ(anchor_tilt(p, 1.0), p);
}

TEST(AnchorTilt, ZeroTemperatureIsExactlyUniform) {
    const auto u = anchor_tilt(std::vector<double>{0.7, 0.2, 0.1, 0.0}, 0.0);
    for (double x : u) EXPECT_EQ(x, 0.25);
}

TEST(AnchorTilt, SquareRootTilt) {
    const auto out = anchor_tilt(std::vector<double>{0.8, 0.2}, 0.5);
    const double z = std::sqrt(0.8) + std::sqrt(0.2);
    EXPECT_NEAR(out[0], std::sqrt(0.8) / z, 1e-14);
    EXPECT_NEAR(out[1], std::sqrt(0.2) / z, 1e-14);
    EXPECT_NEAR(out[0], 2.0 / 3.0, 1e-12);
}

TEST(AnchorTilt, RejectsTemperatureOutsideUnitInterval) {
    EXPECT_THROW(anchor_tilt(std::vector<double>{0.5, 0.5}, 1.5), DomainError);
}

TEST(TiltedDistribution, Endpoints) {
    const std::vector<double> pc = {0.9, 0.1}, pu = {0.3, 0.7};
    EXPECT_EQ(tilted_distribution(pc, pu, 0.0), pc);
    EXPECT_EQ(tilted_distribution(pc, pu, 1.0), pu);
}

TEST(TiltedDistribution, GeometricMidpoint) {
    const auto out = tilted_distribution(std::vector<double>{0.9, 0.1}, std::vector<double>{0.5, 0.5}, 0.5);
    const double a = std::sqrt(0.45), b = std::sqrt(0.05);
    EXPECT_NEAR(out[0], a / (a + b), 1e-14);
    EXPECT_NEAR(out[0], 0.75, 1e-12);
    EXPECT_NEAR(out[1], 0.25, 1e-12);
}

// ---- masked-token ELBO -------------------------------------------------------

TEST(Sft, PerfectModelHasZeroLoss) {
    std::vector<VocabDistribution> rows;
    for (TokenId y : TokenSequence{0, 0, 0, 7, 8, 9, 10}) {
        VocabDistribution d(12, 0.0);
        d[y] = 1.0;
        rows.push_back(d);
    }
    const TableDenoiser perfect(rows);
    EXPECT_EQ(*sft_loss_value(perfect, kResponse, state_at(kPrompt, {0, 2, 3}, 0.4)), 0.0);
}

TEST(Sft, UniformModelMatchesClosedForm) {
    MaskPredictor m = uniform_model(tiny_config());
    const auto s = state_at(kPrompt, {0, 1, 3}, 0.5);
    const double expected = (1.0 / 0.5) * 3.0 * std::log(12.0);
    EXPECT_NEAR(*sft_loss_value(m, kResponse, s), expected, 1e-12);
    Graph g;
    EXPECT_NEAR(sft_loss(g, m, kResponse, s)->item(), expected, 1e-12);
}

TEST(Sft, DoublingNoiseLevelHalvesLoss) {
    const MaskPredictor m = MaskPredictor::init(tiny_config(3));
    const double a = *sft_loss_value(m, kResponse, state_at(kPrompt, {1, 2}, 0.3));
    const double b = *sft_loss_value(m, kResponse, state_at(kPrompt, {1, 2}, 0.6));
    EXPECT_NEAR(b, a / 2.0, 1e-13);
}

TEST(Sft, EmptyMaskSetIsASkip) {
    MaskPredictor m = MaskPredictor::init(tiny_config());
    Graph g;
    EXPECT_FALSE(sft_loss(g, m, kResponse, state_at(kPrompt, {}, 0.0)).has_value());
    EXPECT_FALSE(sft_loss_value(m, kResponse, state_at(kPrompt, {}, 0.0)).has_value());
}

TEST(Sft, NllAndOneHotKlFormsAgree) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const MaskPredictor m = MaskPredictor::init(tiny_config(seed));
        const auto s = state_at(kPrompt, {0, 2, 3}, 0.35);
        EXPECT_NEAR(*sft_loss_value(m, kResponse, s), *sft_loss_kl_form(m, kResponse, s), 1e-12);
    }
}

TEST(Pretrain, EqualsSftWithEmptyPrompt) {
    MaskPredictor m = MaskPredictor::init(tiny_config(2));
    const auto s = state_at({}, {0, 3}, 0.5);
    Graph g;
    EXPECT_EQ(pretrain_loss(g, m, kResponse, s)->item(), sft_loss(g, m, kResponse, s)->item());
    EXPECT_THROW(pretrain_loss(g, m, kResponse, state_at(kPrompt, {0}, 0.5)), InputError);
}

TEST(Pretrain, UniformModelMatchesClosedForm) {
    MaskPredictor m = uniform_model(tiny_config());
    Graph g;
    EXPECT_NEAR(pretrain_loss(g, m, kResponse, state_at({}, {0, 1, 2, 3}, 0.8))->item(),
                4.0 * std::log(12.0) / 0.8, 1e-12);
}

// ---- MDU forget loss ---------------------------------------------------------

TEST(MduForget, ZeroWhenConditionalEqualsAnchor) {
    MaskPredictor m = MaskPredictor::init(tiny_config(4));
    const MaskPredictor frozen = m.freeze();
    Graph g;
    const auto term = mdu_forget_loss(g, m, frozen, state_at({}, {0, 2}, 0.5), 1.0);
    ASSERT_TRUE(term);
    EXPECT_NEAR(term->loss.item(), 0.0, 1e-14);
}

TEST(MduForget, ZeroTemperatureIsTheMaxEntropyLoss) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        MaskPredictor m = MaskPredictor::init(tiny_config(seed));
        const MaskPredictor frozen = MaskPredictor::init(tiny_config(seed + 100)).freeze();
        const auto s = state_at(kPrompt, {0, 1, 3}, 0.6);
        Graph g;
        const auto term = mdu_forget_loss(g, m, frozen, s, 0.0);
        const auto p = m.forward(s.tokens());
        double expected = 0.0;
        const auto positions = s.sequence_mask_positions();
        for (std::size_t k = 0; k < positions.size(); ++k) {
            const double per = std::log(12.0) - entropy(p[positions[k]]);
            EXPECT_NEAR(term->per_position_kl[k], per, 1e-10);
            expected += per;
        }
        EXPECT_NEAR(term->loss.item(), expected / 3.0, 1e-10);
    }
}

TEST(MduForget, UnitTemperatureTargetsTheRawNullPromptPrediction) {
    MaskPredictor m = MaskPredictor::init(tiny_config(1));
    const MaskPredictor frozen = MaskPredictor::init(tiny_config(2)).freeze();
    const auto s = state_at(kPrompt, {1, 2}, 0.5);
    const auto pc = m.forward(s.tokens());
    const auto pu = frozen.forward(mask_prompt(s, 1).tokens());
    Graph g;
    const auto term = mdu_forget_loss(g, m, frozen, s, 1.0);
    const auto positions = s.sequence_mask_positions();
    for (std::size_t k = 0; k < positions.size(); ++k) {
        EXPECT_NEAR(term->per_position_kl[k], kl_divergence(pc[positions[k]], pu[positions[k]]), 1e-12);
    }
}

TEST(MduForget, InvariantToVocabularyRelabeling) {
    const TokenId a = 7, b = 9;
    MaskPredictor m = MaskPredictor::init(tiny_config(5));
    MaskPredictor base = MaskPredictor::init(tiny_config(6));
    auto relabel = [&](MaskPredictor model) {
        Tensor& emb = param(model, "tok_emb");
        Tensor& w = param(model, "head.w");
        Tensor& bias = param(model, "head.b");
        for (std::size_t c = 0; c < emb.cols(); ++c) std::swap(emb.at(a, c), emb.at(b, c));
        for (std::size_t r = 0; r < w.rows(); ++r) std::swap(w.at(r, a), w.at(r, b));
        std::swap(bias[a], bias[b]);
        return model;
    };
    auto swap_ids = [&](TokenSequence s) {
        for (auto& t : s) t = t == a ? b : (t == b ? a : t);
        return s;
    };
    MaskedState s = state_at(kPrompt, {0, 3}, 0.5);
    MaskedState s2 = s;
    s2.prompt = swap_ids(s.prompt);
    s2.response = swap_ids(s.response);
    MaskPredictor m2 = relabel(m);
    const MaskPredictor f1 = base.freeze(), f2 = relabel(base).freeze();
    Graph g1, g2;
    for (double tau : {0.0, 0.4, 1.0}) {
        EXPECT_NEAR(mdu_forget_loss(g1, m, f1, s, tau)->loss.item(), mdu_forget_loss(g2, m2, f2, s2, tau)->loss.item(),
                    1e-12);
    }
}

TEST(MduForget, NonNegativeAndAnchorIsolated) {
    Rng rng(7);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        MaskPredictor m = MaskPredictor::init(tiny_config(seed));
        const MaskPredictor frozen = MaskPredictor::init(tiny_config(seed + 50)).freeze();
        const auto s = corrupt(kPrompt, kResponse, 0.7, 1, rng);
        if (s.mask_positions.empty()) continue;
        Graph g;
        const auto term = mdu_forget_loss(g, m, frozen, s, rng.uniform());
        EXPECT_GE(term->loss.item(), 0.0);
        g.backward(term->loss);
        for (const auto& [name, t] : frozen.named_parameters()) {
            EXPECT_TRUE(!t->has_grad() || std::all_of(t->grad().begin(), t->grad().end(), [](double x) { return x == 0.0; }))
                << name;
        }
        m.zero_grads();
    }
}

TEST(MduForget, RequiresFrozenAnchorAndSkipsEmptyMask) {
    MaskPredictor m = MaskPredictor::init(tiny_config());
    const MaskPredictor unfrozen = MaskPredictor::init(tiny_config());
    Graph g;
    EXPECT_THROW(mdu_forget_loss(g, m, unfrozen, state_at({}, {0}, 0.5), 1.0), ContractError);
    EXPECT_FALSE(mdu_forget_loss(g, m, m.freeze(), state_at({}, {}, 0.0), 1.0).has_value());
}

// ---- baselines ---------------------------------------------------------------

TEST(Ga, IsNegatedSftWithNegatedGradient) {
    MaskPredictor m = MaskPredictor::init(tiny_config(8));
    const auto s = state_at(kPrompt, {0, 1}, 0.4);
    Graph g1;
    const auto sft = sft_loss(g1, m, kResponse, s);
    g1.backward(*sft);
    std::vector<std::vector<double>> sft_grads;
    for (Tensor* t : m.parameters()) sft_grads.emplace_back(t->grad().begin(), t->grad().end());
    m.zero_grads();
    Graph g2;
    const auto ga = ga_loss(g2, m, kResponse, s);
    EXPECT_EQ(ga->item(), -sft->item());
    g2.backward(*ga);
    const auto params = m.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < sft_grads[k].size(); ++i) EXPECT_EQ(params[k]->grad()[i], -sft_grads[k][i]);
    }
}

TEST(Gd, RetainWeightCombination) {
    MaskPredictor m = MaskPredictor::init(tiny_config(9));
    const auto fs = state_at(kPrompt, {0, 1}, 0.4);
    const TokenSequence retain = {3, 3, 2, 5};
    MaskedState rs = mask_positions({6, 6}, retain, {1, 3}, 1);
    rs.noise_level = 0.5;
    Graph g;
    const double ga = ga_loss(g, m, kResponse, fs)->item();
    const double sft = sft_loss(g, m, retain, rs)->item();
    EXPECT_EQ(gd_loss(g, m, kResponse, fs, retain, rs, 0.0)->item(), ga);
    EXPECT_NEAR(gd_loss(g, m, kResponse, fs, retain, rs, 1.0)->item(), ga + sft, 1e-12);
    EXPECT_NEAR(gd_loss(g, m, kResponse, fs, retain, rs, 2.5)->item(), ga + 2.5 * sft, 1e-12);
}

TEST(Npo, ScalarForm) {
    EXPECT_NEAR(npo_value(3.0, 2.0, 0.2), 10.0 * std::log1p(std::exp(-0.2)), 1e-12);
    EXPECT_NEAR(npo_value(3.0, 2.0, 0.2), 5.981, 1e-3);
    EXPECT_DOUBLE_EQ(npo_value(4.0, 4.0, 0.2), 10.0 * kLn2);
    EXPECT_LT(npo_value(5.0, 4.0, 0.2), 10.0 * kLn2);
}

TEST(Npo, ReferenceCaseAndGraphMatchesScalar) {
    MaskPredictor m = MaskPredictor::init(tiny_config(10));
    const auto s = state_at(kPrompt, {1, 3}, 0.5);
    Graph g;
    EXPECT_NEAR(npo_loss(g, m, m.freeze(), kResponse, s, 0.2)->item(), (2.0 / 0.2) * kLn2, 1e-10);
    const MaskPredictor ref = MaskPredictor::init(tiny_config(11)).freeze();
    const double expected = npo_value(*sft_loss_value(m, kResponse, s), *sft_loss_value(ref, kResponse, s), 0.2);
    EXPECT_NEAR(npo_loss(g, m, ref, kResponse, s, 0.2)->item(), expected, 1e-12);
}

TEST(SimNpo, ScalarForm) {
    EXPECT_DOUBLE_EQ(simnpo_value(0.0, 4, 0.2, 0.0), 10.0 * kLn2);
    // Length 1: identical to the NPO form with a zero reference.
    EXPECT_DOUBLE_EQ(simnpo_value(1.7, 1, 0.2, 0.0), npo_value(1.7, 0.0, 0.2));
    EXPECT_DOUBLE_EQ(simnpo_value(6.8, 4, 0.2, 0.0), npo_value(1.7, 0.0, 0.2));
    EXPECT_LT(simnpo_value(2.0, 4, 0.2, 0.0), simnpo_value(1.0, 4, 0.2, 0.0));
}

TEST(SimNpo, GraphMatchesScalar) {
    MaskPredictor m = MaskPredictor::init(tiny_config(12));
    const auto s = state_at(kPrompt, {0, 2}, 0.5);
    Graph g;
    EXPECT_NEAR(simnpo_loss(g, m, kResponse, s, 0.2, 0.0)->item(),
                simnpo_value(*sft_loss_value(m, kResponse, s), kResponse.size(), 0.2, 0.0), 1e-12);
}

TEST(Wga, ScalarForm) {
    const std::vector<double> p = {0.9, 0.5};
    EXPECT_NEAR(wga_value(p, 1.0), -(0.9 * -std::log(0.9) + 0.5 * -std::log(0.5)), 1e-15);
    EXPECT_NEAR(wga_value(p, 1.0), -0.4414, 1e-4);
    EXPECT_NEAR(wga_value(p, 0.0), std::log(0.9) + std::log(0.5), 1e-15);
    EXPECT_EQ(wga_value(std::vector<double>{1.0}, 1.0), 0.0);
}

TEST(Wga, GraphMatchesScalar) {
    MaskPredictor m = MaskPredictor::init(tiny_config(13));
    const auto s = state_at(kPrompt, {0, 1, 3}, 0.5);
    const auto p = m.forward(s.tokens());
    std::vector<double> probs;
    for (std::size_t i : s.mask_positions) probs.push_back(p[kPrompt.size() + i][kResponse[i]]);
    Graph g;
    EXPECT_NEAR(wga_loss(g, m, kResponse, s, 1.0)->item(), wga_value(probs, 1.0), 1e-12);
}

TEST(Dpo, ScalarForm) {
    EXPECT_NEAR(dpo_value(2.0, 0.1), std::log1p(std::exp(-0.2)), 1e-15);
    EXPECT_NEAR(dpo_value(2.0, 0.1), 0.598, 1e-3);
    EXPECT_DOUBLE_EQ(dpo_value(0.0, 0.1), kLn2);
}

TEST(Dpo, ReferenceCaseAndAntisymmetry) {
    MaskPredictor m = MaskPredictor::init(tiny_config(14));
    const TokenSequence chosen = {7, 3, 9, 11};
    MaskedState cs = mask_positions(kPrompt, chosen, {1, 2}, 1);
    cs.noise_level = 0.5;
    const auto rs = state_at(kPrompt, {1, 2}, 0.5);
    Graph g;
    EXPECT_NEAR(dpo_loss(g, m, m.freeze(), chosen, cs, kResponse, rs, 0.1)->item(), kLn2, 1e-10);

    const MaskPredictor ref = MaskPredictor::init(tiny_config(15)).freeze();
    auto r = [&](const TokenSequence& y, const MaskedState& s) {
        return -*sft_loss_value(m, y, s) + *sft_loss_value(ref, y, s);
    };
    const double margin = r(chosen, cs) - r(kResponse, rs);
    EXPECT_NEAR(dpo_loss(g, m, ref, chosen, cs, kResponse, rs, 0.1)->item(), dpo_value(margin, 0.1), 1e-12);
    EXPECT_NEAR(dpo_loss(g, m, ref, kResponse, rs, chosen, cs, 0.1)->item(), dpo_value(-margin, 0.1), 1e-12);
}

// ---- gradients of every loss ----------------------------------------------------

class LossGradients : public ::testing::TestWithParam<int> {};

TEST_P(LossGradients, MatchCentralDifferences) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    MaskPredictor m = MaskPredictor::init(tiny_config(seed));
    const MaskPredictor ref = MaskPredictor::init(tiny_config(seed + 1000)).freeze();
    Rng rng(seed);
    MaskedState s = corrupt(kPrompt, kResponse, 0.6, 1, rng);
    if (s.mask_positions.empty()) s = state_at(kPrompt, {2}, 0.6);
    const TokenSequence chosen = {7, 3, 9, 11};
    MaskedState cs = mask_positions(kPrompt, chosen, s.mask_positions, 1);
    cs.noise_level = s.noise_level;
    const TokenSequence retain = {2, 5, 5};
    MaskedState rs = mask_positions({8}, retain, {0, 2}, 1);
    rs.noise_level = 0.7;
    const double tau = rng.uniform();
    const auto weights = wga_weights(m, kResponse, s, 1.0);

    auto params = m.parameters();
    GradCheckOptions opt;
    opt.abs_floor = 1e-8;
    opt.max_coords_per_tensor = 24;
    opt.seed = seed;
    const std::vector<std::pair<const char*, LossBuilder>> losses = {
        {"sft", [&](Graph& g) { return *sft_loss(g, m, kResponse, s); }},
        {"mdu", [&](Graph& g) { return mdu_forget_loss(g, m, ref, s, tau)->loss; }},
        {"ga", [&](Graph& g) { return *ga_loss(g, m, kResponse, s); }},
        {"gd", [&](Graph& g) { return *gd_loss(g, m, kResponse, s, retain, rs, 1.0); }},
        {"npo", [&](Graph& g) { return *npo_loss(g, m, ref, kResponse, s, 0.2); }},
        {"simnpo", [&](Graph& g) { return *simnpo_loss(g, m, kResponse, s, 0.2, 0.0); }},
        {"wga", [&](Graph& g) { return *wga_loss(g, m, kResponse, s, 1.0, weights); }},
        {"dpo", [&](Graph& g) { return *dpo_loss(g, m, ref, chosen, cs, kResponse, s, 0.1); }},
    };
    for (const auto& [name, f] : losses) {
        const auto r = grad_check(f, params, opt);
        EXPECT_LT(r.max_rel_error, 1e-4) << name << ": tensor " << r.worst_tensor << " index " << r.worst_index
                                         << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
    }
}

INSTANTIATE_TEST_SUITE_P(TwentySeeds, LossGradients, ::testing::Range(0, 20));

// ---- MDU step ------------------------------------------------------------------

UnlearnConfig step_config(double lambda, double lr) {
    UnlearnConfig c;
    c.lambda = lambda;
    c.lr = lr;
    return c;
}

OptimizerSettings adam(double lr) {
    OptimizerSettings s;
    s.lr = lr;
    s.cosine = false;
    return s;
}

TEST(MduStep, NoRetainWeightMeansNoRetainTerm) {
    MaskPredictor m = MaskPredictor::init(tiny_config(1));
    const MaskPredictor frozen = MaskPredictor::init(tiny_config(2)).freeze();
    AdamW opt(adam(1e-3));
    Rng rng(3);
    const QAPair forget{kPrompt, kResponse};
    const QAPair retain{{8}, {2, 5, 5}};
    for (int i = 0; i < 5; ++i) {
        const auto out = mdu_step(m, frozen, forget, retain, step_config(0.0, 1e-3), rng, opt);
        EXPECT_EQ(out.retain_term, 0.0);
        EXPECT_EQ(out.total, out.forget_term);
    }
}

TEST(MduStep, TotalIsForgetPlusWeightedRetain) {
    MaskPredictor m = MaskPredictor::init(tiny_config(1));
    const MaskPredictor frozen = m.freeze();
    AdamW opt(adam(1e-3));
    Rng rng(4);
    for (int i = 0; i < 10; ++i) {
        const auto out = mdu_step(m, frozen, {kPrompt, kResponse}, QAPair{{8}, {2, 5, 5}}, step_config(0.7, 1e-3),
                                  rng, opt);
        if (out.skipped) continue;
        EXPECT_NEAR(out.total, out.forget_term + 0.7 * out.retain_term, 1e-10);
    }
}

TEST(MduStep, FrozenAnchorIsUntouched) {
    MaskPredictor m = MaskPredictor::init(tiny_config(1));
    const MaskPredictor frozen = m.freeze();
    const MaskPredictor snapshot = frozen;
    AdamW opt(adam(1e-2));
    Rng rng(5);
    for (int i = 0; i < 5; ++i) mdu_step(m, frozen, {kPrompt, kResponse}, std::nullopt, step_config(1.0, 1e-2), rng, opt);
    EXPECT_TRUE(frozen.bit_equal(snapshot));
    EXPECT_FALSE(m.bit_equal(snapshot));
}

TEST(MduStep, ZeroLearningRateLeavesModelUnchanged) {
    MaskPredictor m = MaskPredictor::init(tiny_config(1));
    const MaskPredictor before = m.freeze();
    const MaskPredictor frozen = MaskPredictor::init(tiny_config(2)).freeze();
    AdamW opt(adam(0.0));
    Rng rng(6);
    mdu_step(m, frozen, {kPrompt, kResponse}, QAPair{{8}, {2, 5, 5}}, step_config(1.0, 0.0), rng, opt);
    EXPECT_TRUE(m.bit_equal(before));
}

TEST(UnlearnConfig, Validation) {
    UnlearnConfig c;
    EXPECT_NO_THROW(c.validate());
    c.tau = 1.2;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.beta = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.lambda = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Method, NamesRoundTrip) {
    for (Method m : {Method::kMdu, Method::kGa, Method::kGd, Method::kNpo, Method::kSimNpo, Method::kWga,
                     Method::kDpo}) {
        EXPECT_EQ(parse_method(to_string(m)), m);
    }
    EXPECT_THROW(parse_method("sgd"), ConfigError);
}

}  // namespace
}  // namespace mdlm
