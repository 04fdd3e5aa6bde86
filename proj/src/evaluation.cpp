#include "mdlm/evaluation.hpp"

#include "mdlm/errors.hpp"
#include "mdlm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace mdlm {

double rouge_l(std::span<const TokenId> hypothesis, std::span<const TokenId> reference) {
    if (hypothesis.empty() && reference.empty()) {
        return 1.0;
    }
    if (hypothesis.empty() || reference.empty()) {
        return 0.0;
    }
    std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
    for (TokenId h : hypothesis) {
        for (std::size_t j = 1; j <= reference.size(); ++j) {
            cur[j] = h == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev.back());
    if (lcs == 0.0) {
        return 0.0;
    }
    const double p = lcs / static_cast<double>(hypothesis.size());
    const double r = lcs / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

// ---- Monte-Carlo reconstruction likelihood ------------------------------------

ReconstructionEstimate reconstruction_nll(const Denoiser& model, const QAPair& pair, std::size_t num_samples,
                                          Rng& rng) {
    const std::size_t n = pair.response.size();
    if (n == 0) {
        throw InputError("reconstruction_nll: empty response");
    }
    if (num_samples == 0) {
        throw InputError("reconstruction_nll: need at least one sample");
    }
    ReconstructionEstimate est;
    est.samples.reserve(num_samples);
    const ForwardOptions fwd{.prompt_len = pair.prompt.size()};
    for (std::size_t j = 0; j < num_samples; ++j) {
        const std::size_t l = 1 + static_cast<std::size_t>(rng.below(n));
        const MaskedState s = corrupt_fixed_count(pair.prompt, pair.response, l, model.mask_id(), rng);
        const LogProbMatrix lp = model.predict(s.tokens(), fwd);
        double nll = 0.0;
        for (std::size_t i : s.mask_positions) {
            nll -= lp.at(pair.prompt.size() + i, pair.response[i]);
        }
        est.samples.push_back(nll / static_cast<double>(l));
    }
    const double m = std::accumulate(est.samples.begin(), est.samples.end(), 0.0) / static_cast<double>(num_samples);
    est.mean_nll = m;
    if (num_samples > 1) {
        double ss = 0.0;
        for (double x : est.samples) {
            ss += (x - m) * (x - m);
        }
        est.std_error = std::sqrt(ss / static_cast<double>(num_samples - 1) / static_cast<double>(num_samples));
    }
    return est;
}

double answer_probability(const Denoiser& model, const QAPair& pair, std::size_t num_samples, Rng& rng) {
    return std::exp(-reconstruction_nll(model, pair, num_samples, rng).mean_nll);
}

double pseudo_ppl(const Denoiser& model, const QAPair& pair, std::size_t num_samples, Rng& rng) {
    return std::exp(reconstruction_nll(model, pair, num_samples, rng).mean_nll);
}

// ---- token-level conditional vs anchor KL -------------------------------------

std::string_view to_string(TokenRole role) {
    switch (role) {
        case TokenRole::kInContext: return "in_context";
        case TokenRole::kStructural: return "structural";
        case TokenRole::kStoredKnowledge: return "stored_knowledge";
    }
    return "?";
}

std::vector<TokenRole> tag_token_roles(const QAPair& pair, const std::set<TokenId>& structural_lexicon) {
    const std::set<TokenId> in_prompt(pair.prompt.begin(), pair.prompt.end());
    std::vector<TokenRole> roles;
    roles.reserve(pair.response.size());
    for (TokenId t : pair.response) {
        if (in_prompt.contains(t)) {
            roles.push_back(TokenRole::kInContext);
        } else if (structural_lexicon.contains(t)) {
            roles.push_back(TokenRole::kStructural);
        } else {
            roles.push_back(TokenRole::kStoredKnowledge);
        }
    }
    return roles;
}

namespace {

// KL between two log-probability rows.
double kl_logs(std::span<const double> lp, std::span<const double> lq) {
    double kl = 0.0;
    for (std::size_t v = 0; v < lp.size(); ++v) {
        const double p = std::exp(lp[v]);
        if (p == 0.0) {
            continue;
        }
        if (!std::isfinite(lq[v])) {
            throw DivergenceUndefinedError("KL undefined: anchor assigns zero mass where the model does not");
        }
        kl += p * (lp[v] - lq[v]);
    }
    return std::max(kl, 0.0);
}

double max_ordinary(std::span<const double> lp, TokenId mask, TokenId pad, TokenId* argmax) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < lp.size(); ++v) {
        if (v != mask && v != pad && lp[v] > best) {
            best = lp[v];
            if (argmax) *argmax = static_cast<TokenId>(v);
        }
    }
    return best;
}

}  // namespace

KlTrajectory token_kl_trajectory(const Denoiser& conditional, const Denoiser& anchor, const QAPair& pair,
                                 const TrajectoryOptions& options) {
    const std::size_t n = pair.response.size();
    if (n == 0) {
        throw InputError("token_kl_trajectory: empty response");
    }
    const TokenId mask = conditional.mask_id(), pad = conditional.pad_id();
    const TokenSequence null_prompt(pair.prompt.size(), mask);
    const ForwardOptions fwd{.prompt_len = pair.prompt.size(), .block_prompt_keys = options.sampler.block_prompt_keys};
    const std::size_t total_steps = options.sampler.num_steps == 0 ? n : options.sampler.num_steps;

    KlTrajectory out;
    out.commit_step.assign(n, 0);
    out.at_commit.assign(n, 0.0);
    TokenSequence current(n, mask);
    std::size_t remaining = n;
    for (std::size_t k = 0; remaining > 0; ++k) {
        const std::size_t steps_left = total_steps > k ? total_steps - k : 1;
        const std::size_t commit = (remaining + steps_left - 1) / steps_left;
        const LogProbMatrix pc = conditional.predict(join(pair.prompt, current), fwd);
        const LogProbMatrix pu = anchor.predict(join(null_prompt, current), fwd);

        std::vector<double> row(n, std::numeric_limits<double>::quiet_NaN());
        struct Cand {
            std::size_t pos;
            double conf;
            TokenId token;
        };
        std::vector<Cand> cands;
        for (std::size_t i = 0; i < n; ++i) {
            if (current[i] != mask) continue;
            const std::size_t r = pair.prompt.size() + i;
            row[i] = kl_logs(pc.row(r), pu.row(r));
            TokenId arg = 0;
            const double conf = max_ordinary(pc.row(r), mask, pad, &arg);
            cands.push_back({i, conf, arg});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.conf > b.conf; });
        for (std::size_t c = 0; c < commit; ++c) {
            const std::size_t i = cands[c].pos;
            current[i] = options.teacher_forced ? pair.response[i] : cands[c].token;
            out.commit_step[i] = k;
            out.at_commit[i] = row[i];
        }
        remaining -= commit;
        out.kl.push_back(std::move(row));
    }
    out.response = std::move(current);
    return out;
}

std::map<TokenRole, CategoryStats> category_means(std::span<const KlTrajectory> trajectories,
                                                  std::span<const std::vector<TokenRole>> roles) {
    if (trajectories.size() != roles.size()) {
        throw DimensionError("category_means: one role list per trajectory required");
    }
    std::map<TokenRole, double> sums;
    std::map<TokenRole, std::size_t> counts;
    for (std::size_t e = 0; e < trajectories.size(); ++e) {
        const auto& t = trajectories[e];
        if (t.at_commit.size() != roles[e].size()) {
            throw DimensionError("category_means: role list length differs from response length");
        }
        for (std::size_t i = 0; i < t.at_commit.size(); ++i) {
            sums[roles[e][i]] += t.at_commit[i];
            ++counts[roles[e][i]];
        }
    }
    std::map<TokenRole, CategoryStats> out;
    for (TokenRole r : {TokenRole::kInContext, TokenRole::kStructural, TokenRole::kStoredKnowledge}) {
        CategoryStats s;
        s.count = counts[r];
        if (s.count > 0) {
            s.mean = sums[r] / static_cast<double>(s.count);
        }
        out[r] = s;
    }
    return out;
}

std::map<TokenRole, CategoryChange> category_kl_aggregate(std::span<const KlTrajectory> before,
                                                          std::span<const KlTrajectory> after,
                                                          std::span<const std::vector<TokenRole>> roles) {
    const auto b = category_means(before, roles);
    const auto a = category_means(after, roles);
    std::map<TokenRole, CategoryChange> out;
    for (const auto& [role, stats] : b) {
        CategoryChange c{stats, a.at(role), std::nullopt};
        if (c.before.mean && c.after.mean && *c.before.mean != 0.0) {
            c.relative_change = (*c.after.mean - *c.before.mean) / *c.before.mean;
        }
        out[role] = c;
    }
    return out;
}

void write_trajectory_csv(std::ostream& out, std::span<const KlTrajectory> trajectories,
                          std::span<const std::vector<TokenRole>> roles) {
    out << "example,step,position,kl,role\n";
    char buf[64];
    for (std::size_t e = 0; e < trajectories.size(); ++e) {
        const auto& t = trajectories[e];
        for (std::size_t k = 0; k < t.kl.size(); ++k) {
            for (std::size_t i = 0; i < t.kl[k].size(); ++i) {
                if (std::isnan(t.kl[k][i])) continue;
                std::snprintf(buf, sizeof buf, "%.17g", t.kl[k][i]);
                out << e << ',' << k << ',' << i << ',' << buf << ','
                    << (e < roles.size() ? to_string(roles[e][i]) : std::string_view("")) << '\n';
            }
        }
    }
}

// ---- convergence diagnostic -----------------------------------------------------

ConvergencePoint convergence_point(const MaskPredictor& trained, const MaskPredictor& base,
                                   std::span<const QAPair> forget, std::uint64_t seed,
                                   std::size_t draws_per_example) {
    if (!same_architecture(trained.config(), base.config())) {
        throw CheckpointError("convergence diagnostic: checkpoint config differs from the base model");
    }
    Rng rng(seed);
    const TokenId mask = base.mask_id();
    const double log_v = std::log(static_cast<double>(base.vocab_size()));
    ConvergencePoint sum;
    std::size_t count = 0;
    for (const QAPair& pair : forget) {
        for (std::size_t d = 0; d < draws_per_example; ++d) {
            const MaskedState s = sample_training_state(pair.prompt, pair.response, mask, rng);
            if (s.mask_positions.empty()) continue;
            const ForwardOptions fwd{.prompt_len = s.prompt.size()};
            const LogProbMatrix pt = trained.predict(s.tokens(), fwd);
            const LogProbMatrix pb = base.predict(s.tokens(), fwd);
            const LogProbMatrix pu = base.predict(mask_prompt(s, mask).tokens(), fwd);
            for (std::size_t r : s.sequence_mask_positions()) {
                sum.kl_to_base_conditional += kl_logs(pt.row(r), pb.row(r));
                sum.kl_to_base_unconditional += kl_logs(pt.row(r), pu.row(r));
                // KL(p || U) = log V - H(p)
                double h = 0.0;
                for (double l : pt.row(r)) {
                    const double p = std::exp(l);
                    if (p > 0.0) h -= p * l;
                }
                sum.kl_to_uniform += std::max(0.0, log_v - h);
                ++count;
            }
        }
    }
    if (count > 0) {
        const double c = static_cast<double>(count);
        sum.kl_to_base_conditional /= c;
        sum.kl_to_base_unconditional /= c;
        sum.kl_to_uniform /= c;
    }
    return sum;
}

std::vector<ConvergencePoint> convergence_diagnostic(std::span<const MaskPredictor> checkpoints,
                                                     const MaskPredictor& base, std::span<const QAPair> forget,
                                                     std::uint64_t seed, std::size_t draws_per_example) {
    std::vector<ConvergencePoint> out;
    out.reserve(checkpoints.size());
    for (const auto& m : checkpoints) {
        out.push_back(convergence_point(m, base, forget, seed, draws_per_example));
    }
    return out;
}

// ---- split evaluation ------------------------------------------------------------

MetricSummary summarize(std::vector<double> values) {
    MetricSummary s;
    if (values.empty()) {
        return s;
    }
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    s.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    return s;
}

namespace {

template <class F>
MetricSummary summarize_field(const std::vector<ExampleMetrics>& examples, F field) {
    std::vector<double> v;
    v.reserve(examples.size());
    for (const auto& e : examples) v.push_back(field(e));
    return summarize(std::move(v));
}

nlohmann::json summary_json(const MetricSummary& s) { return {{"mean", s.mean}, {"median", s.median}}; }

}  // namespace

MetricSummary EvalReport::rouge_l() const {
    return summarize_field(examples, [](const ExampleMetrics& e) { return e.rouge_l; });
}
MetricSummary EvalReport::answer_prob() const {
    return summarize_field(examples, [](const ExampleMetrics& e) { return e.answer_prob; });
}
MetricSummary EvalReport::pseudo_ppl() const {
    return summarize_field(examples, [](const ExampleMetrics& e) { return e.pseudo_ppl; });
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : examples) {
        per.push_back({{"index", e.index},
                       {"rouge_l", e.rouge_l},
                       {"answer_prob", e.answer_prob},
                       {"pseudo_ppl", e.pseudo_ppl},
                       {"generated", e.generated}});
    }
    return {{"split", split},
            {"examples", per},
            {"aggregates",
             {{"rouge_l", summary_json(rouge_l())},
              {"answer_prob", summary_json(answer_prob())},
              {"pseudo_ppl", summary_json(pseudo_ppl())}}},
            {"config",
             {{"answer_prob_samples", options.answer_prob_samples},
              {"ppl_samples", options.ppl_samples},
              {"seed", options.seed},
              {"num_steps", options.sampler.num_steps},
              {"temperature", options.sampler.temperature}}}};
}

EvalReport evaluate_split(const Denoiser& model, std::string split, std::span<const QAPair> pairs,
                          const EvalOptions& options) {
    EvalReport report;
    report.split = std::move(split);
    report.options = options;
    Rng master(options.seed);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Rng rng = master.split();
        const QAPair& pair = pairs[i];
        ExampleMetrics m;
        m.index = i;
        m.generated = generate(model, pair.prompt, pair.response.size(), options.sampler, rng).final_response;
        m.rouge_l = rouge_l(m.generated, pair.response);
        m.answer_prob = answer_probability(model, pair, options.answer_prob_samples, rng);
        m.pseudo_ppl = pseudo_ppl(model, pair, options.ppl_samples, rng);
        report.examples.push_back(std::move(m));
    }
    return report;
}

}  // namespace mdlm
