#pragma once

#include "mdlm/corpus.hpp"
#include "mdlm/evaluation.hpp"
#include "mdlm/model.hpp"
#include "mdlm/objectives.hpp"
#include "mdlm/optimizer.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mdlm {

enum class Phase { kPretrain, kSft, kUnlearn, kEval, kDiagnose, kSample };

std::string_view to_string(Phase p);
Phase parse_phase(std::string_view name);

struct TrainSettings {
    double lr = 1e-3;
    std::size_t epochs = 1;
    std::size_t batch_size = 4;
    std::size_t grad_accum = 1;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    bool cosine = true;
    double clip_norm = 1.0;
    // Per-epoch checkpoints every this many epochs (0: final only).
    std::size_t checkpoint_every = 1;
    // SFT only: probability of replacing an example's prompt with the null
    // prompt, so the prompt-masked predictions keep tracking the response
    // marginal while the conditional is fitted.
    double prompt_dropout = 0.0;

    void validate(std::string_view phase) const;
    OptimizerSettings optimizer(std::size_t total_steps) const;
};

struct RunConfig {
    ModelConfig model;
    CorpusSpec corpus;
    TrainSettings pretrain;
    TrainSettings sft;
    // lr and clip_norm of the unlearning optimizer come from `unlearn`.
    TrainSettings unlearn_train;
    Method method = Method::kMdu;
    UnlearnConfig unlearn;
    std::size_t answer_prob_samples = kAnswerProbSamples;
    std::size_t ppl_samples = kPseudoPplSamples;
    std::size_t sampler_steps = 0;
    // Seeds the model initialisation, the corpus and every training stream.
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "runs/default";
    std::filesystem::path lexicon_path;

    // Desk-scale defaults used by the tools and the end-to-end checks.
    static RunConfig desk();

    // Applies one key = value setting. Throws ConfigError on an unknown key or
    // a malformed value.
    void set(std::string_view key, std::string_view value);
    // Flat text: one `key = value` per line, '#' comments, blank lines ignored.
    void apply_text(std::string_view text);
    void apply_file(const std::filesystem::path& path);
    std::string to_text() const;
    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::string phase;
    double loss = 0.0;
    double forget_term = 0.0;
    double retain_term = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<nlohmann::json> epochs;

    void write_jsonl(std::ostream& out) const;
};

// Called after every epoch (1-based) with the current model.
using EpochCallback = std::function<void(std::size_t epoch, const MaskPredictor& model)>;

// Masked-token training on prompt ++ response as one sequence.
MaskPredictor train_pretrain(MaskPredictor model, std::span<const QAPair> data, const TrainSettings& settings,
                             std::uint64_t seed, RunLog& log, const EpochCallback& on_epoch = {});

// Masked-token training on responses given prompts.
MaskPredictor train_sft(MaskPredictor model, std::span<const QAPair> data, const TrainSettings& settings,
                        std::uint64_t seed, RunLog& log, const EpochCallback& on_epoch = {});

struct UnlearnData {
    std::vector<QAPair> forget;
    std::vector<QAPair> retain;
    // DPO only: one substitute answer per forget pair.
    std::vector<TokenSequence> chosen;
};

// Freezes a copy of `model` as the anchor / reference, then trains with the
// chosen objective. Retain pairs are consumed round-robin, one per forget
// example. The anchor's fingerprint is verified after every epoch.
MaskPredictor train_unlearn(MaskPredictor model, Method method, const UnlearnConfig& config, const UnlearnData& data,
                            const TrainSettings& settings, std::uint64_t seed, RunLog& log,
                            const EpochCallback& on_epoch = {});

UnlearnData unlearn_data(const Corpus& corpus, Method method, std::uint64_t seed);

// ---- file-backed phases -------------------------------------------------------
// Layout under output_dir: config.txt, corpus.jsonl, pretrain.ckpt, sft.ckpt,
// unlearn/<method>_tau<t>.ckpt, <phase>_log.jsonl, per-epoch checkpoints in
// <phase>_epochs/, eval_<split>.json.

std::filesystem::path unlearn_checkpoint_path(const RunConfig& config);

// Corpus for a run: regenerated from the spec and checked against
// corpus.jsonl when that file exists.
Corpus load_or_create_corpus(const RunConfig& config);

// Runs pretrain, sft or unlearn. Throws DependencyError when the previous
// phase's checkpoint is missing.
RunLog run_phase(const RunConfig& config, Phase phase);

EvalReport run_eval(const RunConfig& config, const std::filesystem::path& checkpoint, Split split);

struct SweepRow {
    std::string method;
    std::optional<double> tau;
    std::filesystem::path checkpoint;
    MetricSummary forget_rouge, retain_rouge, world_rouge;
    MetricSummary forget_ppl, retain_ppl;
    MetricSummary forget_prob, retain_prob;

    nlohmann::json to_json() const;
};

// One unlearning run per (method, tau) cell from the shared sft checkpoint
// (tau only varies MDU), plus a base row for the sft model itself. Writes
// sweep/summary.json and sweep/summary.csv.
std::vector<SweepRow> sweep(const RunConfig& base, const std::vector<double>& taus,
                            const std::vector<Method>& methods);

SweepRow evaluate_row(const RunConfig& config, const MaskPredictor& model, std::string method,
                      std::optional<double> tau);

}  // namespace mdlm
