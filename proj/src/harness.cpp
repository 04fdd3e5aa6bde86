#include "mdlm/harness.hpp"

#include "mdlm/errors.hpp"
#include "mdlm/masking.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mdlm {

std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::kPretrain: return "pretrain";
        case Phase::kSft: return "sft";
        case Phase::kUnlearn: return "unlearn";
        case Phase::kEval: return "eval";
        case Phase::kDiagnose: return "diagnose";
        case Phase::kSample: return "sample";
    }
    return "?";
}

Phase parse_phase(std::string_view name) {
    for (Phase p : {Phase::kPretrain, Phase::kSft, Phase::kUnlearn, Phase::kEval, Phase::kDiagnose, Phase::kSample}) {
        if (to_string(p) == name) return p;
    }
    throw ConfigError("unknown phase '" + std::string(name) + "'");
}

void TrainSettings::validate(std::string_view phase) const {
    auto fail = [phase](const std::string& what) {
        throw ConfigError(std::string(phase) + ": " + what);
    };
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (grad_accum == 0) fail("grad_accum must be >= 1");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
    if (!(prompt_dropout >= 0.0 && prompt_dropout <= 1.0)) fail("prompt_dropout must lie in [0, 1]");
}

OptimizerSettings TrainSettings::optimizer(std::size_t total_steps) const {
    OptimizerSettings o;
    o.lr = lr;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.weight_decay = weight_decay;
    o.clip_norm = clip_norm;
    o.cosine = cosine;
    o.total_steps = total_steps;
    return o;
}

// ---- configuration ------------------------------------------------------------

namespace {

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
    }
    return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("config key '" + std::string(key) + "': expected a boolean, got '" + std::string(text) + "'");
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    std::string name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field field(std::string name, T& (*ref)(RunConfig&)) {
    Field f;
    f.name = name;
    f.set = [name, ref](RunConfig& c, std::string_view text) {
        T& slot = ref(c);
        if constexpr (std::is_same_v<T, bool>) {
            slot = parse_bool(name, text);
        } else if constexpr (std::is_same_v<T, Method>) {
            slot = parse_method(text);
        } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
            slot = std::filesystem::path(std::string(text));
        } else {
            slot = parse_number<T>(name, text);
        }
    };
    f.get = [ref](const RunConfig& c) -> std::string {
        const T& slot = ref(const_cast<RunConfig&>(c));
        if constexpr (std::is_same_v<T, bool>) {
            return slot ? "true" : "false";
        } else if constexpr (std::is_same_v<T, Method>) {
            return std::string(to_string(slot));
        } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
            return slot.string();
        } else if constexpr (std::is_floating_point_v<T>) {
            return format_double(slot);
        } else {
            return std::to_string(slot);
        }
    };
    return f;
}

#define MDLM_FIELD(key, type, expr) field<type>(key, +[](RunConfig& c) -> type& { return expr; })

void add_train_fields(std::vector<Field>& out, const std::string& prefix, TrainSettings& (*ts)(RunConfig&),
                      bool with_optimizer) {
    auto add = [&](const std::string& key, auto member) {
        using T = std::remove_reference_t<decltype(std::declval<TrainSettings&>().*member)>;
        Field f;
        f.name = prefix + "." + key;
        const std::string name = f.name;
        f.set = [name, ts, member](RunConfig& c, std::string_view text) {
            T& slot = ts(c).*member;
            if constexpr (std::is_same_v<T, bool>) {
                slot = parse_bool(name, text);
            } else {
                slot = parse_number<T>(name, text);
            }
        };
        f.get = [ts, member](const RunConfig& c) -> std::string {
            const T& slot = ts(const_cast<RunConfig&>(c)).*member;
            if constexpr (std::is_same_v<T, bool>) {
                return slot ? "true" : "false";
            } else if constexpr (std::is_floating_point_v<T>) {
                return format_double(slot);
            } else {
                return std::to_string(slot);
            }
        };
        out.push_back(std::move(f));
    };
    if (with_optimizer) {
        add("lr", &TrainSettings::lr);
        add("clip_norm", &TrainSettings::clip_norm);
    }
    add("epochs", &TrainSettings::epochs);
    add("batch_size", &TrainSettings::batch_size);
    add("grad_accum", &TrainSettings::grad_accum);
    add("weight_decay", &TrainSettings::weight_decay);
    add("beta1", &TrainSettings::beta1);
    add("beta2", &TrainSettings::beta2);
    add("cosine", &TrainSettings::cosine);
    add("checkpoint_every", &TrainSettings::checkpoint_every);
    add("prompt_dropout", &TrainSettings::prompt_dropout);
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f = {
            MDLM_FIELD("seed", std::uint64_t, c.seed),
            MDLM_FIELD("output_dir", std::filesystem::path, c.output_dir),
            MDLM_FIELD("lexicon_path", std::filesystem::path, c.lexicon_path),
            MDLM_FIELD("model.vocab_size", std::size_t, c.model.vocab_size),
            MDLM_FIELD("model.d_model", std::size_t, c.model.d_model),
            MDLM_FIELD("model.n_layers", std::size_t, c.model.n_layers),
            MDLM_FIELD("model.n_heads", std::size_t, c.model.n_heads),
            MDLM_FIELD("model.d_ff", std::size_t, c.model.d_ff),
            MDLM_FIELD("model.max_len", std::size_t, c.model.max_len),
            MDLM_FIELD("model.init_std", double, c.model.init_std),
            MDLM_FIELD("corpus.num_entities", std::size_t, c.corpus.num_entities),
            MDLM_FIELD("corpus.attributes_per_entity", std::size_t, c.corpus.attributes_per_entity),
            MDLM_FIELD("corpus.forget_fraction", double, c.corpus.forget_fraction),
            MDLM_FIELD("corpus.value_length", std::size_t, c.corpus.value_length),
            MDLM_FIELD("corpus.forget_pool_size", std::size_t, c.corpus.forget_pool_size),
            MDLM_FIELD("corpus.retain_pool_size", std::size_t, c.corpus.retain_pool_size),
            MDLM_FIELD("corpus.num_first_names", std::size_t, c.corpus.num_first_names),
            MDLM_FIELD("corpus.num_last_names", std::size_t, c.corpus.num_last_names),
            MDLM_FIELD("corpus.world_facts", std::size_t, c.corpus.world_facts),
            MDLM_FIELD("method", Method, c.method),
            MDLM_FIELD("tau", double, c.unlearn.tau),
            MDLM_FIELD("lambda", double, c.unlearn.lambda),
            MDLM_FIELD("beta", double, c.unlearn.beta),
            MDLM_FIELD("dpo_beta", double, c.unlearn.dpo_beta),
            MDLM_FIELD("gamma", double, c.unlearn.gamma),
            MDLM_FIELD("delta", double, c.unlearn.delta),
            MDLM_FIELD("unlearn.lr", double, c.unlearn.lr),
            MDLM_FIELD("unlearn.clip_norm", double, c.unlearn.clip_norm),
            MDLM_FIELD("unlearn.steps", std::size_t, c.unlearn.steps),
            MDLM_FIELD("eval.answer_prob_samples", std::size_t, c.answer_prob_samples),
            MDLM_FIELD("eval.ppl_samples", std::size_t, c.ppl_samples),
            MDLM_FIELD("eval.sampler_steps", std::size_t, c.sampler_steps),
        };
        add_train_fields(f, "pretrain", +[](RunConfig& c) -> TrainSettings& { return c.pretrain; }, true);
        add_train_fields(f, "sft", +[](RunConfig& c) -> TrainSettings& { return c.sft; }, true);
        add_train_fields(f, "unlearn", +[](RunConfig& c) -> TrainSettings& { return c.unlearn_train; }, false);
        return f;
    }();
    return table;
}

#undef MDLM_FIELD

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::desk() {
    RunConfig c;
    c.model.vocab_size = 128;
    c.model.d_model = 64;
    c.model.n_layers = 2;
    c.model.n_heads = 4;
    c.model.d_ff = 256;
    c.model.max_len = 64;
    c.corpus.value_length = 4;

    c.pretrain.lr = 3e-3;
    c.pretrain.epochs = 60;
    c.pretrain.checkpoint_every = 0;
    c.sft.lr = 3e-3;
    c.sft.epochs = 250;
    c.sft.prompt_dropout = 0.2;
    c.sft.checkpoint_every = 0;

    c.unlearn_train.epochs = 400;
    c.unlearn_train.checkpoint_every = 0;
    c.unlearn.lr = 1e-3;
    return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
    for (const auto& f : fields()) {
        if (f.name == key) {
            f.set(*this, trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string_view l = trim(line);
        if (l.empty()) continue;
        const auto eq = l.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        set(trim(l.substr(0, eq)), trim(l.substr(eq + 1)));
    }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str());
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) {
        out += f.name + " = " + f.get(*this) + "\n";
    }
    return out;
}

void RunConfig::validate() const {
    ModelConfig m = model;
    m.seed = seed;
    m.validate();
    corpus.validate();
    pretrain.validate("pretrain");
    sft.validate("sft");
    unlearn_train.validate("unlearn");
    unlearn.validate();
    if (answer_prob_samples == 0 || ppl_samples == 0) {
        throw ConfigError("eval sample counts must be >= 1");
    }
}

// ---- logs -------------------------------------------------------------------------

nlohmann::json StepRecord::to_json() const {
    return {{"step", step},       {"epoch", epoch},         {"phase", phase},
            {"loss", loss},       {"forget_term", forget_term}, {"retain_term", retain_term},
            {"grad_norm", grad_norm}, {"lr", lr},           {"seed", seed}};
}

void RunLog::write_jsonl(std::ostream& out) const {
    for (const auto& s : steps) out << s.to_json().dump() << '\n';
    for (const auto& e : epochs) out << e.dump() << '\n';
}

// ---- training loops ---------------------------------------------------------------

namespace {

// Per-example work: accumulates weighted gradients, returns the unscaled
// loss terms, or nothing if the example was skipped.
using ExampleFn = std::function<std::optional<LossBreakdown>(std::size_t index, Rng& rng, double weight)>;

void run_epochs(MaskPredictor& model, std::size_t n, const TrainSettings& settings, OptimizerSettings opt_settings,
                std::size_t max_steps, std::uint64_t seed, const std::string& phase, RunLog& log,
                const EpochCallback& on_epoch, const ExampleFn& fn,
                const std::function<void(std::size_t)>& after_epoch = {}) {
    settings.validate(phase);
    if (settings.epochs == 0) {
        return;
    }
    if (n == 0) {
        throw InputError(phase + ": no training examples");
    }
    const std::size_t group = settings.batch_size * settings.grad_accum;
    const std::size_t per_epoch = (n + group - 1) / group;
    std::size_t total = settings.epochs * per_epoch;
    if (max_steps > 0) total = std::min(total, max_steps);
    opt_settings.total_steps = total;
    AdamW opt(opt_settings);
    Rng rng(seed);
    auto params = model.parameters();
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= settings.epochs && step < total; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < n && step < total; start += group) {
            const std::size_t end = std::min(n, start + group);
            const double weight = 1.0 / static_cast<double>(end - start);
            model.zero_grads();
            LossBreakdown sum;
            std::size_t used = 0;
            for (std::size_t i = start; i < end; ++i) {
                if (auto r = fn(order[i], rng, weight)) {
                    sum.total += r->total;
                    sum.forget_term += r->forget_term;
                    sum.retain_term += r->retain_term;
                    ++used;
                }
            }
            if (used == 0) continue;
            const StepStats stats = opt.step(params, phase);
            const double u = static_cast<double>(used);
            log.steps.push_back({step, epoch, phase, sum.total / u, sum.forget_term / u, sum.retain_term / u,
                                 stats.grad_norm, stats.lr, seed});
            epoch_loss += sum.total;
            epoch_count += used;
            ++step;
        }
        model.zero_grads();
        log.epochs.push_back({{"phase", phase},
                              {"epoch", epoch},
                              {"mean_loss", epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0},
                              {"seed", seed}});
        if (after_epoch) after_epoch(epoch);
        if (on_epoch) on_epoch(epoch, model);
    }
}

void check_fits(const MaskPredictor& model, std::span<const QAPair> data) {
    for (const auto& p : data) {
        if (p.prompt.size() + p.response.size() > model.config().max_len) {
            throw ConfigError("training sequence longer than model max_len");
        }
    }
}

}  // namespace

MaskPredictor train_pretrain(MaskPredictor model, std::span<const QAPair> data, const TrainSettings& settings,
                             std::uint64_t seed, RunLog& log, const EpochCallback& on_epoch) {
    check_fits(model, data);
    const TokenId mask = model.mask_id();
    run_epochs(model, data.size(), settings, settings.optimizer(0), 0, seed, "pretrain", log, on_epoch,
               [&](std::size_t idx, Rng& rng, double w) -> std::optional<LossBreakdown> {
                   const TokenSequence seq = join(data[idx].prompt, data[idx].response);
                   const MaskedState s = sample_training_state({}, seq, mask, rng);
                   Graph g;
                   auto loss = pretrain_loss(g, model, seq, s);
                   if (!loss) return std::nullopt;
                   const double v = loss->item();
                   g.backward(scale(*loss, w));
                   return LossBreakdown{v, v, 0.0, {}, false};
               });
    return model;
}

MaskPredictor train_sft(MaskPredictor model, std::span<const QAPair> data, const TrainSettings& settings,
                        std::uint64_t seed, RunLog& log, const EpochCallback& on_epoch) {
    check_fits(model, data);
    const TokenId mask = model.mask_id();
    run_epochs(model, data.size(), settings, settings.optimizer(0), 0, seed, "sft", log, on_epoch,
               [&](std::size_t idx, Rng& rng, double w) -> std::optional<LossBreakdown> {
                   const QAPair& p = data[idx];
                   MaskedState s = sample_training_state(p.prompt, p.response, mask, rng);
                   if (settings.prompt_dropout > 0.0 && rng.uniform() < settings.prompt_dropout) {
                       s = mask_prompt(s, mask);
                   }
                   Graph g;
                   auto loss = sft_loss(g, model, p.response, s);
                   if (!loss) return std::nullopt;
                   const double v = loss->item();
                   g.backward(scale(*loss, w));
                   return LossBreakdown{v, v, 0.0, {}, false};
               });
    return model;
}

MaskPredictor train_unlearn(MaskPredictor model, Method method, const UnlearnConfig& config, const UnlearnData& data,
                            const TrainSettings& settings, std::uint64_t seed, RunLog& log,
                            const EpochCallback& on_epoch) {
    config.validate();
    if (method == Method::kDpo && data.chosen.size() != data.forget.size()) {
        throw InputError("dpo needs one chosen response per forget pair");
    }
    check_fits(model, data.forget);
    const MaskPredictor frozen = model.freeze();
    const std::uint64_t anchor_fp = frozen.fingerprint();
    OptimizerSettings opt = settings.optimizer(0);
    opt.lr = config.lr;
    opt.clip_norm = config.clip_norm;
    std::size_t retain_cursor = 0;
    const std::string phase = "unlearn_" + std::string(to_string(method));
    run_epochs(
        model, data.forget.size(), settings, opt, config.steps, seed, phase, log, on_epoch,
        [&](std::size_t idx, Rng& rng, double w) -> std::optional<LossBreakdown> {
            UnlearnExample ex{data.forget[idx], std::nullopt, std::nullopt};
            if (!data.retain.empty()) {
                ex.retain = data.retain[retain_cursor++ % data.retain.size()];
            }
            if (method == Method::kDpo) ex.chosen = data.chosen[idx];
            LossBreakdown b = accumulate_unlearning_gradients(method, model, frozen, ex, config, rng, w);
            if (b.skipped) return std::nullopt;
            return b;
        },
        [&](std::size_t epoch) {
            if (frozen.fingerprint() != anchor_fp) {
                throw ContractError("anchor parameters changed during unlearning (epoch " + std::to_string(epoch) +
                                    ")");
            }
        });
    return model;
}

UnlearnData unlearn_data(const Corpus& corpus, Method method, std::uint64_t seed) {
    UnlearnData d;
    d.forget = corpus.pairs(Split::kForget);
    d.retain = corpus.pairs(Split::kRetain);
    if (method == Method::kDpo) {
        Rng rng(seed);
        const auto forget = corpus.split(Split::kForget);
        for (auto& t : make_dpo_pairs(forget, rng)) d.chosen.push_back(std::move(t.chosen));
    }
    return d;
}

// ---- file-backed phases -------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::string tau_label(double tau) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", tau);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out << text;
}

MaskPredictor require_checkpoint(const fs::path& path, std::string_view produced_by) {
    if (!fs::exists(path)) {
        throw DependencyError("missing checkpoint " + path.string() + " (run `" + std::string(produced_by) +
                              "` first)");
    }
    return load_checkpoint(path);
}

EpochCallback epoch_saver(const fs::path& dir, std::size_t every) {
    if (every == 0) return {};
    return [dir, every](std::size_t epoch, const MaskPredictor& m) {
        if (epoch % every != 0) return;
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
        fs::create_directories(dir);
        save_checkpoint(m, dir / name);
    };
}

void write_log(const fs::path& path, const RunLog& log) {
    std::ostringstream out;
    log.write_jsonl(out);
    write_text(path, out.str());
}

ModelConfig model_config(const RunConfig& c) {
    ModelConfig m = c.model;
    m.seed = c.seed;
    m.mask_id = Vocabulary::kMask;
    m.pad_id = Vocabulary::kPad;
    return m;
}

CorpusSpec corpus_spec(const RunConfig& c) {
    CorpusSpec s = c.corpus;
    s.seed = c.seed;
    s.vocab_limit = c.model.vocab_size;
    return s;
}

}  // namespace

fs::path unlearn_checkpoint_path(const RunConfig& config) {
    std::string name = std::string(to_string(config.method));
    if (config.method == Method::kMdu) name += "_tau" + tau_label(config.unlearn.tau);
    return config.output_dir / "unlearn" / (name + ".ckpt");
}

Corpus load_or_create_corpus(const RunConfig& config) {
    Corpus corpus = generate_corpus(corpus_spec(config));
    const fs::path path = config.output_dir / "corpus.jsonl";
    std::ostringstream fresh;
    write_corpus_jsonl(fresh, corpus);
    if (fs::exists(path)) {
        std::ifstream in(path);
        std::ostringstream existing;
        existing << in.rdbuf();
        if (existing.str() != fresh.str()) {
            throw DependencyError(path.string() + " was generated with a different corpus spec or seed");
        }
    } else {
        write_text(path, fresh.str());
    }
    return corpus;
}

RunLog run_phase(const RunConfig& config, Phase phase) {
    config.validate();
    fs::create_directories(config.output_dir);
    write_text(config.output_dir / "config.txt", config.to_text());
    const Corpus corpus = load_or_create_corpus(config);
    RunLog log;
    switch (phase) {
        case Phase::kPretrain: {
            MaskPredictor m = MaskPredictor::init(model_config(config));
            m = train_pretrain(std::move(m), corpus.all_pairs(), config.pretrain, config.seed, log,
                               epoch_saver(config.output_dir / "pretrain_epochs", config.pretrain.checkpoint_every));
            save_checkpoint(m, config.output_dir / "pretrain.ckpt");
            write_log(config.output_dir / "pretrain_log.jsonl", log);
            break;
        }
        case Phase::kSft: {
            MaskPredictor m = require_checkpoint(config.output_dir / "pretrain.ckpt", "pretrain");
            m = train_sft(std::move(m), corpus.all_pairs(), config.sft, config.seed, log,
                          epoch_saver(config.output_dir / "sft_epochs", config.sft.checkpoint_every));
            save_checkpoint(m, config.output_dir / "sft.ckpt");
            write_log(config.output_dir / "sft_log.jsonl", log);
            break;
        }
        case Phase::kUnlearn: {
            MaskPredictor m = require_checkpoint(config.output_dir / "sft.ckpt", "sft");
            const fs::path out = unlearn_checkpoint_path(config);
            fs::path epochs_dir = out;
            epochs_dir.replace_extension();
            epochs_dir += "_epochs";
            m = train_unlearn(std::move(m), config.method, config.unlearn,
                              unlearn_data(corpus, config.method, config.seed), config.unlearn_train, config.seed, log,
                              epoch_saver(epochs_dir, config.unlearn_train.checkpoint_every));
            fs::create_directories(out.parent_path());
            save_checkpoint(m, out);
            fs::path log_path = out;
            log_path.replace_extension(".log.jsonl");
            write_log(log_path, log);
            break;
        }
        default:
            throw ConfigError("run_phase handles pretrain, sft and unlearn; got " + std::string(to_string(phase)));
    }
    return log;
}

EvalReport run_eval(const RunConfig& config, const fs::path& checkpoint, Split split) {
    const Corpus corpus = load_or_create_corpus(config);
    const MaskPredictor model = require_checkpoint(checkpoint, "sft");
    EvalOptions opt;
    opt.answer_prob_samples = config.answer_prob_samples;
    opt.ppl_samples = config.ppl_samples;
    opt.seed = config.seed;
    opt.sampler.num_steps = config.sampler_steps;
    const auto pairs = corpus.pairs(split);
    return evaluate_split(model, std::string(to_string(split)), pairs, opt);
}

nlohmann::json SweepRow::to_json() const {
    auto s = [](const MetricSummary& m) { return nlohmann::json{{"mean", m.mean}, {"median", m.median}}; };
    return {{"method", method},
            {"tau", tau ? nlohmann::json(*tau) : nlohmann::json(nullptr)},
            {"checkpoint", checkpoint.string()},
            {"forget_rouge_l", s(forget_rouge)},
            {"retain_rouge_l", s(retain_rouge)},
            {"world_rouge_l", s(world_rouge)},
            {"forget_answer_prob", s(forget_prob)},
            {"retain_answer_prob", s(retain_prob)},
            {"forget_pseudo_ppl", s(forget_ppl)},
            {"retain_pseudo_ppl", s(retain_ppl)}};
}

SweepRow evaluate_row(const RunConfig& config, const MaskPredictor& model, std::string method,
                      std::optional<double> tau) {
    const Corpus corpus = generate_corpus(corpus_spec(config));
    EvalOptions opt;
    opt.answer_prob_samples = config.answer_prob_samples;
    opt.ppl_samples = config.ppl_samples;
    opt.seed = config.seed;
    opt.sampler.num_steps = config.sampler_steps;
    SweepRow row;
    row.method = std::move(method);
    row.tau = tau;
    const auto forget = evaluate_split(model, "forget", corpus.pairs(Split::kForget), opt);
    const auto retain = evaluate_split(model, "retain", corpus.pairs(Split::kRetain), opt);
    const auto world = evaluate_split(model, "world", corpus.pairs(Split::kWorld), opt);
    row.forget_rouge = forget.rouge_l();
    row.retain_rouge = retain.rouge_l();
    row.world_rouge = world.rouge_l();
    row.forget_prob = forget.answer_prob();
    row.retain_prob = retain.answer_prob();
    row.forget_ppl = forget.pseudo_ppl();
    row.retain_ppl = retain.pseudo_ppl();
    return row;
}

std::vector<SweepRow> sweep(const RunConfig& base, const std::vector<double>& taus,
                            const std::vector<Method>& methods) {
    base.validate();
    const fs::path sft_path = base.output_dir / "sft.ckpt";
    const MaskPredictor sft = require_checkpoint(sft_path, "sft");
    std::vector<SweepRow> rows;
    rows.push_back(evaluate_row(base, sft, "base", std::nullopt));
    rows.back().checkpoint = sft_path;
    for (Method method : methods) {
        std::vector<std::optional<double>> cells;
        if (method == Method::kMdu) {
            for (double t : taus) cells.emplace_back(t);
        } else {
            cells.emplace_back(std::nullopt);
        }
        for (const auto& tau : cells) {
            RunConfig c = base;
            c.method = method;
            if (tau) c.unlearn.tau = *tau;
            run_phase(c, Phase::kUnlearn);
            const fs::path ckpt = unlearn_checkpoint_path(c);
            rows.push_back(evaluate_row(c, load_checkpoint(ckpt), std::string(to_string(method)), tau));
            rows.back().checkpoint = ckpt;
        }
    }
    nlohmann::json summary = nlohmann::json::array();
    std::ostringstream csv;
    csv << "method,tau,forget_rouge_l,retain_rouge_l,world_rouge_l,forget_answer_prob,retain_answer_prob,"
           "forget_ppl_median,retain_ppl_median,checkpoint\n";
    for (const auto& r : rows) {
        summary.push_back(r.to_json());
        csv << r.method << ',' << (r.tau ? format_double(*r.tau) : "") << ',' << format_double(r.forget_rouge.mean)
            << ',' << format_double(r.retain_rouge.mean) << ',' << format_double(r.world_rouge.mean) << ','
            << format_double(r.forget_prob.mean) << ',' << format_double(r.retain_prob.mean) << ','
            << format_double(r.forget_ppl.median) << ',' << format_double(r.retain_ppl.median) << ','
            << r.checkpoint.string() << '\n';
    }
    write_text(base.output_dir / "sweep" / "summary.json", summary.dump(2) + "\n");
    write_text(base.output_dir / "sweep" / "summary.csv", csv.str());
    return rows;
}

}  // namespace mdlm
