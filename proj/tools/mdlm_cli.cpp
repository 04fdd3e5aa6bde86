#include "mdlm/errors.hpp"
#include "mdlm/harness.hpp"
#include "mdlm/masking.hpp"
#include "mdlm/sampler.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mdlm;

namespace {

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", c.overrides, "override one key (key=value), repeatable");
    app->add_option("--seed", c.seed, "seed for the model, corpus and every training stream");
    app->add_option("--out", c.out, "output directory (relative paths resolve under $MDLM_OUTPUT_ROOT)");
}

RunConfig resolve(const Common& c) {
    RunConfig config = RunConfig::desk();
    if (!c.config_file.empty()) config.apply_file(c.config_file);
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) config.seed = *c.seed;
    if (!c.out.empty()) config.output_dir = c.out;
    if (const char* root = std::getenv("MDLM_OUTPUT_ROOT"); root && *root && config.output_dir.is_relative()) {
        config.output_dir = fs::path(root) / config.output_dir;
    }
    config.validate();
    return config;
}

// Model ids past the corpus vocabulary are printed as <id>.
std::string render(const Vocabulary& vocab, std::span<const TokenId> ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += ids[i] < vocab.size() ? vocab.word(ids[i]) : "<" + std::to_string(ids[i]) + ">";
    }
    return out;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out << text;
}

fs::path default_checkpoint(const RunConfig& config, const std::string& given) {
    return given.empty() ? config.output_dir / "sft.ckpt" : fs::path(given);
}

MaskPredictor load_required(const fs::path& path) {
    if (!fs::exists(path)) throw DependencyError("missing checkpoint " + path.string());
    return load_checkpoint(path);
}

std::set<TokenId> lexicon(const RunConfig& config, const Vocabulary& vocab) {
    fs::path path = config.lexicon_path;
    if (path.empty()) path = fs::path(MDLM_DATA_DIR) / "structural_lexicon.txt";
    return load_lexicon(path, vocab);
}

void print_summary(const EvalReport& r) {
    std::printf("%-7s rouge_l %.4f  answer_prob %.4f  pseudo_ppl(median) %.4f  n=%zu\n", r.split.c_str(),
                r.rouge_l().mean, r.answer_prob().mean, r.pseudo_ppl().median, r.examples.size());
}

std::vector<double> parse_doubles(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse tau list entry '" + item + "'");
        }
    }
    return out;
}

std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_method(item));
    return out;
}

// ---- diagnostics --------------------------------------------------------------

void diagnose_trajectory(const RunConfig& config, const fs::path& checkpoint, bool category) {
    const Corpus corpus = load_or_create_corpus(config);
    const MaskPredictor base = load_required(config.output_dir / "sft.ckpt");
    const MaskPredictor trained = load_required(checkpoint);
    const auto lex = lexicon(config, corpus.vocab);
    TrajectoryOptions opt;
    opt.sampler.num_steps = config.sampler_steps;
    std::vector<KlTrajectory> before, after;
    std::vector<std::vector<TokenRole>> roles;
    for (const QAPair& p : corpus.pairs(Split::kForget)) {
        after.push_back(token_kl_trajectory(trained, base, p, opt));
        roles.push_back(tag_token_roles(p, lex));
        if (category) before.push_back(token_kl_trajectory(base, base, p, opt));
    }
    const fs::path dir = config.output_dir / "diagnostics";
    if (!category) {
        std::ostringstream csv;
        write_trajectory_csv(csv, after, roles);
        write_file(dir / "trajectory.csv", csv.str());
        std::printf("wrote %s\n", (dir / "trajectory.csv").string().c_str());
        return;
    }
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [role, ch] : category_kl_aggregate(before, after, roles)) {
        auto opt_num = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        j[std::string(to_string(role))] = {{"before", opt_num(ch.before.mean)},
                                           {"after", opt_num(ch.after.mean)},
                                           {"count", ch.after.count},
                                           {"relative_change", opt_num(ch.relative_change)}};
        std::printf("%-16s before %-12.6g after %-12.6g relative %s\n", std::string(to_string(role)).c_str(),
                    ch.before.mean.value_or(NAN), ch.after.mean.value_or(NAN),
                    ch.relative_change ? std::to_string(*ch.relative_change).c_str() : "n/a");
    }
    write_file(dir / "category.json", j.dump(2) + "\n");
}

void diagnose_convergence(const RunConfig& config, const std::string& epochs_dir) {
    const Corpus corpus = load_or_create_corpus(config);
    const MaskPredictor base = load_required(config.output_dir / "sft.ckpt");
    fs::path dir = epochs_dir;
    if (dir.empty()) {
        dir = unlearn_checkpoint_path(config);
        dir.replace_extension();
        dir += "_epochs";
    }
    if (!fs::is_directory(dir)) {
        throw DependencyError("no per-epoch checkpoints in " + dir.string() +
                              " (run unlearn with unlearn.checkpoint_every > 0)");
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".ckpt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    const auto forget = corpus.pairs(Split::kForget);
    std::ostringstream csv;
    csv << "checkpoint,kl_base_conditional,kl_base_unconditional,kl_uniform\n";
    auto row = [&](const std::string& name, const MaskPredictor& m) {
        const ConvergencePoint p = convergence_point(m, base, forget, config.seed);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g\n", name.c_str(), p.kl_to_base_conditional,
                      p.kl_to_base_unconditional, p.kl_to_uniform);
        csv << buf;
        std::fputs(buf, stdout);
    };
    row("base", base);
    for (const auto& f : files) row(f.stem().string(), load_checkpoint(f));
    write_file(config.output_dir / "diagnostics" / "convergence.csv", csv.str());
}

void diagnose_rollout(const RunConfig& config, const fs::path& checkpoint, double t) {
    const Corpus corpus = load_or_create_corpus(config);
    const MaskPredictor model = load_required(checkpoint);
    Rng rng(config.seed);
    SamplerOptions opt;
    opt.num_steps = config.sampler_steps;
    std::ostringstream traces;
    for (const QAPair& p : corpus.pairs(Split::kForget)) {
        const MaskedState s = corrupt(p.prompt, p.response, t, model.mask_id(), rng);
        const DenoisingTrace tr = anchor_rollout(model, s, opt, rng);
        write_trace(traces, tr);
        std::printf("%s\n  masked: %s\n  rollout: %s\n", render(corpus.vocab, p.prompt).c_str(),
                    render(corpus.vocab, s.response).c_str(), render(corpus.vocab, tr.final_response).c_str());
    }
    write_file(config.output_dir / "diagnostics" / "rollout.jsonl", traces.str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked diffusion language model unlearning lab"};
    app.require_subcommand(1);

    Common common;
    auto* pretrain = app.add_subcommand("pretrain", "train the mask predictor on the full corpus");
    auto* sft = app.add_subcommand("sft", "fine-tune on prompt-response pairs");
    auto* unlearn = app.add_subcommand("unlearn", "unlearn the forget split from the sft checkpoint");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    auto* sample = app.add_subcommand("sample", "generate responses for prompts read from a file");
    auto* diagnose = app.add_subcommand("diagnose", "KL trajectories, convergence, categories, rollouts");
    auto* sweep_cmd = app.add_subcommand("sweep", "unlearning runs over tau and methods");
    for (auto* sub : {pretrain, sft, unlearn, eval, sample, diagnose, sweep_cmd}) add_common(sub, common);

    std::string method, checkpoint, split = "forget", prompt_file, kind, epochs_dir, trace_file;
    std::optional<double> tau, lambda;
    std::size_t length = 0;
    double rollout_t = 0.5;
    std::string taus = "0,0.25,0.5,0.75,1", methods = "mdu,ga,gd,npo,simnpo,wga,dpo";

    unlearn->add_option("--method", method, "mdu | ga | gd | npo | simnpo | wga | dpo");
    unlearn->add_option("--tau", tau, "anchor temperature in [0, 1]");
    unlearn->add_option("--lambda", lambda, "retain weight");

    eval->add_option("--split", split, "forget | retain | world");
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate (default: sft)");

    sample->add_option("--prompt-file", prompt_file, "one prompt per line")->required()->check(CLI::ExistingFile);
    sample->add_option("--checkpoint", checkpoint, "checkpoint (default: sft)");
    sample->add_option("--length", length, "response length (default: the corpus answer length)");
    sample->add_option("--trace", trace_file, "write denoising traces as JSONL");

    diagnose->add_option("--kind", kind, "trajectory | convergence | category | rollout")
        ->required()
        ->check(CLI::IsMember({"trajectory", "convergence", "category", "rollout"}));
    diagnose->add_option("--checkpoint", checkpoint, "trained checkpoint (default: sft)");
    diagnose->add_option("--epochs-dir", epochs_dir, "per-epoch checkpoints for --kind convergence");
    diagnose->add_option("--t", rollout_t, "masking rate for --kind rollout")->check(CLI::Range(0.0, 1.0));

    sweep_cmd->add_option("--taus", taus, "comma-separated tau values for mdu");
    sweep_cmd->add_option("--methods", methods, "comma-separated methods");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig config = resolve(common);
        if (!method.empty()) config.method = parse_method(method);
        if (tau) config.unlearn.tau = *tau;
        if (lambda) config.unlearn.lambda = *lambda;
        config.validate();

        if (pretrain->parsed() || sft->parsed() || unlearn->parsed()) {
            const Phase phase = pretrain->parsed() ? Phase::kPretrain : sft->parsed() ? Phase::kSft : Phase::kUnlearn;
            const RunLog log = run_phase(config, phase);
            if (!log.epochs.empty()) {
                std::printf("%s: %zu steps, final epoch mean loss %.6g\n", std::string(to_string(phase)).c_str(),
                            log.steps.size(), log.epochs.back().at("mean_loss").get<double>());
            }
            if (phase == Phase::kUnlearn) std::printf("wrote %s\n", unlearn_checkpoint_path(config).string().c_str());
        } else if (eval->parsed()) {
            const Split s = parse_split(split);
            const EvalReport r = run_eval(config, default_checkpoint(config, checkpoint), s);
            write_file(config.output_dir / ("eval_" + split + ".json"), r.to_json().dump(2) + "\n");
            print_summary(r);
        } else if (sample->parsed()) {
            const Corpus corpus = load_or_create_corpus(config);
            const MaskPredictor model = load_required(default_checkpoint(config, checkpoint));
            const std::size_t n = length ? length : 2 + config.corpus.value_length;
            std::ifstream in(prompt_file);
            std::ofstream traces;
            if (!trace_file.empty()) traces.open(trace_file);
            Rng rng(config.seed);
            SamplerOptions opt;
            opt.num_steps = config.sampler_steps;
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const DenoisingTrace tr = generate(model, corpus.vocab.encode(line), n, opt, rng);
                if (traces) write_trace(traces, tr);
                std::printf("%s -> %s\n", line.c_str(), render(corpus.vocab, tr.final_response).c_str());
            }
        } else if (diagnose->parsed()) {
            const fs::path ckpt = default_checkpoint(config, checkpoint);
            if (kind == "trajectory" || kind == "category") {
                diagnose_trajectory(config, ckpt, kind == "category");
            } else if (kind == "convergence") {
                diagnose_convergence(config, epochs_dir);
            } else {
                diagnose_rollout(config, ckpt, rollout_t);
            }
        } else if (sweep_cmd->parsed()) {
            const auto rows = sweep(config, parse_doubles(taus), parse_methods(methods));
            std::printf("%-8s %-6s %-8s %-8s %-8s %-10s %-10s\n", "method", "tau", "f_rouge", "r_rouge", "w_rouge",
                        "f_ppl_med", "r_ppl_med");
            for (const auto& r : rows) {
                std::printf("%-8s %-6s %-8.4f %-8.4f %-8.4f %-10.4g %-10.4g\n", r.method.c_str(),
                            r.tau ? std::to_string(*r.tau).substr(0, 4).c_str() : "-", r.forget_rouge.mean,
                            r.retain_rouge.mean, r.world_rouge.mean, r.forget_ppl.median, r.retain_ppl.median);
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
