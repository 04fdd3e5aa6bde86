#include "mdlm/model.hpp"

#include "mdlm/errors.hpp"
#include "mdlm/rng.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace mdlm {

VocabDistribution LogProbMatrix::probs(std::size_t r) const {
    VocabDistribution out(vocab);
    for (std::size_t v = 0; v < vocab; ++v) {
        out[v] = std::exp(at(r, v));
    }
    return out;
}

TokenSequence join(std::span<const TokenId> prompt, std::span<const TokenId> response) {
    TokenSequence out;
    out.reserve(prompt.size() + response.size());
    out.insert(out.end(), prompt.begin(), prompt.end());
    out.insert(out.end(), response.begin(), response.end());
    return out;
}

void ModelConfig::validate() const {
    if (vocab_size < 3) {
        throw ConfigError("vocab_size must leave room for MASK, PAD and at least one token");
    }
    if (mask_id == pad_id) {
        throw ConfigError("MASK and PAD ids must differ");
    }
    if (mask_id >= vocab_size || pad_id >= vocab_size) {
        throw ConfigError("MASK/PAD ids must be < vocab_size");
    }
    if (d_model == 0 || n_heads == 0 || d_ff == 0 || max_len == 0) {
        throw ConfigError("d_model, n_heads, d_ff and max_len must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (!(init_std >= 0.0) || !std::isfinite(init_std)) {
        throw ConfigError("init_std must be finite and non-negative");
    }
}

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
    return a.vocab_size == b.vocab_size && a.d_model == b.d_model && a.n_layers == b.n_layers &&
           a.n_heads == b.n_heads && a.d_ff == b.d_ff && a.max_len == b.max_len && a.mask_id == b.mask_id &&
           a.pad_id == b.pad_id;
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t per_layer = 2 * d                 // ln1
                                  + d * 3 * d + 3 * d   // qkv
                                  + d * d + d           // output projection
                                  + 2 * d               // ln2
                                  + d * c.d_ff + c.d_ff // ff1
                                  + c.d_ff * d + d;     // ff2
    return c.vocab_size * d + c.max_len * d + c.n_layers * per_layer + 2 * d + d * c.vocab_size + c.vocab_size;
}

template <class Self, class Fn>
void MaskPredictor::visit(Self& self, Fn&& fn) {
    fn("tok_emb", self.tok_emb_);
    fn("pos_emb", self.pos_emb_);
    for (std::size_t i = 0; i < self.layers_.size(); ++i) {
        auto& l = self.layers_[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        fn(p + "ln1.gamma", l.ln1_gamma);
        fn(p + "ln1.beta", l.ln1_beta);
        fn(p + "attn.w_qkv", l.w_qkv);
        fn(p + "attn.b_qkv", l.b_qkv);
        fn(p + "attn.w_proj", l.w_proj);
        fn(p + "attn.b_proj", l.b_proj);
        fn(p + "ln2.gamma", l.ln2_gamma);
        fn(p + "ln2.beta", l.ln2_beta);
        fn(p + "ff.w1", l.w_ff1);
        fn(p + "ff.b1", l.b_ff1);
        fn(p + "ff.w2", l.w_ff2);
        fn(p + "ff.b2", l.b_ff2);
    }
    fn("head.ln.gamma", self.head_gamma_);
    fn("head.ln.beta", self.head_beta_);
    fn("head.w", self.head_w_);
    fn("head.b", self.head_b_);
}

MaskPredictor MaskPredictor::init(const ModelConfig& config) {
    config.validate();
    MaskPredictor m;
    m.config_ = config;
    const std::size_t d = config.d_model;
    Rng rng(config.seed);
    auto normal = [&](Shape shape) {
        Tensor t(std::move(shape), true);
        for (double& v : t.values()) {
            v = config.init_std * rng.normal();
        }
        return t;
    };
    auto filled = [](Shape shape, double v) {
        Tensor t(std::move(shape), true);
        for (double& x : t.values()) {
            x = v;
        }
        return t;
    };
    m.tok_emb_ = normal({config.vocab_size, d});
    m.pos_emb_ = normal({config.max_len, d});
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        Layer l;
        l.ln1_gamma = filled({1, d}, 1.0);
        l.ln1_beta = filled({1, d}, 0.0);
        l.w_qkv = normal({d, 3 * d});
        l.b_qkv = filled({1, 3 * d}, 0.0);
        l.w_proj = normal({d, d});
        l.b_proj = filled({1, d}, 0.0);
        l.ln2_gamma = filled({1, d}, 1.0);
        l.ln2_beta = filled({1, d}, 0.0);
        l.w_ff1 = normal({d, config.d_ff});
        l.b_ff1 = filled({1, config.d_ff}, 0.0);
        l.w_ff2 = normal({config.d_ff, d});
        l.b_ff2 = filled({1, d}, 0.0);
        m.layers_.push_back(std::move(l));
    }
    m.head_gamma_ = filled({1, d}, 1.0);
    m.head_beta_ = filled({1, d}, 0.0);
    m.head_w_ = normal({d, config.vocab_size});
    m.head_b_ = filled({1, config.vocab_size}, 0.0);
    return m;
}

template <class Self>
Var MaskPredictor::build(Self& self, Graph& g, std::span<const TokenId> tokens,
                         std::span<const std::size_t> positions, const ForwardOptions& options) {
    const ModelConfig& c = self.config_;
    const std::size_t len = tokens.size();
    if (len == 0) {
        throw InputError("forward: empty sequence");
    }
    if (len > c.max_len) {
        throw InputError("forward: sequence length " + std::to_string(len) + " exceeds max_len " +
                         std::to_string(c.max_len));
    }
    if (options.prompt_len > len) {
        throw InputError("forward: prompt_len exceeds sequence length");
    }
    std::vector<std::size_t> ids(len);
    std::vector<std::size_t> pos(len);
    std::vector<char> key_allowed(len, 1);
    for (std::size_t i = 0; i < len; ++i) {
        if (tokens[i] >= c.vocab_size) {
            throw InputError("forward: token id " + std::to_string(tokens[i]) + " out of range");
        }
        ids[i] = tokens[i];
        pos[i] = i;
        if (tokens[i] == c.pad_id || (options.block_prompt_keys && i < options.prompt_len)) {
            key_allowed[i] = 0;
        }
    }

    Var x = add(embedding(g.parameter(self.tok_emb_), ids), embedding(g.parameter(self.pos_emb_), pos));
    for (auto& l : self.layers_) {
        Var h = layer_norm(x, g.parameter(l.ln1_gamma), g.parameter(l.ln1_beta));
        Var qkv = add_row(matmul(h, g.parameter(l.w_qkv)), g.parameter(l.b_qkv));
        Var att = multi_head_attention(qkv, c.n_heads, key_allowed);
        x = add(x, add_row(matmul(att, g.parameter(l.w_proj)), g.parameter(l.b_proj)));
        Var h2 = layer_norm(x, g.parameter(l.ln2_gamma), g.parameter(l.ln2_beta));
        Var ff = gelu(add_row(matmul(h2, g.parameter(l.w_ff1)), g.parameter(l.b_ff1)));
        x = add(x, add_row(matmul(ff, g.parameter(l.w_ff2)), g.parameter(l.b_ff2)));
    }
    if (!positions.empty()) {
        x = select_rows(x, positions);
    }
    Var hf = layer_norm(x, g.parameter(self.head_gamma_), g.parameter(self.head_beta_));
    Var logits = add_row(matmul(hf, g.parameter(self.head_w_)), g.parameter(self.head_b_));
    return log_softmax_rows(logits);
}

Var MaskPredictor::log_probs(Graph& g, std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                             const ForwardOptions& options) {
    return build(*this, g, tokens, positions, options);
}

Var MaskPredictor::log_probs(Graph& g, std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                             const ForwardOptions& options) const {
    return build(*this, g, tokens, positions, options);
}

LogProbMatrix MaskPredictor::predict(std::span<const TokenId> tokens, const ForwardOptions& options) const {
    Graph g(Graph::Mode::kInference);
    Var lp = log_probs(g, tokens, {}, options);
    auto v = lp.value();
    return LogProbMatrix{lp.rows(), lp.cols(), std::vector<double>(v.begin(), v.end())};
}

std::vector<VocabDistribution> MaskPredictor::forward(std::span<const TokenId> tokens,
                                                      const ForwardOptions& options) const {
    const LogProbMatrix lp = predict(tokens, options);
    std::vector<VocabDistribution> out;
    out.reserve(lp.rows);
    for (std::size_t r = 0; r < lp.rows; ++r) {
        out.push_back(lp.probs(r));
    }
    return out;
}

MaskPredictor MaskPredictor::freeze() const {
    MaskPredictor copy = *this;
    copy.frozen_ = true;
    visit(copy, [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
    return copy;
}

std::vector<std::pair<std::string, Tensor*>> MaskPredictor::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit(*this, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> MaskPredictor::named_parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<Tensor*> MaskPredictor::parameters() {
    std::vector<Tensor*> out;
    visit(*this, [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

std::size_t MaskPredictor::num_parameters() const {
    std::size_t n = 0;
    visit(*this, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

void MaskPredictor::zero_grads() {
    visit(*this, [](const std::string&, Tensor& t) { t.zero_grad(); });
}

bool MaskPredictor::bit_equal(const MaskPredictor& other) const {
    if (!(config_ == other.config_)) {
        return false;
    }
    auto a = named_parameters();
    auto b = other.named_parameters();
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first || !a[i].second->bit_equal(*b[i].second)) {
            return false;
        }
    }
    return true;
}

std::uint64_t MaskPredictor::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : named_parameters()) {
        mix(name.data(), name.size());
        mix(t->values().data(), t->size() * sizeof(double));
    }
    return h;
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'D', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class Writer {
public:
    template <class T>
    void put(T v) {
        v = to_little(v);
        const auto* p = reinterpret_cast<const char*>(&v);
        out_.insert(out_.end(), p, p + sizeof(T));
    }
    void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void put_bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
    std::vector<char> take() { return std::move(out_); }

private:
    std::vector<char> out_;
};

class Reader {
public:
    explicit Reader(std::span<const char> in) : in_(in) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }
    double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s(in_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) {
            throw CheckpointError("checkpoint truncated");
        }
    }
    std::span<const char> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> serialize_checkpoint(const MaskPredictor& model) {
    Writer w;
    w.put_bytes(kMagic, sizeof(kMagic));
    w.put(kVersion);
    const ModelConfig& c = model.config();
    for (std::uint64_t v : {std::uint64_t(c.vocab_size), std::uint64_t(c.d_model), std::uint64_t(c.n_layers),
                            std::uint64_t(c.n_heads), std::uint64_t(c.d_ff), std::uint64_t(c.max_len), c.seed,
                            std::uint64_t(c.mask_id), std::uint64_t(c.pad_id)}) {
        w.put(v);
    }
    w.put_f64(c.init_std);
    auto params = model.named_parameters();
    w.put(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        w.put(static_cast<std::uint32_t>(name.size()));
        w.put_bytes(name.data(), name.size());
        w.put(static_cast<std::uint32_t>(t->shape().size()));
        for (auto dim : t->shape()) {
            w.put(static_cast<std::uint64_t>(dim));
        }
        for (double v : t->values()) {
            w.put_f64(v);
        }
    }
    return w.take();
}

MaskPredictor deserialize_checkpoint(std::span<const char> bytes) {
    Reader r(bytes);
    if (r.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw CheckpointError("not a checkpoint (bad magic)");
    }
    if (const auto version = r.get<std::uint32_t>(); version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig c;
    c.vocab_size = r.get<std::uint64_t>();
    c.d_model = r.get<std::uint64_t>();
    c.n_layers = r.get<std::uint64_t>();
    c.n_heads = r.get<std::uint64_t>();
    c.d_ff = r.get<std::uint64_t>();
    c.max_len = r.get<std::uint64_t>();
    c.seed = r.get<std::uint64_t>();
    c.mask_id = static_cast<TokenId>(r.get<std::uint64_t>());
    c.pad_id = static_cast<TokenId>(r.get<std::uint64_t>());
    c.init_std = r.get_f64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }
    MaskPredictor model = MaskPredictor::init(c);
    auto params = model.named_parameters();
    const auto count = r.get<std::uint32_t>();
    if (count != params.size()) {
        throw CheckpointError("checkpoint parameter count mismatch");
    }
    for (auto& [name, t] : params) {
        const std::string stored = r.get_string(r.get<std::uint32_t>());
        if (stored != name) {
            throw CheckpointError("checkpoint parameter '" + stored + "' where '" + name + "' expected");
        }
        const auto ndim = r.get<std::uint32_t>();
        Shape shape(ndim);
        for (auto& d : shape) {
            d = r.get<std::uint64_t>();
        }
        if (shape != t->shape()) {
            throw CheckpointError("shape mismatch for " + name);
        }
        for (double& v : t->values()) {
            v = r.get_f64();
        }
    }
    if (!r.done()) {
        throw CheckpointError("trailing bytes after checkpoint");
    }
    return model;
}

void save_checkpoint(const MaskPredictor& model, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CheckpointError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw CheckpointError("write failed for " + path.string());
    }
}

MaskPredictor load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace mdlm
