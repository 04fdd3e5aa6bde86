#pragma once

#include "mdlm/autodiff.hpp"
#include "mdlm/denoiser.hpp"
#include "mdlm/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mdlm {

struct ModelConfig {
    std::size_t vocab_size = 128;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_len = 64;
    std::uint64_t seed = 0;
    TokenId mask_id = 1;
    TokenId pad_id = 0;
    double init_std = 0.02;

    // Throws ConfigError on an inconsistent configuration.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Equal in everything but the initialisation seed and scale.
bool same_architecture(const ModelConfig& a, const ModelConfig& b);

// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& config);

// Bidirectional pre-norm transformer mask predictor. MASK is an ordinary
// embedding row; attention has no causal mask.
class MaskPredictor : public Denoiser {
public:
    // Seeded initialisation: N(0, init_std) weights, zero biases, unit norms.
    static MaskPredictor init(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    // Trainable forward: gradients reach this model's parameters.
    // Returns [positions.size() x V] log-probs; empty `positions` means all.
    Var log_probs(Graph& g, std::span<const TokenId> tokens, std::span<const std::size_t> positions = {},
                  const ForwardOptions& options = {});
    // Same computation, never attaches gradients.
    Var log_probs(Graph& g, std::span<const TokenId> tokens, std::span<const std::size_t> positions = {},
                  const ForwardOptions& options = {}) const;

    // Per-position distributions, each summing to 1.
    std::vector<VocabDistribution> forward(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const;

    // Denoiser
    std::size_t vocab_size() const override { return config_.vocab_size; }
    TokenId mask_id() const override { return config_.mask_id; }
    TokenId pad_id() const override { return config_.pad_id; }
    LogProbMatrix predict(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const override;

    // Copy that can never be trained (theta_0 / reference models).
    MaskPredictor freeze() const;
    bool frozen() const { return frozen_; }

    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
    std::vector<Tensor*> parameters();
    std::size_t num_parameters() const;

    void zero_grads();
    bool bit_equal(const MaskPredictor& other) const;
    // FNV-1a over parameter names and raw value bytes.
    std::uint64_t fingerprint() const;

private:
    struct Layer {
        Tensor ln1_gamma, ln1_beta;
        Tensor w_qkv, b_qkv;
        Tensor w_proj, b_proj;
        Tensor ln2_gamma, ln2_beta;
        Tensor w_ff1, b_ff1;
        Tensor w_ff2, b_ff2;
    };

    template <class Self>
    static Var build(Self& self, Graph& g, std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                     const ForwardOptions& options);
    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn);

    ModelConfig config_;
    Tensor tok_emb_, pos_emb_;
    std::vector<Layer> layers_;
    Tensor head_gamma_, head_beta_, head_w_, head_b_;
    bool frozen_ = false;
};

// ---- checkpoint file ------------------------------------------------------
// "MDLMCKPT" | u32 version | config | u32 n_params |
//   per parameter: u32 name_len, name, u32 ndim, u64 dims..., f64 LE values.

std::vector<char> serialize_checkpoint(const MaskPredictor& model);
MaskPredictor deserialize_checkpoint(std::span<const char> bytes);
void save_checkpoint(const MaskPredictor& model, const std::filesystem::path& path);
MaskPredictor load_checkpoint(const std::filesystem::path& path);

}  // namespace mdlm
