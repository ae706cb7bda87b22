#pragma once

// Frozen ViT-style encoder with key/value prefix injection.
//
// Hidden states travel through the tape as [batch * tokens, dim] matrices;
// sample b owns rows [b * tokens, (b + 1) * tokens). Blocks are pre-norm:
//   h += proj(attn(ln1(h)));  h += mlp2(gelu(mlp1(ln2(h))))

#include "oclbench/ndgrad.hpp"
#include "oclbench/rng.hpp"
#include "oclbench/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oclb {

struct EncoderConfig {
    std::size_t depth = 4;
    std::size_t dim = 32;
    std::size_t heads = 4;
    std::size_t tokens = 9; // patch tokens + class token
    double mlp_ratio = 4.0;
    std::size_t chunk_dim = 4; // raw features per patch token
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t feature_dim() const noexcept { return (tokens - 1) * chunk_dim; }
    std::size_t hidden_dim() const noexcept;
    std::size_t head_dim() const noexcept { return dim / heads; }
};

struct EncoderBlock {
    Tensor qkv;  // dim x 3dim, columns [q | k | v]
    Tensor proj; // dim x dim
    Tensor mlp1; // dim x hidden
    Tensor mlp2; // hidden x dim
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
};

struct EncoderParams {
    EncoderConfig config;
    Tensor embed; // chunk_dim x dim
    Tensor cls;   // dim
    Tensor pos;   // tokens x dim
    std::vector<EncoderBlock> blocks;

    bool operator==(const EncoderParams& other) const;
};

// Gaussian N(0, 1/dim) weights from config.seed; layer-norm affines start at
// gamma = 1, beta = 0.
EncoderParams init_encoder(const EncoderConfig& cfg);

// Learnable key/value prefixes for the first `layers.size()` blocks.
struct PrefixPair {
    Tensor key;   // length x dim
    Tensor value; // length x dim
};

struct PromptSet {
    std::size_t length = 0;
    std::vector<PrefixPair> layers;

    // Entries drawn from N(0, 0.02^2).
    static PromptSet init(std::size_t layers, std::size_t length, std::size_t dim, Rng& rng);
    void validate(const EncoderConfig& cfg) const;
};

// Learnable tokens prepended to the embedded sequence before block 1.
struct InputPrompt {
    Tensor tokens; // length x dim

    static InputPrompt init(std::size_t length, std::size_t dim, Rng& rng);
    std::size_t length() const noexcept { return tokens.rows(); }
};

// Input embedding: [batch x feature_dim] -> [batch x tokens x dim].
Tensor embed(const EncoderParams& params, const Tensor& inputs);

// Prefixes feeding one block. Sample b attends to keys[prefix_of[b]] /
// values[prefix_of[b]] (or to no prefix when prefix_of[b] < 0). An empty
// BlockPrefix means plain attention.
struct BlockPrefix {
    std::vector<Var> keys;
    std::vector<Var> values;
    std::vector<int> prefix_of;

    bool empty() const noexcept { return keys.empty(); }
    static BlockPrefix shared(Var key, Var value, std::size_t batch);
};

// Multi-head attention over a [batch*tokens x 3dim] qkv matrix with optional
// per-sample prefixes; output is [batch*tokens x dim].
Var prefix_attention(Var qkv, const BlockPrefix& prefix, std::size_t batch, std::size_t heads);

// One pre-norm transformer block.
Var attention_block(const EncoderParams& params, std::size_t block, Var h, std::size_t batch,
                    const BlockPrefix& prefix);

// [batch*tokens x dim] -> [batch*(len+tokens) x dim], prompt rows first per sample.
Var prepend_tokens(Var h, Var prompt, std::size_t batch);

// Registers a PromptSet on a tape as learnable leaves.
struct PromptVars {
    std::vector<Var> keys;
    std::vector<Var> values;
};
PromptVars register_prompts(Tape& tape, const PromptSet& prompts);

// General forward: block i receives block_prefixes[i] when present. Returns the
// class-token features [batch x dim].
Var encode_with(Tape& tape, const EncoderParams& params, const Tensor& inputs,
                std::span<const BlockPrefix> block_prefixes, const Var* input_prompt = nullptr);

// Prefix tuning on the first K blocks and/or an input prompt. Supplying both
// is a configuration error.
Var encode(Tape& tape, const EncoderParams& params, const Tensor& inputs,
           const PromptVars* prompts = nullptr, const Var* input_prompt = nullptr);

// Adapter-free features, off-tape.
Tensor encode_frozen(const EncoderParams& params, const Tensor& inputs);

// Tensor names and storage used by the weight-file hook. Layer norms are
// exported as 2 x dim tensors (gamma row, beta row).
std::vector<std::pair<std::string, Tensor>> export_encoder(const EncoderParams& params);
EncoderParams import_encoder(const EncoderConfig& cfg,
                             const std::vector<std::pair<std::string, Tensor>>& tensors);

namespace reference {

// Attention assembled from primitive ops (slices, matmul, softmax_rows) one
// (sample, head) at a time. A single shared prefix (or none) per call.
Var attention(Var qkv, const Var* prefix_key, const Var* prefix_value, std::size_t batch,
              std::size_t heads);

} // namespace reference

} // namespace oclb
