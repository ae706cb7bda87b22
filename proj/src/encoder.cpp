#include "oclbench/encoder.hpp"

#include "oclbench/error.hpp"
#include "oclbench/kernels.hpp"

#include <cmath>
#include <map>
#include <memory>

namespace oclb {

void EncoderConfig::validate() const {
    if (depth == 0) throw ConfigError("encoder depth must be positive");
    if (dim == 0) throw ConfigError("encoder dim must be positive");
    if (heads == 0) throw ConfigError("encoder heads must be positive");
    if (dim % heads != 0)
        throw ConfigError("encoder dim " + std::to_string(dim) + " is not divisible by heads " +
                          std::to_string(heads));
    if (tokens < 2) throw ConfigError("encoder needs at least 2 tokens (class + one patch)");
    if (!(mlp_ratio > 0.0)) throw ConfigError("encoder mlp_ratio must be positive");
    if (chunk_dim == 0) throw ConfigError("encoder chunk_dim must be positive");
    if (hidden_dim() == 0) throw ConfigError("encoder mlp hidden width rounds to zero");
}

std::size_t EncoderConfig::hidden_dim() const noexcept {
    return static_cast<std::size_t>(std::llround(static_cast<double>(dim) * mlp_ratio));
}

bool EncoderParams::operator==(const EncoderParams& other) const {
    if (embed != other.embed || cls != other.cls || pos != other.pos) return false;
    if (blocks.size() != other.blocks.size()) return false;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& a = blocks[i];
        const auto& b = other.blocks[i];
        if (a.qkv != b.qkv || a.proj != b.proj || a.mlp1 != b.mlp1 || a.mlp2 != b.mlp2 ||
            a.ln1_gamma != b.ln1_gamma || a.ln1_beta != b.ln1_beta ||
            a.ln2_gamma != b.ln2_gamma || a.ln2_beta != b.ln2_beta)
            return false;
    }
    return true;
}

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = rng.normal(0.0, stddev);
    return t;
}

} // namespace

EncoderParams init_encoder(const EncoderConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    const std::size_t d = cfg.dim, hid = cfg.hidden_dim();

    EncoderParams p;
    p.config = cfg;
    p.embed = gaussian({cfg.chunk_dim, d}, sd, rng);
    p.cls = gaussian({d}, sd, rng);
    p.pos = gaussian({cfg.tokens, d}, sd, rng);
    p.blocks.reserve(cfg.depth);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        EncoderBlock b;
        b.qkv = gaussian({d, 3 * d}, sd, rng);
        b.proj = gaussian({d, d}, sd, rng);
        b.mlp1 = gaussian({d, hid}, sd, rng);
        b.mlp2 = gaussian({hid, d}, sd, rng);
        b.ln1_gamma = Tensor::full({d}, 1.0);
        b.ln1_beta = Tensor::zeros({d});
        b.ln2_gamma = Tensor::full({d}, 1.0);
        b.ln2_beta = Tensor::zeros({d});
        p.blocks.push_back(std::move(b));
    }
    return p;
}

PromptSet PromptSet::init(std::size_t layers, std::size_t length, std::size_t dim, Rng& rng) {
    PromptSet ps;
    ps.length = length;
    for (std::size_t i = 0; i < layers; ++i)
        ps.layers.push_back({gaussian({length, dim}, 0.02, rng), gaussian({length, dim}, 0.02, rng)});
    return ps;
}

void PromptSet::validate(const EncoderConfig& cfg) const {
    if (layers.size() > cfg.depth)
        throw ConfigError("prefix layers K = " + std::to_string(layers.size()) +
                          " exceeds encoder depth " + std::to_string(cfg.depth));
    const Shape want{length, cfg.dim};
    for (const auto& l : layers)
        if (l.key.shape() != want || l.value.shape() != want)
            throw DimensionError("prefix pair must be " + shape_string(want) + ", got " +
                                 shape_string(l.key.shape()) + " / " +
                                 shape_string(l.value.shape()));
}

InputPrompt InputPrompt::init(std::size_t length, std::size_t dim, Rng& rng) {
    return {gaussian({length, dim}, 0.02, rng)};
}

Tensor embed(const EncoderParams& params, const Tensor& inputs) {
    const auto& cfg = params.config;
    const std::size_t batch = inputs.rows();
    if (inputs.rank() != 2 || inputs.cols() != cfg.feature_dim())
        throw DimensionError("embed expects [batch x " + std::to_string(cfg.feature_dim()) +
                             "] inputs, got " + shape_string(inputs.shape()));
    const std::size_t n = cfg.tokens, d = cfg.dim, chunk = cfg.chunk_dim;
    Tensor out({batch, n, d});
    for (std::size_t b = 0; b < batch; ++b) {
        double* tok0 = out.ptr() + b * n * d;
        for (std::size_t c = 0; c < d; ++c) tok0[c] = params.cls[c] + params.pos[c];
        for (std::size_t t = 1; t < n; ++t) {
            const double* x = inputs.ptr() + b * inputs.cols() + (t - 1) * chunk;
            double* tok = out.ptr() + (b * n + t) * d;
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < chunk; ++k) acc += x[k] * params.embed[k * d + c];
                tok[c] = acc + params.pos[t * d + c];
            }
        }
    }
    return out;
}

BlockPrefix BlockPrefix::shared(Var key, Var value, std::size_t batch) {
    return {{key}, {value}, std::vector<int>(batch, 0)};
}

Var prefix_attention(Var qkv, const BlockPrefix& prefix, std::size_t batch, std::size_t heads) {
    const Tensor& qv = qkv.value();
    if (qv.rank() != 2 || qv.dim(1) % 3 != 0 || batch == 0 || qv.dim(0) % batch != 0)
        throw DimensionError("attention: qkv " + shape_string(qv.shape()) +
                             " is not [batch*tokens x 3dim] for batch " + std::to_string(batch));
    const std::size_t dim = qv.dim(1) / 3;
    if (heads == 0 || dim % heads != 0)
        throw DimensionError("attention: dim " + std::to_string(dim) + " not divisible by " +
                             std::to_string(heads) + " heads");

    kernels::AttentionShape s{batch, qv.dim(0) / batch, dim, heads, 0};
    const std::size_t npref = prefix.keys.size();
    if (prefix.values.size() != npref)
        throw DimensionError("attention: prefix key/value counts differ");
    if (npref) {
        s.prefix_len = prefix.keys[0].value().rows();
        const Shape want{s.prefix_len, dim};
        for (std::size_t p = 0; p < npref; ++p) {
            if (prefix.keys[p].shape() != want || prefix.values[p].shape() != want)
                throw DimensionError("attention: prompt shapes " +
                                     shape_string(prefix.keys[p].shape()) + " / " +
                                     shape_string(prefix.values[p].shape()) + " do not match " +
                                     shape_string(want));
        }
        if (prefix.prefix_of.size() != batch)
            throw DimensionError("attention: prefix assignment covers " +
                                 std::to_string(prefix.prefix_of.size()) + " samples, batch is " +
                                 std::to_string(batch));
        for (int p : prefix.prefix_of)
            if (p >= static_cast<int>(npref))
                throw DimensionError("attention: prefix index " + std::to_string(p) +
                                     " out of range");
    }

    struct Saved {
        std::vector<const double*> keys, values;
        std::vector<int> prefix_of;
        std::vector<double> probs;
    };
    auto saved = std::make_shared<Saved>();
    for (std::size_t p = 0; p < npref; ++p) {
        saved->keys.push_back(prefix.keys[p].value().ptr());
        saved->values.push_back(prefix.values[p].value().ptr());
    }
    saved->prefix_of = npref ? prefix.prefix_of : std::vector<int>{};
    saved->probs.assign(s.probs_size(), 0.0);

    Tensor out({qv.dim(0), dim});
    kernels::AttentionPrefixes pre{saved->keys, saved->values, saved->prefix_of};
    kernels::attention_forward(s, qv.ptr(), pre, out.ptr(), saved->probs.data());

    std::vector<Var> inputs{qkv};
    inputs.insert(inputs.end(), prefix.keys.begin(), prefix.keys.end());
    inputs.insert(inputs.end(), prefix.values.begin(), prefix.values.end());
    const Tensor* qkv_value = &qv;
    return qkv.tape().record(
        "prefix_attention", std::move(out), std::move(inputs),
        [s, npref, saved, qkv_value](const Tensor&, const Tensor& g,
                                     std::span<Tensor* const> gin) {
            Tensor scratch;
            double* gq = nullptr;
            if (gin[0]) {
                gq = gin[0]->ptr();
            } else {
                scratch = Tensor::zeros(qkv_value->shape());
                gq = scratch.ptr();
            }
            const std::size_t per = s.prefix_len * s.dim;
            std::vector<double> gpk(s.batch * per, 0.0), gpv(s.batch * per, 0.0);
            kernels::AttentionPrefixes pre{saved->keys, saved->values, saved->prefix_of};
            kernels::attention_backward(s, qkv_value->ptr(), pre, saved->probs.data(), g.ptr(), gq,
                                        gpk.data(), gpv.data());
            if (!npref) return;
            for (std::size_t b = 0; b < s.batch; ++b) {
                const int p = saved->prefix_of[b];
                if (p < 0) continue;
                if (Tensor* dk = gin[1 + p])
                    for (std::size_t i = 0; i < per; ++i) (*dk)[i] += gpk[b * per + i];
                if (Tensor* dv = gin[1 + npref + p])
                    for (std::size_t i = 0; i < per; ++i) (*dv)[i] += gpv[b * per + i];
            }
        });
}

Var attention_block(const EncoderParams& params, std::size_t block, Var h, std::size_t batch,
                    const BlockPrefix& prefix) {
    const EncoderBlock& blk = params.blocks.at(block);
    Tape& t = h.tape();
    Var x = layer_norm(h, t.constant_ref(blk.ln1_gamma), t.constant_ref(blk.ln1_beta));
    Var qkv = matmul(x, t.constant_ref(blk.qkv));
    Var attn = prefix_attention(qkv, prefix, batch, params.config.heads);
    h = add(h, matmul(attn, t.constant_ref(blk.proj)));
    Var y = layer_norm(h, t.constant_ref(blk.ln2_gamma), t.constant_ref(blk.ln2_beta));
    Var m = gelu(matmul(y, t.constant_ref(blk.mlp1)));
    return add(h, matmul(m, t.constant_ref(blk.mlp2)));
}

Var prepend_tokens(Var h, Var prompt, std::size_t batch) {
    const Tensor& hv = h.value();
    const Tensor& pv = prompt.value();
    if (hv.rank() != 2 || batch == 0 || hv.dim(0) % batch != 0)
        throw DimensionError("prepend_tokens: " + shape_string(hv.shape()) +
                             " is not [batch*tokens x dim]");
    if (pv.rank() != 2 || pv.dim(1) != hv.dim(1))
        throw DimensionError("prepend_tokens: prompt " + shape_string(pv.shape()) +
                             " does not match width " + std::to_string(hv.dim(1)));
    const std::size_t n = hv.dim(0) / batch, m = pv.dim(0), d = hv.dim(1);
    Tensor out({batch * (m + n), d});
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(pv.ptr(), m * d, out.ptr() + b * (m + n) * d);
        std::copy_n(hv.ptr() + b * n * d, n * d, out.ptr() + (b * (m + n) + m) * d);
    }
    return h.tape().record(
        "prepend_tokens", std::move(out), {h, prompt},
        [batch, n, m, d](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gb = g.ptr() + b * (m + n) * d;
                if (gin[1])
                    for (std::size_t i = 0; i < m * d; ++i) (*gin[1])[i] += gb[i];
                if (gin[0])
                    for (std::size_t i = 0; i < n * d; ++i) (*gin[0])[b * n * d + i] += gb[m * d + i];
            }
        });
}

PromptVars register_prompts(Tape& tape, const PromptSet& prompts) {
    PromptVars vars;
    for (const auto& l : prompts.layers) {
        vars.keys.push_back(tape.param(l.key));
        vars.values.push_back(tape.param(l.value));
    }
    return vars;
}

Var encode_with(Tape& tape, const EncoderParams& params, const Tensor& inputs,
                std::span<const BlockPrefix> block_prefixes, const Var* input_prompt) {
    const auto& cfg = params.config;
    if (block_prefixes.size() > cfg.depth)
        throw ConfigError("prefixes given for " + std::to_string(block_prefixes.size()) +
                          " blocks, encoder depth is " + std::to_string(cfg.depth));
    const std::size_t batch = inputs.rows();
    Var h = tape.constant(embed(params, inputs).reshaped({batch * cfg.tokens, cfg.dim}));
    std::size_t tokens = cfg.tokens;
    std::size_t cls_row = 0;
    if (input_prompt) {
        h = prepend_tokens(h, *input_prompt, batch);
        cls_row = input_prompt->value().rows();
        tokens += cls_row;
    }
    const BlockPrefix none;
    for (std::size_t i = 0; i < cfg.depth; ++i)
        h = attention_block(params, i, h, batch,
                            i < block_prefixes.size() ? block_prefixes[i] : none);
    std::vector<std::size_t> rows(batch);
    for (std::size_t b = 0; b < batch; ++b) rows[b] = b * tokens + cls_row;
    return gather_rows(h, std::move(rows));
}

Var encode(Tape& tape, const EncoderParams& params, const Tensor& inputs,
           const PromptVars* prompts, const Var* input_prompt) {
    if (prompts && input_prompt)
        throw ConfigError("prefix prompts and an input prompt cannot be active together");
    std::vector<BlockPrefix> prefixes;
    if (prompts) {
        if (prompts->keys.size() > params.config.depth)
            throw ConfigError("prefix layers K = " + std::to_string(prompts->keys.size()) +
                              " exceeds encoder depth " + std::to_string(params.config.depth));
        for (std::size_t i = 0; i < prompts->keys.size(); ++i)
            prefixes.push_back(
                BlockPrefix::shared(prompts->keys[i], prompts->values[i], inputs.rows()));
    }
    return encode_with(tape, params, inputs, prefixes, input_prompt);
}

Tensor encode_frozen(const EncoderParams& params, const Tensor& inputs) {
    Tape tape;
    return encode(tape, params, inputs).value();
}

std::vector<std::pair<std::string, Tensor>> export_encoder(const EncoderParams& params) {
    auto stack = [](const Tensor& gamma, const Tensor& beta) {
        std::vector<double> data(gamma.data().begin(), gamma.data().end());
        data.insert(data.end(), beta.data().begin(), beta.data().end());
        return Tensor({2, gamma.size()}, std::move(data));
    };
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed", params.embed);
    out.emplace_back("cls", params.cls);
    out.emplace_back("pos", params.pos);
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        const auto& b = params.blocks[i];
        const std::string pre = "block" + std::to_string(i) + ".";
        out.emplace_back(pre + "qkv", b.qkv);
        out.emplace_back(pre + "proj", b.proj);
        out.emplace_back(pre + "mlp1", b.mlp1);
        out.emplace_back(pre + "mlp2", b.mlp2);
        out.emplace_back(pre + "ln1", stack(b.ln1_gamma, b.ln1_beta));
        out.emplace_back(pre + "ln2", stack(b.ln2_gamma, b.ln2_beta));
    }
    return out;
}

EncoderParams import_encoder(const EncoderConfig& cfg,
                             const std::vector<std::pair<std::string, Tensor>>& tensors) {
    cfg.validate();
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : tensors) by_name[name] = &t;
    auto take = [&](const std::string& name, const Shape& shape) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("weight file lacks tensor '" + name + "'");
        if (it->second->shape() != shape)
            throw DimensionError("tensor '" + name + "' has shape " +
                                 shape_string(it->second->shape()) + ", expected " +
                                 shape_string(shape));
        if (!it->second->all_finite())
            throw std::domain_error("tensor '" + name + "' contains NaN or Inf");
        return *it->second;
    };
    auto split = [](const Tensor& t, std::size_t row) {
        const std::size_t d = t.cols();
        return Tensor({d}, std::vector<double>(t.ptr() + row * d, t.ptr() + (row + 1) * d));
    };
    const std::size_t d = cfg.dim, hid = cfg.hidden_dim();
    EncoderParams p;
    p.config = cfg;
    p.embed = take("embed", {cfg.chunk_dim, d});
    p.cls = take("cls", {d});
    p.pos = take("pos", {cfg.tokens, d});
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string pre = "block" + std::to_string(i) + ".";
        EncoderBlock b;
        b.qkv = take(pre + "qkv", {d, 3 * d});
        b.proj = take(pre + "proj", {d, d});
        b.mlp1 = take(pre + "mlp1", {d, hid});
        b.mlp2 = take(pre + "mlp2", {hid, d});
        const Tensor& ln1 = take(pre + "ln1", {2, d});
        const Tensor& ln2 = take(pre + "ln2", {2, d});
        b.ln1_gamma = split(ln1, 0);
        b.ln1_beta = split(ln1, 1);
        b.ln2_gamma = split(ln2, 0);
        b.ln2_beta = split(ln2, 1);
        p.blocks.push_back(std::move(b));
    }
    return p;
}

namespace reference {

Var attention(Var qkv, const Var* prefix_key, const Var* prefix_value, std::size_t batch,
              std::size_t heads) {
    const std::size_t rows = qkv.value().dim(0);
    const std::size_t dim = qkv.value().dim(1) / 3;
    const std::size_t tokens = rows / batch;
    const std::size_t dh = dim / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    Var out;
    for (std::size_t b = 0; b < batch; ++b) {
        Var sample = slice_rows(qkv, b * tokens, tokens);
        std::vector<Var> head_out;
        for (std::size_t h = 0; h < heads; ++h) {
            Var q = slice_cols(sample, h * dh, dh);
            Var k = slice_cols(sample, dim + h * dh, dh);
            Var v = slice_cols(sample, 2 * dim + h * dh, dh);
            if (prefix_key && prefix_value) {
                k = concat_rows(slice_cols(*prefix_key, h * dh, dh), k);
                v = concat_rows(slice_cols(*prefix_value, h * dh, dh), v);
            }
            Var probs = softmax_rows(scale(matmul(q, transpose(k)), sc));
            head_out.push_back(matmul(probs, v));
        }
        Var joined = concat_cols(head_out);
        out = out.valid() ? concat_rows(out, joined) : joined;
    }
    return out;
}

} // namespace reference

} // namespace oclb
