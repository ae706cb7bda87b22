#include "oclbench/trainer.hpp"

#include "oclbench/csv.hpp"
#include "oclbench/error.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <utility>

namespace oclb {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
    if (grads.size() != params.size())
        throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                             std::to_string(params.size()) + " parameters");
    if (state.m.empty() && !params.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
        state.steps.assign(params.size(), 0);
    }
    if (state.m.size() != params.size())
        throw DimensionError("adam_step: optimizer state tracks " +
                             std::to_string(state.m.size()) + " tensors, got " +
                             std::to_string(params.size()));

    const auto& c = state.config;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (g.shape() != p.shape() || state.m[i].shape() != p.shape())
            throw DimensionError("adam_step: gradient " + shape_string(g.shape()) +
                                 " does not match parameter " + shape_string(p.shape()));
        const auto gd = g.data();
        if (std::all_of(gd.begin(), gd.end(), [](double x) { return x == 0.0; })) continue;

        const auto t = static_cast<double>(++state.steps[i]);
        const double bc1 = 1.0 - std::pow(c.beta1, t);
        const double bc2 = 1.0 - std::pow(c.beta2, t);
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

AdapterMode parse_adapter_mode(std::string_view text) {
    if (text == "none") return AdapterMode::none;
    if (text == "prefix") return AdapterMode::prefix;
    if (text == "input") return AdapterMode::input;
    if (text == "pool") return AdapterMode::pool;
    throw ConfigError("unknown adapter '" + std::string(text) +
                      "' (expected none, prefix, input or pool)");
}

std::string_view to_string(AdapterMode mode) noexcept {
    switch (mode) {
    case AdapterMode::none: return "none";
    case AdapterMode::prefix: return "prefix";
    case AdapterMode::input: return "input";
    case AdapterMode::pool: return "pool";
    }
    return "?";
}

void TrainConfig::validate(const EncoderConfig& enc) const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(pull_weight >= 0.0)) throw ConfigError("pull_weight must be non-negative");
    if ((adapter == AdapterMode::prefix || adapter == AdapterMode::pool) &&
        prefix_layers > enc.depth)
        throw ConfigError("prefix_layers K = " + std::to_string(prefix_layers) +
                          " exceeds encoder depth " + std::to_string(enc.depth));
    if (adapter == AdapterMode::pool) {
        if (pool_size == 0) throw ConfigError("pool_size must be at least 1");
        if (pool_shared_layers >= prefix_layers)
            throw ConfigError("pool mode needs pooled blocks: pool_shared_layers (" +
                              std::to_string(pool_shared_layers) + ") must be < prefix_layers (" +
                              std::to_string(prefix_layers) + ")");
    }
}

TrainRun TrainRun::create(const EncoderParams& encoder, const TrainConfig& config,
                          std::size_t classes, std::uint64_t seed) {
    config.validate(encoder.config);
    TrainRun run;
    run.encoder = &encoder;
    run.config = config;
    run.classes = classes;

    Rng base(seed);
    run.replay_rng = base.fork(1);
    run.select_rng = base.fork(2);
    Rng init = base.fork(3);

    const std::size_t d = encoder.config.dim;
    run.head = config.head == HeadKind::cosine
                   ? ClassifierHead::make_cosine(CosineHead::init(classes, d, config.tau, init))
                   : ClassifierHead::make_linear(LinearHead::init(classes, d, init));
    switch (config.adapter) {
    case AdapterMode::none: break;
    case AdapterMode::prefix:
        run.prompts = PromptSet::init(config.prefix_layers, config.prompt_length, d, init);
        break;
    case AdapterMode::input:
        run.input_prompt = InputPrompt::init(config.prompt_length, d, init);
        break;
    case AdapterMode::pool:
        run.prompts = PromptSet::init(config.pool_shared_layers, config.prompt_length, d, init);
        run.pool = PromptPool::init(config.pool_size, config.prefix_layers - config.pool_shared_layers,
                                    config.prompt_length, d, config.selection, init);
        break;
    }
    run.buffer = MemoryBuffer(config.buffer_capacity);
    run.adam.config.lr = config.lr;
    return run;
}

std::vector<Tensor*> TrainRun::parameters() {
    std::vector<Tensor*> out;
    for (const Tensor* p : std::as_const(*this).parameters()) out.push_back(const_cast<Tensor*>(p));
    return out;
}

std::vector<const Tensor*> TrainRun::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : prompts.layers) {
        out.push_back(&l.key);
        out.push_back(&l.value);
    }
    if (config.adapter == AdapterMode::input) out.push_back(&input_prompt.tokens);
    for (const auto& e : pool.entries)
        for (const auto& l : e.layers) {
            out.push_back(&l.key);
            out.push_back(&l.value);
        }
    for (const auto& e : pool.entries) out.push_back(&e.key);
    if (head.kind() == HeadKind::cosine) {
        for (const auto& p : head.cosine().prototypes) out.push_back(&p);
    } else {
        for (const auto& w : head.linear().weights) out.push_back(&w);
        for (const auto& b : head.linear().biases) out.push_back(&b);
    }
    return out;
}

std::vector<std::string> TrainRun::parameter_names() const {
    std::vector<std::string> out;
    const auto idx = [](std::size_t i) { return std::to_string(i); };
    for (std::size_t l = 0; l < prompts.layers.size(); ++l) {
        out.push_back("prompt" + idx(l) + ".key");
        out.push_back("prompt" + idx(l) + ".value");
    }
    if (config.adapter == AdapterMode::input) out.push_back("input_prompt");
    for (std::size_t p = 0; p < pool.entries.size(); ++p)
        for (std::size_t l = 0; l < pool.entries[p].layers.size(); ++l) {
            out.push_back("pool" + idx(p) + ".layer" + idx(l) + ".key");
            out.push_back("pool" + idx(p) + ".layer" + idx(l) + ".value");
        }
    for (std::size_t p = 0; p < pool.entries.size(); ++p) out.push_back("pool" + idx(p) + ".select_key");
    if (head.kind() == HeadKind::cosine) {
        for (std::size_t c = 0; c < classes; ++c) out.push_back("prototype" + idx(c));
    } else {
        for (std::size_t c = 0; c < classes; ++c) out.push_back("weight" + idx(c));
        for (std::size_t c = 0; c < classes; ++c) out.push_back("bias" + idx(c));
    }
    return out;
}

Routing route_batch(const TrainRun& run, const Tensor& inputs, Rng& rng) {
    Routing r;
    if (run.config.adapter != AdapterMode::pool) return r;
    r.queries = query_of(*run.encoder, inputs);
    r.selected = select_prompts(r.queries, run.pool, rng);
    return r;
}

namespace {

struct Forward {
    Var features;
    std::vector<Var> pool_keys;
    std::span<const Var> head;
};

Forward forward_features(const TrainRun& run, Tape& tape, const Tensor& inputs,
                         std::span<const Var> leaves, const Routing& routing) {
    const auto expected = run.parameters().size();
    if (leaves.size() != expected)
        throw DimensionError("expected " + std::to_string(expected) + " leaves, got " +
                             std::to_string(leaves.size()));
    Forward f;
    std::size_t at = 0;
    std::vector<BlockPrefix> prefixes;
    for (std::size_t l = 0; l < run.prompts.layers.size(); ++l, at += 2)
        prefixes.push_back(BlockPrefix::shared(leaves[at], leaves[at + 1], inputs.rows()));
    const Var* input_prompt = nullptr;
    if (run.config.adapter == AdapterMode::input) input_prompt = &leaves[at++];
    if (run.config.adapter == AdapterMode::pool) {
        if (routing.selected.size() != inputs.rows())
            throw ContractError("pool forward needs one selected prompt per sample");
        const std::size_t pooled = run.pool.pooled_layers();
        std::vector<BlockPrefix> pooled_prefix(pooled);
        for (std::size_t p = 0; p < run.pool.size(); ++p)
            for (std::size_t l = 0; l < pooled; ++l, at += 2) {
                pooled_prefix[l].keys.push_back(leaves[at]);
                pooled_prefix[l].values.push_back(leaves[at + 1]);
            }
        for (auto& bp : pooled_prefix) {
            bp.prefix_of = routing.selected;
            prefixes.push_back(std::move(bp));
        }
        f.pool_keys.assign(leaves.begin() + static_cast<std::ptrdiff_t>(at),
                           leaves.begin() + static_cast<std::ptrdiff_t>(at + run.pool.size()));
        at += run.pool.size();
    }
    f.head = leaves.subspan(at);
    f.features = encode_with(tape, *run.encoder, inputs, prefixes, input_prompt);
    return f;
}

Var head_logits(const TrainRun& run, Var features, std::span<const Var> head) {
    if (run.head.kind() == HeadKind::cosine) return cosine_logits(features, head, run.head.cosine().tau);
    return linear_logits(features, head.first(run.classes), head.subspan(run.classes));
}

std::vector<Var> register_leaves(Tape& tape, const TrainRun& run) {
    std::vector<Var> leaves;
    for (const Tensor* p : run.parameters()) leaves.push_back(tape.param(*p));
    return leaves;
}

} // namespace

Var training_loss(Tape& tape, const TrainRun& run, const Tensor& inputs,
                  std::span<const int> labels, std::span<const Var> leaves, const Routing& routing) {
    const Forward f = forward_features(run, tape, inputs, leaves, routing);
    const Var logits = head_logits(run, f.features, f.head);
    const LogitMask mask = run.config.masking ? make_mask(labels, run.classes)
                                              : full_mask(run.classes);
    Var loss = masked_ce_loss(logits, mask, labels);
    if (run.config.adapter == AdapterMode::pool && run.config.pull_weight != 0.0)
        loss = add(loss, scale(key_pull_loss(routing.queries, f.pool_keys, routing.selected),
                               run.config.pull_weight));
    return loss;
}

double train_on_batch(TrainRun& run, const Minibatch& batch) {
    if (batch.size() == 0) throw ContractError("train_on_batch needs a non-empty batch");
    const Minibatch* used = &batch;
    Minibatch combined;
    if (run.buffer.capacity() > 0 && !run.buffer.empty()) {
        const std::size_t k = std::min(batch.size(), run.buffer.size());
        combined = concat_batches(batch, run.buffer.sample(k, run.replay_rng));
        used = &combined;
    }

    const Routing routing = route_batch(run, used->inputs, run.select_rng);
    Tape tape;
    const auto leaves = register_leaves(tape, run);
    const Var loss = training_loss(tape, run, used->inputs, used->labels, leaves, routing);
    tape.backward(loss);

    if (run.config.adapter == AdapterMode::pool) {
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const int p = routing.selected[b];
            run.selection_log.records.push_back(
                {batch.labels[b], batch.task, p,
                 cosine_similarity(routing.queries.row(b),
                                   run.pool.entries[static_cast<std::size_t>(p)].key.data())});
        }
    }

    std::vector<Tensor> grads;
    grads.reserve(leaves.size());
    for (const Var& v : leaves) grads.push_back(tape.grad_or_zeros(v));
    adam_step(run.parameters(), grads, run.adam);

    for (std::size_t b = 0; b < batch.size(); ++b)
        run.buffer.insert(batch.inputs.row(b), batch.labels[b],
                          b < batch.sample_ids.size() ? batch.sample_ids[b] : 0, run.replay_rng);
    ++run.steps;
    return loss.value().item();
}

Tensor run_features(const TrainRun& run, const Tensor& inputs, Rng& rng) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor* p : run.parameters()) leaves.push_back(tape.constant_ref(*p));
    return forward_features(run, tape, inputs, leaves, route_batch(run, inputs, rng)).features.value();
}

std::vector<int> run_predict(const TrainRun& run, const Tensor& inputs, Rng& rng) {
    return run.head.predict(run_features(run, inputs, rng));
}

void write_norm_csv(std::ostream& os, std::span<const NormRecord> rows) {
    os << "step,class_id,first_seen_step,norm\n";
    for (const auto& r : rows)
        os << r.step << ',' << r.class_id << ',' << r.first_seen_step << ','
           << format_real(r.norm) << '\n';
}

SeedStreams SeedStreams::derive(std::uint64_t seed) {
    Rng base(seed);
    SeedStreams s{};
    s.scenario = base.next();
    s.stream = base.next();
    s.init = base.next();
    s.evaluation = base.next();
    return s;
}

double class_subset_accuracy(const TrainRun& run, const Dataset& test, std::span<const int> classes,
                             std::size_t chunk, Rng& rng) {
    std::vector<bool> wanted(test.classes, false);
    for (int c : classes) wanted.at(static_cast<std::size_t>(c)) = true;
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (wanted[static_cast<std::size_t>(test.labels[i])]) ids.push_back(i);
    if (ids.empty()) return 0.0;
    chunk = std::max<std::size_t>(chunk, 1);
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ids.size(); start += chunk) {
        const std::size_t n = std::min(chunk, ids.size() - start);
        const std::span<const std::size_t> part(ids.data() + start, n);
        const auto pred = run_predict(run, test.gather(part), rng);
        for (std::size_t k = 0; k < n; ++k) correct += pred[k] == test.labels[part[k]];
    }
    return static_cast<double>(correct) / static_cast<double>(ids.size());
}

RunResult run_stream(const RunConfig& config, const EncoderParams& encoder, const Dataset& train,
                     const Dataset& test, std::uint64_t seed) {
    config.scenario.validate();
    config.train.validate(encoder.config);
    if (config.eval_interval == 0) throw ConfigError("eval_interval must be positive");
    if (train.classes != config.scenario.classes)
        throw ConfigError("dataset has " + std::to_string(train.classes) +
                          " classes, scenario expects " + std::to_string(config.scenario.classes));
    if (train.size() && train.feature_dim != encoder.config.feature_dim())
        throw ConfigError("dataset feature width " + std::to_string(train.feature_dim) +
                          " does not match encoder input width " +
                          std::to_string(encoder.config.feature_dim()));

    const SeedStreams streams = SeedStreams::derive(seed);
    SiBlurryConfig scenario = config.scenario;
    scenario.seed = streams.scenario;

    RunResult result;
    result.seed = seed;
    result.scenario = si_blurry_split(scenario, train.labels);
    result.matrix = AccuracyMatrix(scenario.tasks);
    result.anytime = AucRecorder(config.eval_interval);
    result.train_samples = train.size();
    const std::size_t T = scenario.tasks, C = scenario.classes;
    if (config.train.adapter == AdapterMode::pool)
        for (std::size_t p = 0; p < config.train.pool_size; ++p)
            result.task_of_prompt.push_back(static_cast<int>(p % T));
    if (train.size() == 0) return result;

    const auto batches = stream_batches(result.scenario, train, scenario.batch_size, streams.stream);
    TrainRun run = TrainRun::create(encoder, config.train, C, streams.init);
    Rng eval_base(streams.evaluation);
    std::uint64_t eval_index = 0;

    std::vector<bool> seen(C, false);
    std::vector<std::size_t> first_seen(C, 0);
    std::vector<int> seen_order;
    std::size_t samples_seen = 0;
    std::size_t next_eval = config.eval_interval;
    std::size_t bi = 0;

    for (std::size_t t = 0; t < T; ++t) {
        for (; bi < batches.size() && batches[bi].task == static_cast<int>(t); ++bi) {
            const Minibatch& mb = batches[bi];
            for (int y : mb.labels)
                if (!seen[static_cast<std::size_t>(y)]) {
                    seen[static_cast<std::size_t>(y)] = true;
                    first_seen[static_cast<std::size_t>(y)] = run.steps;
                    seen_order.push_back(y);
                }
            result.losses.push_back(train_on_batch(run, mb));
            samples_seen += mb.size();
            while (samples_seen >= next_eval) {
                Rng er = eval_base.fork(eval_index++);
                result.anytime.add(samples_seen, class_subset_accuracy(run, test, seen_order,
                                                                       config.eval_chunk, er));
                next_eval += config.eval_interval;
            }
        }
        for (std::size_t i = 0; i <= t; ++i) {
            Rng er = eval_base.fork(eval_index++);
            const auto classes = result.scenario.classes_of_task(static_cast<int>(i));
            result.matrix.set(t, i, class_subset_accuracy(run, test, classes, config.eval_chunk, er));
        }
        const auto norms = run.head.class_norms();
        for (int c : seen_order)
            result.norms.push_back({run.steps, c, first_seen[static_cast<std::size_t>(c)],
                                    norms[static_cast<std::size_t>(c)]});
    }

    result.steps = run.steps;
    result.selection = std::move(run.selection_log);
    if (!result.anytime.empty()) result.a_auc = a_auc(result.anytime);
    result.a_last = a_last(result.matrix);
    result.f_last = f_last(result.matrix);
    return result;
}

} // namespace oclb
