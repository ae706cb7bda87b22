#pragma once

// Online training loop: one pass over the stream, one optimizer step per
// minibatch, periodic anytime evaluation and end-of-task accuracy rows.

#include "oclbench/classifier.hpp"
#include "oclbench/encoder.hpp"
#include "oclbench/metrics.hpp"
#include "oclbench/promptsel.hpp"
#include "oclbench/rng.hpp"
#include "oclbench/stream.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oclb {

struct AdamConfig {
    double lr = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-tensor moments and step counts. A tensor whose gradient is entirely zero
// in a step is skipped: no moment decay, no step count, no movement.
struct AdamState {
    AdamConfig config;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::vector<std::size_t> steps;
};

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

enum class AdapterMode { none, prefix, input, pool };

AdapterMode parse_adapter_mode(std::string_view text);
std::string_view to_string(AdapterMode mode) noexcept;

struct TrainConfig {
    AdapterMode adapter = AdapterMode::prefix;
    std::size_t prompt_length = 4;     // M
    std::size_t prefix_layers = 1;     // K: prefixed blocks (pool mode: shared + pooled)
    std::size_t pool_size = 10;        // P
    std::size_t pool_shared_layers = 0;
    SelectionMode selection = SelectionMode::similarity;
    double pull_weight = 0.5;
    HeadKind head = HeadKind::cosine;
    double tau = 0.1;
    bool masking = true;
    double lr = 0.005;
    std::size_t buffer_capacity = 0;

    void validate(const EncoderConfig& enc) const;
};

struct TrainRun {
    const EncoderParams* encoder = nullptr;
    TrainConfig config;
    std::size_t classes = 0;

    PromptSet prompts;      // prefix mode; shared blocks in pool mode
    InputPrompt input_prompt;
    PromptPool pool;
    ClassifierHead head;

    MemoryBuffer buffer;
    AdamState adam;
    Rng replay_rng;
    Rng select_rng;
    SelectionLog selection_log;
    std::size_t steps = 0;

    // Head is initialised before the adapter, so two runs that differ only in
    // adapter layout share their head initialisation.
    static TrainRun create(const EncoderParams& encoder, const TrainConfig& config,
                           std::size_t classes, std::uint64_t seed);

    // Every learnable tensor, in optimizer order: adapter, pool keys, head.
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::vector<std::string> parameter_names() const;
};

// Pool-mode routing for a batch: frozen-encoder queries and one prompt index
// per sample. Empty outside pool mode.
struct Routing {
    Tensor queries;
    std::vector<int> selected;
};
Routing route_batch(const TrainRun& run, const Tensor& inputs, Rng& rng);

// Training objective with the learnable tensors supplied as tape leaves, one
// per entry of parameters() in the same order: masked (or full) cross-entropy,
// plus the weighted key-pull term in pool mode.
Var training_loss(Tape& tape, const TrainRun& run, const Tensor& inputs,
                  std::span<const int> labels, std::span<const Var> leaves, const Routing& routing);

// Forward, mask, loss, backward and one Adam step on a stream minibatch.
// Replay samples (when the buffer is enabled and non-empty) join the batch and
// the mask; stream samples enter the buffer after the step. Returns the loss.
double train_on_batch(TrainRun& run, const Minibatch& batch);

// Class-token features of the run's adapted encoder, off-tape. Random pool
// selection draws from `rng`, never from the training generators.
Tensor run_features(const TrainRun& run, const Tensor& inputs, Rng& rng);
std::vector<int> run_predict(const TrainRun& run, const Tensor& inputs, Rng& rng);

struct NormRecord {
    std::size_t step = 0;
    int class_id = 0;
    std::size_t first_seen_step = 0;
    double norm = 0.0;
};

// step,class_id,first_seen_step,norm
void write_norm_csv(std::ostream& os, std::span<const NormRecord> rows);

struct RunConfig {
    SiBlurryConfig scenario;
    TrainConfig train;
    std::size_t eval_interval = 100;
    std::size_t eval_chunk = 256;
};

struct RunResult {
    std::uint64_t seed = 0;
    TaskAssignment scenario;
    AccuracyMatrix matrix;
    AucRecorder anytime;
    std::optional<double> a_auc;
    std::optional<double> a_last;
    std::optional<double> f_last;
    std::vector<NormRecord> norms;
    SelectionLog selection;
    std::vector<int> task_of_prompt; // pool mode: prompt p belongs to task p mod T
    std::size_t train_samples = 0;
    std::size_t steps = 0;
    std::vector<double> losses;
};

// The per-seed generators: scenario split, stream order, parameter init and
// training randomness are independent children of `seed`.
struct SeedStreams {
    std::uint64_t scenario;
    std::uint64_t stream;
    std::uint64_t init;
    std::uint64_t evaluation;
    static SeedStreams derive(std::uint64_t seed);
};

RunResult run_stream(const RunConfig& config, const EncoderParams& encoder, const Dataset& train,
                     const Dataset& test, std::uint64_t seed);

// Fraction of test samples of the given classes predicted correctly; 0 when
// there are none.
double class_subset_accuracy(const TrainRun& run, const Dataset& test, std::span<const int> classes,
                             std::size_t chunk, Rng& rng);

} // namespace oclb
