#pragma once

// Datasets, the Si-Blurry task construction, single-pass minibatch streaming
// and the reservoir replay buffer.

#include "oclbench/rng.hpp"
#include "oclbench/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace oclb {

// Row-major samples with integer class labels in [0, classes).
struct Dataset {
    std::size_t feature_dim = 0;
    std::size_t classes = 0;
    std::vector<double> features;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> sample(std::size_t i) const {
        return {features.data() + i * feature_dim, feature_dim};
    }
    // Stack the given samples into a [ids.size() x feature_dim] tensor.
    Tensor gather(std::span<const std::size_t> ids) const;
    std::vector<std::size_t> class_counts() const;
    Dataset subset(std::span<const std::size_t> ids) const;
};

struct SynthSpec {
    std::size_t classes = 10;
    std::size_t per_class = 100;
    std::size_t feature_dim = 32;
    double spread = 1.0;      // std of the isotropic noise
    double separation = 3.0;  // norm of each class mean
    std::uint64_t seed = 0;
};

// Class c gets mean separation * u_c for a random unit vector u_c; samples are
// mean + spread * N(0, I). Samples are ordered class by class.
Dataset synth_dataset(const SynthSpec& spec);

// Per class, the first ceil(fraction * n_c) samples of a seeded shuffle go to
// the test split (at least one when fraction > 0 and n_c > 1).
struct TrainTestSplit {
    Dataset train;
    Dataset test;
};
TrainTestSplit split_train_test(const Dataset& data, double test_fraction, std::uint64_t seed);

struct SiBlurryConfig {
    std::size_t classes = 10;
    std::size_t tasks = 5;
    double disjoint_ratio = 0.5;
    double blurry_ratio = 0.1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const;
    // ceil(disjoint_ratio * classes), immune to representation noise such as 0.3 * 10.
    std::size_t disjoint_classes() const noexcept;
};

enum class ClassKind { disjoint, blurry };
std::string_view to_string(ClassKind kind) noexcept;

struct TaskAssignment {
    std::size_t tasks = 0;
    std::vector<ClassKind> kind;      // per class
    std::vector<int> home_task;       // per class
    std::vector<int> sample_class;    // per sample
    std::vector<int> final_task;      // per sample
    std::vector<bool> reassigned;     // per sample: picked by the blurry shuffle
    std::size_t reassigned_count = 0;

    // Classes whose home task is t.
    std::vector<int> classes_of_task(int t) const;
    // Distinct labels of the samples placed in task t.
    std::vector<int> labels_in_task(int t) const;
};

// (1) shuffle classes, the first ceil(ratio * C) are disjoint; (2) deal the
// disjoint classes, then the blurry ones, round-robin over tasks with a single
// running cursor; (3) pick floor(blurry_ratio * #blurry samples) blurry-class
// samples and move each to a uniformly drawn task (its home task included).
TaskAssignment si_blurry_split(const SiBlurryConfig& cfg, std::span<const int> labels);

enum class SampleSource { stream, replay };

struct Minibatch {
    Tensor inputs;                       // [n x feature_dim]
    std::vector<int> labels;
    std::vector<std::size_t> sample_ids; // indices into the streamed dataset
    std::vector<SampleSource> sources;
    int task = 0;

    std::size_t size() const noexcept { return labels.size(); }
};

// Tasks in order; inside a task the samples are shuffled and cut into chunks
// of batch_size (the last chunk may be short). Batches never straddle tasks.
std::vector<Minibatch> stream_batches(const TaskAssignment& assignment, const Dataset& data,
                                      std::size_t batch_size, std::uint64_t seed);

// scenario dump: sample_id,class_id,kind,home_task,final_task
void write_scenario_csv(std::ostream& os, const TaskAssignment& assignment);

class MemoryBuffer {
public:
    explicit MemoryBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

    // Reservoir sampling over everything offered so far.
    void insert(std::span<const double> features, int label, std::size_t sample_id, Rng& rng);
    // k distinct stored samples, uniformly without replacement, tagged replay.
    Minibatch sample(std::size_t k, Rng& rng) const;

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    std::size_t seen() const noexcept { return seen_; }
    std::span<const std::size_t> sample_ids() const noexcept { return ids_; }

private:
    std::size_t capacity_;
    std::size_t seen_ = 0;
    std::size_t feature_dim_ = 0;
    std::vector<double> features_;
    std::vector<int> labels_;
    std::vector<std::size_t> ids_;
};

// Concatenate two batches (stream rows first).
Minibatch concat_batches(const Minibatch& a, const Minibatch& b);

} // namespace oclb
