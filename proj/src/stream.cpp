#include "oclbench/stream.hpp"

#include "oclbench/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

namespace oclb {

Tensor Dataset::gather(std::span<const std::size_t> ids) const {
    Tensor out({ids.size(), feature_dim});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = sample(ids[i]);
        std::copy(row.begin(), row.end(), out.ptr() + i * feature_dim);
    }
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
    return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> ids) const {
    Dataset out;
    out.feature_dim = feature_dim;
    out.classes = classes;
    out.features.reserve(ids.size() * feature_dim);
    for (std::size_t id : ids) {
        const auto row = sample(id);
        out.features.insert(out.features.end(), row.begin(), row.end());
        out.labels.push_back(labels[id]);
    }
    return out;
}

Dataset synth_dataset(const SynthSpec& spec) {
    if (!(spec.spread >= 0.0)) throw ConfigError("cluster spread must be non-negative");
    if (spec.feature_dim == 0) throw ConfigError("feature_dim must be positive");
    Rng rng(spec.seed);
    Dataset d;
    d.feature_dim = spec.feature_dim;
    d.classes = spec.classes;
    std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.feature_dim));
    for (auto& m : means) {
        double n = 0.0;
        while (n == 0.0) {
            for (double& x : m) x = rng.normal();
            n = std::sqrt(std::inner_product(m.begin(), m.end(), m.begin(), 0.0));
        }
        for (double& x : m) x *= spec.separation / n;
    }
    d.features.reserve(spec.classes * spec.per_class * spec.feature_dim);
    for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            for (std::size_t k = 0; k < spec.feature_dim; ++k)
                d.features.push_back(means[c][k] + spec.spread * rng.normal());
            d.labels.push_back(static_cast<int>(c));
        }
    return d;
}

TrainTestSplit split_train_test(const Dataset& data, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must lie in [0, 1)");
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> by_class(data.classes);
    for (std::size_t i = 0; i < data.size(); ++i)
        by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
    std::vector<std::size_t> train_ids, test_ids;
    for (auto& ids : by_class) {
        rng.shuffle(std::span<std::size_t>(ids));
        std::size_t n_test = static_cast<std::size_t>(
            std::ceil(test_fraction * static_cast<double>(ids.size()) - 1e-9));
        if (test_fraction > 0.0 && ids.size() > 1) n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
        std::sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
        std::sort(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
        test_ids.insert(test_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
        train_ids.insert(train_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
    }
    std::sort(train_ids.begin(), train_ids.end());
    std::sort(test_ids.begin(), test_ids.end());
    return {data.subset(train_ids), data.subset(test_ids)};
}

void SiBlurryConfig::validate() const {
    if (tasks == 0) throw ConfigError("tasks must be at least 1");
    if (classes == 0) throw ConfigError("classes must be at least 1");
    if (classes < tasks)
        throw ConfigError("classes (" + std::to_string(classes) + ") must be >= tasks (" +
                          std::to_string(tasks) + ")");
    if (!(disjoint_ratio >= 0.0 && disjoint_ratio <= 1.0))
        throw ConfigError("disjoint_ratio must lie in [0, 1]");
    if (!(blurry_ratio >= 0.0 && blurry_ratio <= 1.0))
        throw ConfigError("blurry_ratio must lie in [0, 1]");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

std::size_t SiBlurryConfig::disjoint_classes() const noexcept {
    const double raw = disjoint_ratio * static_cast<double>(classes);
    return std::min(classes, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
}

std::string_view to_string(ClassKind kind) noexcept {
    return kind == ClassKind::disjoint ? "disjoint" : "blurry";
}

std::vector<int> TaskAssignment::classes_of_task(int t) const {
    std::vector<int> out;
    for (std::size_t c = 0; c < home_task.size(); ++c)
        if (home_task[c] == t) out.push_back(static_cast<int>(c));
    return out;
}

std::vector<int> TaskAssignment::labels_in_task(int t) const {
    std::vector<bool> present(kind.size(), false);
    for (std::size_t i = 0; i < final_task.size(); ++i)
        if (final_task[i] == t) present[static_cast<std::size_t>(sample_class[i])] = true;
    std::vector<int> out;
    for (std::size_t c = 0; c < present.size(); ++c)
        if (present[c]) out.push_back(static_cast<int>(c));
    return out;
}

TaskAssignment si_blurry_split(const SiBlurryConfig& cfg, std::span<const int> labels) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t C = cfg.classes;
    const auto T = static_cast<int>(cfg.tasks);

    TaskAssignment a;
    a.tasks = cfg.tasks;
    a.kind.assign(C, ClassKind::blurry);
    a.home_task.assign(C, 0);

    std::vector<int> order(C);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<int>(order));
    const std::size_t n_disjoint = cfg.disjoint_classes();
    for (std::size_t k = 0; k < C; ++k) {
        const auto c = static_cast<std::size_t>(order[k]);
        a.kind[c] = k < n_disjoint ? ClassKind::disjoint : ClassKind::blurry;
        a.home_task[c] = static_cast<int>(k % cfg.tasks);
    }

    a.sample_class.assign(labels.begin(), labels.end());
    a.final_task.resize(labels.size());
    a.reassigned.assign(labels.size(), false);
    std::vector<std::size_t> blurry_samples;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw LabelError("sample " + std::to_string(i) + " has label " + std::to_string(y) +
                             " outside [0, " + std::to_string(C) + ")");
        a.final_task[i] = a.home_task[static_cast<std::size_t>(y)];
        if (a.kind[static_cast<std::size_t>(y)] == ClassKind::blurry) blurry_samples.push_back(i);
    }
    rng.shuffle(std::span<std::size_t>(blurry_samples));
    const auto n_move = static_cast<std::size_t>(
        std::floor(cfg.blurry_ratio * static_cast<double>(blurry_samples.size()) + 1e-9));
    a.reassigned_count = std::min(n_move, blurry_samples.size());
    for (std::size_t k = 0; k < a.reassigned_count; ++k) {
        const std::size_t i = blurry_samples[k];
        a.reassigned[i] = true;
        a.final_task[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
    }
    return a;
}

std::vector<Minibatch> stream_batches(const TaskAssignment& assignment, const Dataset& data,
                                      std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (assignment.final_task.size() != data.size())
        throw DimensionError("task assignment covers " +
                             std::to_string(assignment.final_task.size()) +
                             " samples, dataset has " + std::to_string(data.size()));
    Rng rng(seed);
    std::vector<Minibatch> out;
    for (int t = 0; t < static_cast<int>(assignment.tasks); ++t) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (assignment.final_task[i] == t) ids.push_back(i);
        rng.shuffle(std::span<std::size_t>(ids));
        for (std::size_t start = 0; start < ids.size(); start += batch_size) {
            const std::size_t n = std::min(batch_size, ids.size() - start);
            Minibatch mb;
            mb.sample_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                 ids.begin() + static_cast<std::ptrdiff_t>(start + n));
            mb.inputs = data.gather(mb.sample_ids);
            for (std::size_t id : mb.sample_ids) mb.labels.push_back(data.labels[id]);
            mb.sources.assign(n, SampleSource::stream);
            mb.task = t;
            out.push_back(std::move(mb));
        }
    }
    return out;
}

void write_scenario_csv(std::ostream& os, const TaskAssignment& a) {
    os << "sample_id,class_id,kind,home_task,final_task\n";
    for (std::size_t i = 0; i < a.sample_class.size(); ++i) {
        const auto c = static_cast<std::size_t>(a.sample_class[i]);
        os << i << ',' << c << ',' << to_string(a.kind[c]) << ',' << a.home_task[c] << ','
           << a.final_task[i] << '\n';
    }
}

void MemoryBuffer::insert(std::span<const double> features, int label, std::size_t sample_id,
                          Rng& rng) {
    if (capacity_ == 0) return;
    if (labels_.empty()) feature_dim_ = features.size();
    if (features.size() != feature_dim_)
        throw DimensionError("buffer sample width " + std::to_string(features.size()) +
                             " differs from stored width " + std::to_string(feature_dim_));
    ++seen_;
    if (labels_.size() < capacity_) {
        features_.insert(features_.end(), features.begin(), features.end());
        labels_.push_back(label);
        ids_.push_back(sample_id);
        return;
    }
    const std::uint64_t j = rng.below(seen_);
    if (j < capacity_) {
        std::copy(features.begin(), features.end(), features_.begin() + static_cast<std::ptrdiff_t>(j * feature_dim_));
        labels_[j] = label;
        ids_[j] = sample_id;
    }
}

Minibatch MemoryBuffer::sample(std::size_t k, Rng& rng) const {
    if (labels_.empty()) throw ContractError("cannot sample from an empty replay buffer");
    if (k > labels_.size())
        throw ContractError("requested " + std::to_string(k) + " replay samples, buffer holds " +
                            std::to_string(labels_.size()));
    std::vector<std::size_t> idx(labels_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    Minibatch mb;
    mb.inputs = Tensor({k, feature_dim_});
    for (std::size_t i = 0; i < k; ++i) {
        std::copy_n(features_.begin() + static_cast<std::ptrdiff_t>(idx[i] * feature_dim_),
                    feature_dim_, mb.inputs.ptr() + i * feature_dim_);
        mb.labels.push_back(labels_[idx[i]]);
        mb.sample_ids.push_back(ids_[idx[i]]);
    }
    mb.sources.assign(k, SampleSource::replay);
    return mb;
}

Minibatch concat_batches(const Minibatch& a, const Minibatch& b) {
    if (a.size() && b.size() && a.inputs.cols() != b.inputs.cols())
        throw DimensionError("cannot concatenate batches of different feature widths");
    const std::size_t f = a.size() ? a.inputs.cols() : b.inputs.cols();
    Minibatch out;
    out.inputs = Tensor({a.size() + b.size(), f});
    std::copy(a.inputs.data().begin(), a.inputs.data().end(), out.inputs.ptr());
    std::copy(b.inputs.data().begin(), b.inputs.data().end(), out.inputs.ptr() + a.size() * f);
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.sample_ids = a.sample_ids;
    out.sample_ids.insert(out.sample_ids.end(), b.sample_ids.begin(), b.sample_ids.end());
    out.sources = a.sources;
    out.sources.insert(out.sources.end(), b.sources.begin(), b.sources.end());
    out.task = a.task;
    return out;
}

} // namespace oclb
