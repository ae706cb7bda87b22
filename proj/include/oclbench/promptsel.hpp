#pragma once

// Prompt-pool baselines and the analytics used to audit prompt selection.
//
// A pool entry carries one key and a prefix pair for every pooled block; the
// key chosen for a sample decides the prefixes it sees in all pooled blocks.

#include "oclbench/encoder.hpp"
#include "oclbench/ndgrad.hpp"
#include "oclbench/rng.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace oclb {

enum class SelectionMode { similarity, random, fixed_single };

SelectionMode parse_selection_mode(std::string_view text);
std::string_view to_string(SelectionMode mode) noexcept;

struct PoolEntry {
    std::vector<PrefixPair> layers; // one pair per pooled block
    Tensor key;                     // [dim]
};

struct PromptPool {
    SelectionMode mode = SelectionMode::similarity;
    std::size_t length = 0;
    std::vector<PoolEntry> entries;

    // Prompts from N(0, 0.02^2) as for PromptSet, keys from N(0, 1).
    static PromptPool init(std::size_t size, std::size_t pooled_layers, std::size_t length,
                           std::size_t dim, SelectionMode mode, Rng& rng);
    std::size_t size() const noexcept { return entries.size(); }
    std::size_t pooled_layers() const noexcept {
        return entries.empty() ? 0 : entries.front().layers.size();
    }
};

double cosine_similarity(std::span<const double> a, std::span<const double> b) noexcept;

// Class-token feature of the frozen, adapter-free encoder: [batch x dim].
Tensor query_of(const EncoderParams& params, const Tensor& inputs);

// Similarity: argmax cosine(q, key) with lowest-index ties. Random: uniform
// draw from rng. Fixed-single: 0. Only random mode consumes rng.
std::size_t select_prompt(std::span<const double> query, const PromptPool& pool, Rng& rng);
std::vector<int> select_prompts(const Tensor& queries, const PromptPool& pool, Rng& rng);

// mean_b (1 - cos(q_b, keys[selected[b]])). Queries are constants, so only
// the selected keys receive gradient.
Var key_pull_loss(const Tensor& queries, std::span<const Var> keys, std::span<const int> selected);

struct SelectionRecord {
    int class_id = 0;
    int task_id = -1; // -1 when unknown
    int prompt = 0;
    double cosine = 0.0;
};

struct SelectionLog {
    std::vector<SelectionRecord> records;
};

// counts[class][prompt]
std::vector<std::vector<std::size_t>> selection_histogram(const SelectionLog& log,
                                                          std::size_t classes,
                                                          std::size_t pool_size);

struct ClassTaskAccuracy {
    std::size_t n = 0;
    std::optional<double> accuracy; // empty when the class has no records
};

// Fraction of records whose selected prompt belongs to the record's task.
// task_of_prompt[p] < 0 or a prompt beyond the map is a configuration error.
std::vector<ClassTaskAccuracy> task_id_accuracy(const SelectionLog& log,
                                                std::span<const int> task_of_prompt,
                                                std::size_t classes);

struct TaskSimilarity {
    int task_id = 0;
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0; // population
};

// Per-task mean and population std of the logged query/key cosines, ordered by task.
std::vector<TaskSimilarity> key_similarity_stats(const SelectionLog& log);

void write_histogram_csv(std::ostream& os, const std::vector<std::vector<std::size_t>>& counts);
void write_task_accuracy_csv(std::ostream& os, std::span<const ClassTaskAccuracy> rows);
void write_key_similarity_csv(std::ostream& os, std::span<const TaskSimilarity> rows);

} // namespace oclb
