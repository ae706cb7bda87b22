#include "oclbench/promptsel.hpp"

#include "oclbench/classifier.hpp"
#include "oclbench/csv.hpp"
#include "oclbench/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>

namespace oclb {

SelectionMode parse_selection_mode(std::string_view text) {
    if (text == "similarity") return SelectionMode::similarity;
    if (text == "random") return SelectionMode::random;
    if (text == "fixed" || text == "fixed_single") return SelectionMode::fixed_single;
    throw ConfigError("unknown selection mode '" + std::string(text) +
                      "' (expected similarity, random or fixed)");
}

std::string_view to_string(SelectionMode mode) noexcept {
    switch (mode) {
    case SelectionMode::similarity: return "similarity";
    case SelectionMode::random: return "random";
    case SelectionMode::fixed_single: return "fixed";
    }
    return "?";
}

PromptPool PromptPool::init(std::size_t size, std::size_t pooled_layers, std::size_t length,
                            std::size_t dim, SelectionMode mode, Rng& rng) {
    if (size == 0) throw ConfigError("prompt pool size must be at least 1");
    PromptPool pool;
    pool.mode = mode;
    pool.length = length;
    for (std::size_t p = 0; p < size; ++p) {
        PoolEntry e;
        e.layers = PromptSet::init(pooled_layers, length, dim, rng).layers;
        e.key = Tensor({dim});
        pool.entries.push_back(std::move(e));
    }
    // Keys are drawn after every prompt so that a one-entry pool consumes the
    // generator exactly like a PromptSet of the same depth.
    for (auto& e : pool.entries)
        for (double& x : e.key.data()) x = rng.normal();
    return pool;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) noexcept {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), norm_epsilon) * std::max(std::sqrt(nb), norm_epsilon));
}

Tensor query_of(const EncoderParams& params, const Tensor& inputs) {
    return encode_frozen(params, inputs);
}

std::size_t select_prompt(std::span<const double> query, const PromptPool& pool, Rng& rng) {
    if (pool.entries.empty()) throw ContractError("select_prompt on an empty pool");
    switch (pool.mode) {
    case SelectionMode::fixed_single: return 0;
    case SelectionMode::random: return static_cast<std::size_t>(rng.below(pool.size()));
    case SelectionMode::similarity: break;
    }
    std::size_t best = 0;
    double best_cos = cosine_similarity(query, pool.entries[0].key.data());
    for (std::size_t p = 1; p < pool.size(); ++p) {
        const double c = cosine_similarity(query, pool.entries[p].key.data());
        if (c > best_cos) {
            best_cos = c;
            best = p;
        }
    }
    return best;
}

std::vector<int> select_prompts(const Tensor& queries, const PromptPool& pool, Rng& rng) {
    std::vector<int> out(queries.rows());
    for (std::size_t b = 0; b < queries.rows(); ++b)
        out[b] = static_cast<int>(select_prompt(queries.row(b), pool, rng));
    return out;
}

Var key_pull_loss(const Tensor& queries, std::span<const Var> keys, std::span<const int> selected) {
    if (keys.empty()) throw ContractError("key_pull_loss needs at least one key");
    Tape& tape = keys[0].tape();
    const std::size_t batch = queries.rows();
    if (selected.size() != batch)
        throw DimensionError("key_pull_loss: selection covers " + std::to_string(selected.size()) +
                             " samples, batch is " + std::to_string(batch));
    for (int s : selected)
        if (s < 0 || static_cast<std::size_t>(s) >= keys.size())
            throw ContractError("key_pull_loss: selected index " + std::to_string(s) +
                                " outside pool of " + std::to_string(keys.size()));
    // 1 - cos(q, k) = 1 - tau * cosine_logit with tau = 1.
    Var q = tape.constant(queries);
    Var z = cosine_logits(q, keys, 1.0);
    const Tensor& zv = z.value();
    std::vector<int> sel(selected.begin(), selected.end());
    const std::size_t pool = keys.size();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) total += 1.0 - zv[b * pool + sel[b]];
    return tape.record("key_pull_loss", Tensor::scalar(total / static_cast<double>(batch)), {z},
                       [sel = std::move(sel), batch, pool](const Tensor&, const Tensor& g,
                                                           std::span<Tensor* const> gin) {
                           if (!gin[0]) return;
                           const double up = g[0] / static_cast<double>(batch);
                           for (std::size_t b = 0; b < batch; ++b)
                               (*gin[0])[b * pool + static_cast<std::size_t>(sel[b])] -= up;
                       });
}

std::vector<std::vector<std::size_t>> selection_histogram(const SelectionLog& log,
                                                          std::size_t classes,
                                                          std::size_t pool_size) {
    std::vector<std::vector<std::size_t>> counts(classes, std::vector<std::size_t>(pool_size, 0));
    for (const auto& r : log.records) {
        if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= classes)
            throw LabelError("selection record class " + std::to_string(r.class_id) +
                             " outside [0, " + std::to_string(classes) + ")");
        if (r.prompt < 0 || static_cast<std::size_t>(r.prompt) >= pool_size)
            throw ContractError("selection record prompt " + std::to_string(r.prompt) +
                                " outside pool of " + std::to_string(pool_size));
        ++counts[r.class_id][r.prompt];
    }
    return counts;
}

std::vector<ClassTaskAccuracy> task_id_accuracy(const SelectionLog& log,
                                                std::span<const int> task_of_prompt,
                                                std::size_t classes) {
    std::vector<std::size_t> hits(classes, 0);
    std::vector<ClassTaskAccuracy> out(classes);
    for (const auto& r : log.records) {
        if (r.prompt < 0 || static_cast<std::size_t>(r.prompt) >= task_of_prompt.size() ||
            task_of_prompt[r.prompt] < 0)
            throw ConfigError("prompt " + std::to_string(r.prompt) + " has no task assignment");
        if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= classes)
            throw LabelError("selection record class " + std::to_string(r.class_id) +
                             " outside [0, " + std::to_string(classes) + ")");
        ++out[r.class_id].n;
        hits[r.class_id] += task_of_prompt[r.prompt] == r.task_id;
    }
    for (std::size_t c = 0; c < classes; ++c)
        if (out[c].n)
            out[c].accuracy = static_cast<double>(hits[c]) / static_cast<double>(out[c].n);
    return out;
}

std::vector<TaskSimilarity> key_similarity_stats(const SelectionLog& log) {
    std::map<int, std::vector<double>> by_task;
    for (const auto& r : log.records) by_task[r.task_id].push_back(r.cosine);
    std::vector<TaskSimilarity> out;
    for (const auto& [task, xs] : by_task) {
        TaskSimilarity s;
        s.task_id = task;
        s.n = xs.size();
        for (double x : xs) s.mean += x;
        s.mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
        out.push_back(s);
    }
    return out;
}

void write_histogram_csv(std::ostream& os, const std::vector<std::vector<std::size_t>>& counts) {
    os << "class_id,prompt_id,count\n";
    for (std::size_t c = 0; c < counts.size(); ++c)
        for (std::size_t p = 0; p < counts[c].size(); ++p)
            os << c << ',' << p << ',' << counts[c][p] << '\n';
}

void write_task_accuracy_csv(std::ostream& os, std::span<const ClassTaskAccuracy> rows) {
    os << "class_id,n,accuracy\n";
    for (std::size_t c = 0; c < rows.size(); ++c) {
        os << c << ',' << rows[c].n << ',';
        if (rows[c].accuracy)
            os << format_real(*rows[c].accuracy);
        else
            os << "NA";
        os << '\n';
    }
}

void write_key_similarity_csv(std::ostream& os, std::span<const TaskSimilarity> rows) {
    os << "task_id,mean_cos,std_cos\n";
    for (const auto& r : rows)
        os << r.task_id << ',' << format_real(r.mean) << ',' << format_real(r.stddev) << '\n';
}

} // namespace oclb
