#pragma once

#include "oclbench/config.hpp"
#include "oclbench/gradcheck.hpp"
#include "oclbench/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace oclb {

struct ExperimentData {
    Dataset train;
    Dataset test;
    EncoderParams encoder;
};

// Dataset (synthetic or IDX), held-out split and frozen encoder. None of these
// depend on the run seeds.
ExperimentData prepare_experiment(const ExperimentConfig& cfg);

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::optional<RunResult> result;
    std::string error; // set when the seed failed
};

struct ExperimentReport {
    std::filesystem::path out;
    std::vector<SeedOutcome> seeds;

    bool ok() const;
};

// Seeds run concurrently, at most seed_thread_cap() at a time. Files:
//   config.txt, metrics.csv, aggregate.csv
//   seed_<s>/{metrics,anytime,accuracy_matrix,scenario,norms}.csv
//   seed_<s>/{selection_histogram,task_id_accuracy,key_similarity}.csv (pool adapter)
ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

void write_seed_artifacts(const std::filesystem::path& dir, const RunResult& r, std::size_t classes,
                          std::size_t pool_size);

// metric,mean,std over the seeds that produced the metric.
void write_aggregate_csv(std::ostream& os, const std::vector<SeedOutcome>& seeds);

// Scenario CSV of the training split for one seed.
void dump_scenario(const ExperimentConfig& cfg, std::uint64_t seed, std::ostream& os);

// Finite-difference check of every learnable tensor on one stream batch of
// the configured model.
struct ModelGradCheck {
    GradCheckReport report;
    std::size_t parameters = 0;
    std::size_t batch = 0;
};
ModelGradCheck grad_check_config(const ExperimentConfig& cfg, std::uint64_t seed, double step = 1e-3);

// OCLBENCH_THREADS when set (must be a positive integer), else the OpenMP
// thread count.
std::size_t seed_thread_cap();

} // namespace oclb
