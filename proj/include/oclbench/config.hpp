#pragma once

// Flat `key = value` experiment configuration. `#` starts a comment; blank
// lines are ignored; every key is optional and unknown keys are rejected.

#include "oclbench/encoder.hpp"
#include "oclbench/stream.hpp"
#include "oclbench/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace oclb {

struct DataConfig {
    std::size_t samples_per_class = 1000;
    double test_fraction = 0.2;
    double cluster_spread = 1.0;
    double cluster_separation = 10.0;
    std::uint64_t seed = 7;
    // When both are set the dataset comes from IDX files instead of the
    // synthetic generator.
    std::string idx_images;
    std::string idx_labels;

    bool uses_idx() const noexcept { return !idx_images.empty(); }
};

struct ExperimentConfig {
    SiBlurryConfig scenario;
    EncoderConfig encoder;
    std::string weights; // optional encoder weight file
    DataConfig data;
    TrainConfig train;
    std::size_t eval_interval = 100;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out = "results";

    RunConfig run_config() const;
};

// Errors are ConfigError with the offending line and key in the message.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key with its effective value, in parse_config syntax.
std::string format_config(const ExperimentConfig& cfg);

} // namespace oclb
