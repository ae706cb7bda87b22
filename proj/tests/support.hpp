#pragma once

#include "oclbench/rng.hpp"
#include "oclbench/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

namespace oclb::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = rng.normal(0.0, stddev);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Scratch directory under the build tree (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
    const char* root = std::getenv("OCLBENCH_TEST_TMP");
    auto dir = (root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "oclbench-tests") / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace oclb::test
