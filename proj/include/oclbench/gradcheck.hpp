#pragma once

#include "oclbench/ndgrad.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace oclb {

struct GradCheckParam {
    std::string name;
    Tensor* value = nullptr;
    bool learnable = true; // frozen entries are registered as constants and skipped
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t entries_checked = 0;
};

// Builds a scalar from leaves registered on the given tape (one Var per param,
// in order). Must be a pure function of the parameter values.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients against central differences
//   fd = (f(x + h) - f(x - h)) / (2h)
// and reports max |ad - fd| / max(1, |fd|) over all learnable entries.
GradCheckReport grad_check(const ScalarFn& f, std::span<GradCheckParam> params, double step);

} // namespace oclb
