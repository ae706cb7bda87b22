#include "oclbench/gradcheck.hpp"

#include "oclbench/error.hpp"

#include <algorithm>
#include <cmath>

namespace oclb {

namespace {

std::vector<Var> register_params(Tape& tape, std::span<GradCheckParam> params) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params)
        vars.push_back(p.learnable ? tape.param(*p.value) : tape.constant_ref(*p.value));
    return vars;
}

double evaluate(const ScalarFn& f, std::span<GradCheckParam> params) {
    Tape tape;
    const auto vars = register_params(tape, params);
    return f(tape, vars).value().item();
}

} // namespace

GradCheckReport grad_check(const ScalarFn& f, std::span<GradCheckParam> params, double step) {
    if (!(step > 0.0)) throw ContractError("grad_check needs a positive step");

    std::vector<Tensor> analytic;
    {
        Tape tape;
        const auto vars = register_params(tape, params);
        Var loss = f(tape, vars);
        tape.backward(loss);
        for (const Var& v : vars) analytic.push_back(tape.grad_or_zeros(v));
    }

    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].learnable) continue;
        Tensor& t = *params[p].value;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + step;
            const double plus = evaluate(f, params);
            t[i] = saved - step;
            const double minus = evaluate(f, params);
            t[i] = saved;
            const double fd = (plus - minus) / (2.0 * step);
            const double err = std::abs(analytic[p][i] - fd) / std::max(1.0, std::abs(fd));
            ++report.entries_checked;
            if (report.entries_checked == 1 || err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = params[p].name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

} // namespace oclb
