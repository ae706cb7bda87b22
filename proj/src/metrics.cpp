#include "oclbench/metrics.hpp"

#include "oclbench/csv.hpp"
#include "oclbench/error.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace oclb {

namespace {

void check_unit(double x, const char* what) {
    if (!(x >= 0.0 && x <= 1.0))
        throw ContractError(std::string(what) + " must lie in [0, 1], got " + format_real(x));
}

} // namespace

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks), cells_(tasks * tasks) {}

void AccuracyMatrix::set(std::size_t t, std::size_t i, double accuracy) {
    if (t >= tasks_ || i > t)
        throw ContractError("accuracy cell (" + std::to_string(t) + ", " + std::to_string(i) +
                            ") outside the lower triangle of " + std::to_string(tasks_) + " tasks");
    check_unit(accuracy, "accuracy");
    cells_[t * tasks_ + i] = accuracy;
}

std::optional<double> AccuracyMatrix::get(std::size_t t, std::size_t i) const {
    if (t >= tasks_ || i > t) return std::nullopt;
    return cells_[t * tasks_ + i];
}

bool AccuracyMatrix::row_complete(std::size_t t) const {
    if (t >= tasks_) return false;
    for (std::size_t i = 0; i <= t; ++i)
        if (!cells_[t * tasks_ + i]) return false;
    return true;
}

void AucRecorder::add(std::size_t samples_seen, double accuracy) {
    check_unit(accuracy, "checkpoint accuracy");
    points_.emplace_back(samples_seen, accuracy);
}

double a_last(const AccuracyMatrix& m) {
    if (m.tasks() == 0 || !m.row_complete(m.tasks() - 1))
        throw ContractError("A_last needs the final accuracy-matrix row");
    const std::size_t T = m.tasks();
    double s = 0.0;
    for (std::size_t i = 0; i < T; ++i) s += *m.get(T - 1, i);
    return s / static_cast<double>(T);
}

double f_last(const AccuracyMatrix& m) {
    const std::size_t T = m.tasks();
    if (T == 0) throw ContractError("F_last on an empty accuracy matrix");
    if (T == 1) return 0.0;
    if (!m.row_complete(T - 1)) throw ContractError("F_last needs the final accuracy-matrix row");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < T; ++i) {
        const double last = *m.get(T - 1, i);
        double worst = -INFINITY;
        for (std::size_t j = i; j + 1 < T; ++j) {
            const auto a = m.get(j, i);
            if (!a) throw ContractError("F_last needs a(" + std::to_string(j) + ", " +
                                        std::to_string(i) + ")");
            worst = std::max(worst, *a - last);
        }
        s += worst;
    }
    return s / static_cast<double>(T - 1);
}

double a_auc(const AucRecorder& r) {
    if (r.empty()) throw ContractError("A_auc of an empty recorder");
    double s = 0.0;
    for (const auto& [n, a] : r.points()) s += a;
    return s / static_cast<double>(r.size());
}

SeedSummary aggregate_seeds(std::span<const double> values) {
    if (values.empty()) throw ContractError("aggregate_seeds needs at least one value");
    SeedSummary out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return out;
}

void write_metric_csv_header(std::ostream& os) { os << "seed,metric,value\n"; }

void write_metric_row(std::ostream& os, std::uint64_t seed, const std::string& metric,
                      double value) {
    os << seed << ',' << metric << ',' << format_real(value) << '\n';
}

void write_anytime_csv(std::ostream& os, const AucRecorder& r) {
    os << "samples_seen,accuracy\n";
    for (const auto& [n, a] : r.points()) os << n << ',' << format_real(a) << '\n';
}

} // namespace oclb
