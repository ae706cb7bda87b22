#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oclb {

// a(t, i): accuracy on task i's classes after training through task t, defined
// for t >= i (0-based here).
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(std::size_t tasks = 0);

    std::size_t tasks() const noexcept { return tasks_; }
    void set(std::size_t t, std::size_t i, double accuracy);
    std::optional<double> get(std::size_t t, std::size_t i) const;
    bool row_complete(std::size_t t) const;

private:
    std::size_t tasks_;
    std::vector<std::optional<double>> cells_;
};

// Anytime-inference checkpoints (samples seen, accuracy), one every `interval`
// training samples.
class AucRecorder {
public:
    explicit AucRecorder(std::size_t interval = 100) : interval_(interval) {}

    void add(std::size_t samples_seen, double accuracy);
    std::size_t interval() const noexcept { return interval_; }
    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }
    const std::vector<std::pair<std::size_t, double>>& points() const noexcept { return points_; }

private:
    std::size_t interval_;
    std::vector<std::pair<std::size_t, double>> points_;
};

// (1/T) sum_i a(T, i). Needs the last row complete.
double a_last(const AccuracyMatrix& m);
// (1/(T-1)) sum_{i<T} max_{i<=j<T} (a(j, i) - a(T, i)); 0 when T = 1. Drops are
// not clamped, so the value can be negative.
double f_last(const AccuracyMatrix& m);
// Mean of the recorded checkpoint accuracies.
double a_auc(const AucRecorder& r);

struct SeedSummary {
    double mean = 0.0;
    double stddev = 0.0; // population
};
SeedSummary aggregate_seeds(std::span<const double> values);

// seed,metric,value
void write_metric_csv_header(std::ostream& os);
void write_metric_row(std::ostream& os, std::uint64_t seed, const std::string& metric,
                      double value);
// samples_seen,accuracy
void write_anytime_csv(std::ostream& os, const AucRecorder& r);

} // namespace oclb
