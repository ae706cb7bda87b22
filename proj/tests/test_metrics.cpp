#include "oclbench/error.hpp"
#include "oclbench/metrics.hpp"
#include "oclbench/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace oclb;

namespace {

// Full T x T table with NaN above the diagonal, filled from uniform draws.
std::vector<std::vector<double>> random_table(std::size_t T, Rng& rng) {
    std::vector<std::vector<double>> a(T, std::vector<double>(T, NAN));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i <= t; ++i) a[t][i] = rng.uniform();
    return a;
}

AccuracyMatrix to_matrix(const std::vector<std::vector<double>>& a) {
    AccuracyMatrix m(a.size());
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t i = 0; i <= t; ++i) m.set(t, i, a[t][i]);
    return m;
}

long double last_oracle(const std::vector<std::vector<double>>& a) {
    long double s = 0;
    for (double x : a.back()) s += x;
    return s / a.size();
}

// 1-based transcription: (1/(T-1)) sum_{i=1}^{T-1} max_{j in i..T-1} (a_{j,i} - a_{T,i}).
long double forgetting_oracle(const std::vector<std::vector<double>>& a) {
    const std::size_t T = a.size();
    if (T == 1) return 0;
    long double s = 0;
    for (std::size_t i = 1; i <= T - 1; ++i) {
        long double best = -1e9L;
        for (std::size_t j = i; j <= T - 1; ++j)
            best = std::max(best, static_cast<long double>(a[j - 1][i - 1]) - a[T - 1][i - 1]);
        s += best;
    }
    return s / (T - 1);
}

} // namespace

TEST_CASE("a_last spot values") {
    AccuracyMatrix m(2);
    m.set(0, 0, 0.9);
    m.set(1, 0, 0.5);
    m.set(1, 1, 0.7);
    CHECK(a_last(m) == doctest::Approx(0.6).epsilon(1e-15));

    AccuracyMatrix ones(4);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t i = 0; i <= t; ++i) ones.set(t, i, 1.0);
    CHECK(a_last(ones) == 1.0);

    AccuracyMatrix partial(3);
    partial.set(2, 0, 0.5);
    CHECK_THROWS_AS(a_last(partial), ContractError);
    CHECK_THROWS_AS(a_last(AccuracyMatrix(0)), ContractError);
}

TEST_CASE("f_last spot values") {
    AccuracyMatrix up(2);
    up.set(0, 0, 0.6);
    up.set(1, 0, 0.8);
    up.set(1, 1, 0.3);
    CHECK(f_last(up) == doctest::Approx(-0.2).epsilon(1e-14));

    AccuracyMatrix down(2);
    down.set(0, 0, 0.8);
    down.set(1, 0, 0.6);
    down.set(1, 1, 0.3);
    CHECK(f_last(down) == doctest::Approx(0.2).epsilon(1e-14));

    AccuracyMatrix one(1);
    one.set(0, 0, 0.4);
    CHECK(f_last(one) == 0.0);
}

TEST_CASE("a_auc spot values") {
    AucRecorder r;
    CHECK_THROWS_AS(a_auc(r), ContractError);
    r.add(100, 0.9);
    CHECK(a_auc(r) == 0.9);
    AucRecorder two;
    two.add(100, 0.0);
    two.add(200, 1.0);
    CHECK(a_auc(two) == 0.5);
    CHECK_THROWS_AS(two.add(300, 1.5), ContractError);
}

TEST_CASE("matrix cell rules") {
    AccuracyMatrix m(3);
    CHECK_THROWS_AS(m.set(0, 1, 0.5), ContractError);
    CHECK_THROWS_AS(m.set(3, 0, 0.5), ContractError);
    CHECK_THROWS_AS(m.set(1, 0, -0.1), ContractError);
    CHECK_THROWS_AS(m.set(1, 0, NAN), ContractError);
    CHECK_FALSE(m.get(1, 0));
    CHECK_FALSE(m.get(0, 2));
    m.set(1, 0, 0.25);
    CHECK(*m.get(1, 0) == 0.25);
}

TEST_CASE("metric oracles on 1000 random tables") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t T = 1 + rng.below(8);
        const auto a = random_table(T, rng);
        const auto m = to_matrix(a);
        CHECK(std::abs(a_last(m) - static_cast<double>(last_oracle(a))) <= 1e-12);
        CHECK(std::abs(f_last(m) - static_cast<double>(forgetting_oracle(a))) <= 1e-12);
        CHECK(a_last(m) >= 0.0);
        CHECK(a_last(m) <= 1.0);
        CHECK(f_last(m) >= -1.0);
        CHECK(f_last(m) <= 1.0);

        AucRecorder r;
        const std::size_t L = 1 + rng.below(60);
        long double s = 0;
        for (std::size_t l = 0; l < L; ++l) {
            const double x = rng.uniform();
            s += x;
            r.add((l + 1) * 100, x);
        }
        CHECK(std::abs(a_auc(r) - static_cast<double>(s / L)) <= 1e-12);
    }
}

TEST_CASE("constant inputs give trivial metrics") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t T = 1 + rng.below(6);
        std::vector<double> col(T);
        for (auto& x : col) x = rng.uniform();
        AccuracyMatrix m(T);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i <= t; ++i) m.set(t, i, col[i]);
        CHECK(f_last(m) == 0.0);

        const double c = rng.uniform();
        AucRecorder r;
        for (std::size_t l = 0; l < 1 + rng.below(40); ++l) r.add(l, c);
        CHECK(a_auc(r) == doctest::Approx(c).epsilon(1e-15));
    }
}

TEST_CASE("seed aggregation") {
    const std::vector<double> one{0.8};
    CHECK(aggregate_seeds(one).mean == 0.8);
    CHECK(aggregate_seeds(one).stddev == 0.0);
    const std::vector<double> two{0.6, 0.8};
    CHECK(aggregate_seeds(two).mean == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(aggregate_seeds(two).stddev == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_THROWS_AS(aggregate_seeds(std::vector<double>{}), ContractError);

    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(5);
        for (auto& x : v) x = rng.uniform();
        long double mean = 0;
        for (double x : v) mean += x;
        mean /= 5;
        long double var = 0;
        for (double x : v) var += (x - mean) * (x - mean);
        const auto s = aggregate_seeds(v);
        CHECK(std::abs(s.mean - static_cast<double>(mean)) <= 1e-15);
        CHECK(std::abs(s.stddev - static_cast<double>(std::sqrt(var / 5))) <= 1e-14);
    }
}

TEST_CASE("metric CSVs") {
    std::ostringstream os;
    write_metric_csv_header(os);
    write_metric_row(os, 3, "a_last", 0.1);
    CHECK(os.str() == "seed,metric,value\n3,a_last,0.1\n");

    AucRecorder r(50);
    r.add(50, 0.25);
    r.add(100, 0.5);
    std::ostringstream curve;
    write_anytime_csv(curve, r);
    CHECK(curve.str() == "samples_seen,accuracy\n50,0.25\n100,0.5\n");
}
