#include "oclbench/error.hpp"
#include "oclbench/promptsel.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace oclb;
using oclb::test::random_tensor;

namespace {

PromptPool pool_with_keys(const std::vector<Tensor>& keys, SelectionMode mode) {
    PromptPool pool;
    pool.mode = mode;
    for (const auto& k : keys) pool.entries.push_back({{}, k});
    return pool;
}

Tensor basis(std::size_t dim, std::size_t i, double scale = 1.0) {
    Tensor t({dim});
    t[i] = scale;
    return t;
}

} // namespace

TEST_CASE("P = 1 always selects prompt 0") {
    Rng rng(1);
    for (auto mode : {SelectionMode::similarity, SelectionMode::random, SelectionMode::fixed_single}) {
        const auto pool = pool_with_keys({random_tensor({4}, rng)}, mode);
        for (int i = 0; i < 20; ++i) CHECK(select_prompt(random_tensor({4}, rng).data(), pool, rng) == 0);
    }
}

TEST_CASE("similarity selection picks the aligned key") {
    Rng rng(2);
    std::vector<Tensor> keys;
    for (std::size_t i = 0; i < 6; ++i) keys.push_back(basis(6, i));
    const Tensor q = basis(6, 3, 2.5);
    CHECK(select_prompt(q.data(), pool_with_keys(keys, SelectionMode::similarity), rng) == 3);
    // Ties go to the lowest index.
    keys[1] = basis(6, 3, 7.0);
    CHECK(select_prompt(q.data(), pool_with_keys(keys, SelectionMode::similarity), rng) == 1);
    CHECK(select_prompt(q.data(), pool_with_keys(keys, SelectionMode::fixed_single), rng) == 0);
}

TEST_CASE("similarity selection ignores key scale") {
    Rng rng(3);
    std::vector<Tensor> keys;
    for (int i = 0; i < 10; ++i) keys.push_back(random_tensor({8}, rng));
    const auto pool = pool_with_keys(keys, SelectionMode::similarity);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor q = random_tensor({8}, rng);
        const auto before = select_prompt(q.data(), pool, rng);
        auto scaled = keys;
        const double factor = 1e3 * rng.uniform() + 1e-3;
        for (auto& x : scaled[rng.below(10)].data()) x *= factor;
        CHECK(select_prompt(q.data(), pool_with_keys(scaled, SelectionMode::similarity), rng) == before);
    }
}

TEST_CASE("random selection is uniform") {
    Rng rng(4);
    std::vector<Tensor> keys(10, Tensor::zeros({3}));
    const auto pool = pool_with_keys(keys, SelectionMode::random);
    std::vector<int> counts(10, 0);
    const Tensor q = Tensor::vector({1, 0, 0});
    for (int i = 0; i < 10000; ++i) ++counts[select_prompt(q.data(), pool, rng)];
    for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.1) <= 0.02);
}

TEST_CASE("query is the adapter-free class token and independent of the pool") {
    EncoderConfig cfg;
    cfg.seed = 4;
    const auto enc = init_encoder(cfg);
    Rng rng(5);
    const Tensor x = random_tensor({3, cfg.feature_dim()}, rng);
    const Tensor q = query_of(enc, x);
    CHECK(q == encode_frozen(enc, x));
    auto pool = PromptPool::init(4, 1, 2, cfg.dim, SelectionMode::similarity, rng);
    for (auto& e : pool.entries) e.key = random_tensor({cfg.dim}, rng);
    CHECK(query_of(enc, x) == q);
}

TEST_CASE("key pull loss") {
    Tape tape;
    const Tensor q = Tensor::matrix({{1, 2, 0}, {0, 0, 3}});
    const std::vector<Tensor> key_values{Tensor::vector({2, 4, 0}), Tensor::vector({1, 0, 0}),
                                         Tensor::vector({5, 5, 5})};
    std::vector<Var> keys;
    for (const auto& k : key_values) keys.push_back(tape.param(k));
    CHECK(key_pull_loss(q, keys, std::vector<int>{0, 1}).value().item() ==
          doctest::Approx(0.5)); // row 0 parallel (0), row 1 orthogonal (1)
    Var loss = key_pull_loss(Tensor::matrix({{1, 2, 0}}), keys, std::vector<int>{1});
    tape.backward(loss);
    CHECK(tape.grad(keys[1]) != nullptr);
    for (int p : {0, 2}) {
        const Tensor g = tape.grad_or_zeros(keys[static_cast<std::size_t>(p)]);
        CHECK(std::all_of(g.data().begin(), g.data().end(), [](double x) { return x == 0.0; }));
    }
    Tape t2;
    std::vector<Var> k2{t2.param(key_values[0])};
    CHECK(key_pull_loss(Tensor::matrix({{1, 2, 0}}), k2, std::vector<int>{0}).value().item() ==
          doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("selection histogram") {
    SelectionLog log;
    CHECK(selection_histogram(log, 3, 8) == std::vector<std::vector<std::size_t>>(3, std::vector<std::size_t>(8, 0)));
    log.records.push_back({2, 0, 7, 0.1});
    auto h = selection_histogram(log, 3, 8);
    CHECK(h[2][7] == 1);
    std::size_t total = 0;
    for (const auto& row : h)
        for (auto c : row) total += c;
    CHECK(total == 1);

    Rng rng(6);
    SelectionLog big;
    std::vector<std::size_t> per_class(5, 0);
    for (int i = 0; i < 1000; ++i) {
        const int c = static_cast<int>(rng.below(5));
        ++per_class[static_cast<std::size_t>(c)];
        big.records.push_back({c, 0, static_cast<int>(rng.below(4)), 0.0});
    }
    h = selection_histogram(big, 5, 4);
    for (std::size_t c = 0; c < 5; ++c) {
        std::size_t row = 0;
        for (auto v : h[c]) row += v;
        CHECK(row == per_class[c]);
    }
}

TEST_CASE("task-identification accuracy") {
    const std::vector<int> task_of{0, 1, 2};
    SelectionLog perfect;
    for (int i = 0; i < 30; ++i) perfect.records.push_back({i % 2, i % 3, i % 3, 0.0});
    for (const auto& r : task_id_accuracy(perfect, task_of, 3)) {
        if (r.n) CHECK(*r.accuracy == 1.0);
    }
    const auto acc = task_id_accuracy(perfect, task_of, 3);
    CHECK_FALSE(acc[2].accuracy.has_value()); // no records: absent, not zero
    CHECK(acc[2].n == 0);

    SelectionLog bad;
    bad.records.push_back({0, 0, 3, 0.0});
    CHECK_THROWS_AS(task_id_accuracy(bad, task_of, 3), ConfigError);

    Rng rng(7);
    SelectionLog uniform;
    const std::vector<int> ten{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    for (int i = 0; i < 10000; ++i)
        uniform.records.push_back({static_cast<int>(rng.below(2)), static_cast<int>(rng.below(10)),
                                   static_cast<int>(rng.below(10)), 0.0});
    for (const auto& r : task_id_accuracy(uniform, ten, 2)) CHECK(std::abs(*r.accuracy - 0.1) < 0.02);
}

TEST_CASE("key similarity statistics") {
    SelectionLog one;
    one.records.push_back({0, 3, 0, 0.4});
    const auto s = key_similarity_stats(one);
    REQUIRE(s.size() == 1);
    CHECK(s[0].task_id == 3);
    CHECK(s[0].mean == doctest::Approx(0.4));
    CHECK(s[0].stddev == 0.0);

    // Keys on per-task orthonormal directions, queries inside those subspaces.
    const std::size_t tasks = 4, dim = 8;
    Rng rng(8);
    std::vector<Tensor> keys;
    for (std::size_t t = 0; t < tasks; ++t) keys.push_back(basis(dim, 2 * t));
    const auto pool = pool_with_keys(keys, SelectionMode::similarity);
    SelectionLog log;
    for (int i = 0; i < 400; ++i) {
        const std::size_t t = rng.below(tasks);
        Tensor q({dim});
        q[2 * t] = 1.0 + rng.uniform();
        const auto p = select_prompt(q.data(), pool, rng);
        log.records.push_back({static_cast<int>(t), static_cast<int>(t), static_cast<int>(p),
                               cosine_similarity(q.data(), keys[p].data())});
    }
    for (const auto& st : key_similarity_stats(log)) CHECK(st.mean == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("analytics CSV schemas") {
    std::ostringstream h, a, s;
    write_histogram_csv(h, {{1, 0}, {0, 2}});
    CHECK(h.str() == "class_id,prompt_id,count\n0,0,1\n0,1,0\n1,0,0\n1,1,2\n");
    std::vector<ClassTaskAccuracy> rows{{4, 0.75}, {0, std::nullopt}};
    write_task_accuracy_csv(a, rows);
    CHECK(a.str() == "class_id,n,accuracy\n0,4,0.75\n1,0,NA\n");
    std::vector<TaskSimilarity> st{{0, 2, 0.5, 0.25}};
    write_key_similarity_csv(s, st);
    CHECK(s.str() == "task_id,mean_cos,std_cos\n0,0.5,0.25\n");
}
