#include "oclbench/error.hpp"
#include "oclbench/gradcheck.hpp"
#include "oclbench/ndgrad.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace oclb;
using oclb::test::random_tensor;

namespace {

// Reduces any op output to a scalar with fixed random weights so every output
// entry contributes a distinct amount to the gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = random_tensor(y.shape(), rng);
    return sum(mul(y, y.tape().constant(std::move(w))));
}

double check(const std::function<Var(std::span<const Var>)>& op, std::vector<Tensor>& inputs,
             std::uint64_t seed = 99) {
    std::vector<GradCheckParam> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back({"x" + std::to_string(i), &inputs[i]});
    const ScalarFn f = [&](Tape&, std::span<const Var> v) { return weighted_sum(op(v), seed); };
    return grad_check(f, params, 1e-5).max_rel_error;
}

} // namespace

TEST_CASE("every op's gradient matches central differences") {
    Rng rng(1);
    auto T = [&](Shape s) { return random_tensor(std::move(s), rng); };
    const double tol = 1e-7;

    SUBCASE("matmul") {
        std::vector<Tensor> x{T({3, 4}), T({4, 5})};
        CHECK(check([](auto v) { return matmul(v[0], v[1]); }, x) < tol);
    }
    SUBCASE("transpose") {
        std::vector<Tensor> x{T({3, 4})};
        CHECK(check([](auto v) { return transpose(v[0]); }, x) < tol);
    }
    SUBCASE("add sub mul scale") {
        std::vector<Tensor> x{T({2, 3}), T({2, 3})};
        CHECK(check([](auto v) { return scale(mul(add(v[0], v[1]), sub(v[0], v[1])), -1.5); }, x) < tol);
    }
    SUBCASE("add_row") {
        std::vector<Tensor> x{T({4, 3}), T({3})};
        CHECK(check([](auto v) { return add_row(v[0], v[1]); }, x) < tol);
    }
    SUBCASE("sum and mean") {
        std::vector<Tensor> x{T({3, 3})};
        CHECK(check([](auto v) { return add(sum(mul(v[0], v[0])), mean(v[0])); }, x) < tol);
    }
    SUBCASE("softmax_rows") {
        std::vector<Tensor> x{T({3, 5})};
        CHECK(check([](auto v) { return softmax_rows(v[0]); }, x) < tol);
    }
    SUBCASE("layer_norm") {
        std::vector<Tensor> x{T({4, 6}), T({6}), T({6})};
        CHECK(check([](auto v) { return layer_norm(v[0], v[1], v[2]); }, x) < tol);
    }
    SUBCASE("gelu") {
        std::vector<Tensor> x{T({3, 4})};
        CHECK(check([](auto v) { return gelu(v[0]); }, x) < tol);
    }
    SUBCASE("concat, slice, gather, reshape") {
        std::vector<Tensor> x{T({2, 3}), T({4, 3}), T({6, 2})};
        CHECK(check(
                  [](auto v) {
                      Var rows = concat_rows(v[0], v[1]);                  // 6 x 3
                      std::vector<Var> parts{rows, v[2]};
                      Var wide = concat_cols(parts);                        // 6 x 5
                      Var picked = gather_rows(wide, {5, 0, 0, 3});         // 4 x 5
                      Var cut = slice_cols(slice_rows(picked, 1, 3), 1, 3); // 3 x 3
                      return reshape(cut, {9});
                  },
                  x) < tol);
    }
}

TEST_CASE("fan-out accumulates gradients") {
    Tape tape;
    const Tensor xv = Tensor::vector({1.5, -2.0, 0.25});
    Var x = tape.param(xv);
    Var y = add(sum(mul(x, x)), sum(x)); // d/dx = 2x + 1
    tape.backward(y);
    const Tensor& g = *tape.grad(x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == 2 * xv[i] + 1);
}

TEST_CASE("constants never get gradient storage") {
    Tape tape;
    const Tensor w = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor p = Tensor::matrix({{0.5, 0.5}});
    Var frozen = tape.constant_ref(w);
    Var learn = tape.param(p);
    tape.backward(sum(matmul(learn, frozen)));
    CHECK(tape.grad(frozen) == nullptr);
    REQUIRE(tape.grad(learn) != nullptr);
    CHECK(*tape.grad(learn) == Tensor::matrix({{3, 7}}));
    CHECK(tape.is_learnable_leaf(learn));
    CHECK_FALSE(tape.is_learnable_leaf(frozen));
}

TEST_CASE("backward needs a scalar") {
    Tape tape;
    const Tensor p = Tensor::vector({1, 2});
    Var x = tape.param(p);
    CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), ContractError);
}

TEST_CASE("shape mismatches are dimension errors") {
    Tape tape;
    Var a = tape.constant(Tensor::zeros({2, 3}));
    Var b = tape.constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
    CHECK_THROWS_AS(add(a, tape.constant(Tensor::zeros({3, 2}))), DimensionError);
    CHECK_THROWS_AS(add_row(a, tape.constant(Tensor::zeros({2}))), DimensionError);
    CHECK_THROWS_AS(slice_rows(a, 1, 2), DimensionError);
    CHECK_THROWS_AS(reshape(a, {5}), DimensionError);
}

TEST_CASE("layer_norm forward matches a long-double oracle") {
    Rng rng(4);
    const Tensor x = random_tensor({3, 7}, rng), g = random_tensor({7}, rng), b = random_tensor({7}, rng);
    Tape tape;
    const Tensor y = layer_norm(tape.constant(x), tape.constant(g), tape.constant(b)).value();
    for (std::size_t r = 0; r < 3; ++r) {
        long double mu = 0, var = 0;
        for (std::size_t c = 0; c < 7; ++c) mu += x.at(r, c);
        mu /= 7;
        for (std::size_t c = 0; c < 7; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
        var /= 7;
        for (std::size_t c = 0; c < 7; ++c) {
            const long double want = (x.at(r, c) - mu) / std::sqrt(var + 1e-6L) * g[c] + b[c];
            CHECK(std::abs(y.at(r, c) - static_cast<double>(want)) < 1e-13);
        }
    }
}

TEST_CASE("gelu uses the tanh approximation") {
    for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
        const double want = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
        CHECK(gelu_value(x) == doctest::Approx(want).epsilon(1e-15));
        const double h = 1e-6;
        CHECK(gelu_derivative(x) == doctest::Approx((gelu_value(x + h) - gelu_value(x - h)) / (2 * h)).epsilon(1e-8));
    }
}

TEST_CASE("grad_check skips frozen parameters") {
    Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({3, 4});
    std::vector<GradCheckParam> params{{"a", &a, true}, {"b", &b, false}};
    const ScalarFn f = [](Tape&, std::span<const Var> v) { return sum(mul(v[0], v[1])); };
    const auto r = grad_check(f, params, 1e-4);
    CHECK(r.entries_checked == 2);
    CHECK(r.max_rel_error < 1e-9);
    CHECK(a == Tensor::vector({1, 2}));
}
