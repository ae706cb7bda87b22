#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every value computed from its leaves. Leaves are either
// learnable parameters (gradient requested) or frozen constants (no gradient
// storage, ever). Operations are free functions taking and returning Var
// handles; module code adds its own fused operations through Tape::record.

#include "oclbench/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oclb {

class Tape;

class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape& tape() const noexcept { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Called once per node during the reverse sweep. grad_in[k] is null when input
// k needs no gradient; otherwise it points at that input's (already allocated)
// gradient, which the rule must add into.
using BackwardFn = std::function<void(const Tensor& out, const Tensor& grad_out,
                                      std::span<Tensor* const> grad_in)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Frozen leaf owning its value.
    Var constant(Tensor value);
    // Frozen leaf borrowing a tensor that outlives the tape.
    Var constant_ref(const Tensor& value);
    Var constant_ref(Tensor&&) = delete;
    // Learnable leaf borrowing a parameter tensor that outlives the tape.
    Var param(const Tensor& value);
    Var param(Tensor&&) = delete;

    Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    // Reverse sweep from a scalar node. Throws ContractError otherwise.
    void backward(Var loss);

    // Gradient of a node after backward(); nullptr when none was allocated.
    const Tensor* grad(Var v) const;
    // Gradient, or zeros shaped like the node when it received none.
    Tensor grad_or_zeros(Var v) const;

    const Tensor& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool is_learnable_leaf(Var v) const { return nodes_.at(v.id()).learnable; }
    const std::string& op(Var v) const { return nodes_.at(v.id()).op; }
    std::size_t size() const noexcept { return nodes_.size(); }
    // Number of nodes holding gradient storage after the last backward().
    std::size_t grad_storage_count() const noexcept;

private:
    struct Node {
        std::string op;
        Tensor owned;
        const Tensor* borrowed = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool learnable = false;

        const Tensor& value() const { return borrowed ? *borrowed : owned; }
    };

    Var push(Node node);

    std::deque<Node> nodes_;
    std::vector<std::optional<Tensor>> grads_;
};

// ---- operations ---------------------------------------------------------

// [m x k] * [k x n]
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// x [n x d] + row [d] added to every row.
Var add_row(Var x, Var row);
Var sum(Var a);
Var mean(Var a);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Var gelu(Var x);
Var concat_rows(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var reshape(Var x, Shape shape);

// Scalar gelu and its derivative; shared with finite-difference oracles.
double gelu_value(double x) noexcept;
double gelu_derivative(double x) noexcept;

} // namespace oclb
