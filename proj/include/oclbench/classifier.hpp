#pragma once

// Classification heads over encoder features g [batch x dim].
//
// Both heads keep one parameter tensor per class so that a class absent from
// a masked minibatch gets an all-zero gradient on its own tensors, which the
// optimizer then leaves untouched.

#include "oclbench/ndgrad.hpp"
#include "oclbench/rng.hpp"

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace oclb {

inline constexpr double norm_epsilon = 1e-8;

enum class HeadKind { cosine, linear };

HeadKind parse_head_kind(std::string_view text);
std::string_view to_string(HeadKind kind) noexcept;

struct CosineHead {
    std::vector<Tensor> prototypes; // C tensors of [dim]
    double tau = 0.1;

    // Random unit-norm prototypes.
    static CosineHead init(std::size_t classes, std::size_t dim, double tau, Rng& rng);
};

struct LinearHead {
    std::vector<Tensor> weights; // C rows of [dim]
    std::vector<Tensor> biases;  // C tensors of [1]

    // Rows drawn from N(0, 1/(3 dim)), the variance of the usual uniform
    // fan-in init; zero biases.
    static LinearHead init(std::size_t classes, std::size_t dim, Rng& rng);
};

// z[b][c] = cos(g_b, c_c) / tau, norms floored at norm_epsilon.
Var cosine_logits(Var g, std::span<const Var> prototypes, double tau);
// z[b][c] = g_b . w_c + b_c
Var linear_logits(Var g, std::span<const Var> weights, std::span<const Var> biases);

// Minibatch logit mask: class c is allowed iff it occurs in the batch labels.
// A disallowed class is removed from the log-sum-exp (the -inf entry).
struct LogitMask {
    std::vector<bool> allowed;

    std::size_t classes() const noexcept { return allowed.size(); }
    bool is_masked(std::size_t c) const { return !allowed.at(c); }
    std::size_t allowed_count() const noexcept;
};

LogitMask make_mask(std::span<const int> labels, std::size_t classes);
LogitMask full_mask(std::size_t classes);

// Mean over the batch of -log softmax(z_b restricted to allowed classes)[y_b].
Var masked_ce_loss(Var logits, const LogitMask& mask, std::span<const int> labels);
// Unmasked cross-entropy (every class allowed).
Var cross_entropy(Var logits, std::span<const int> labels);

// Row softmax with masked classes at exactly zero probability.
Tensor masked_softmax(const Tensor& logits, const LogitMask& mask);

// Row argmax over all classes; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

// Head selected at run time, with the tape plumbing shared by trainer and
// evaluation.
class ClassifierHead {
public:
    ClassifierHead() = default;
    static ClassifierHead make_cosine(CosineHead head);
    static ClassifierHead make_linear(LinearHead head);

    HeadKind kind() const noexcept { return kind_; }
    std::size_t classes() const noexcept;
    const CosineHead& cosine() const { return cosine_; }
    const LinearHead& linear() const { return linear_; }
    CosineHead& cosine() { return cosine_; }
    LinearHead& linear() { return linear_; }

    // Parameters in a fixed order: prototypes, or weights then biases.
    std::vector<Tensor*> parameters();

    struct Registered {
        std::vector<Var> leaves; // same order as parameters()
        Var logits;
    };
    Registered logits(Tape& tape, Var features) const;

    // Off-tape logits for evaluation.
    Tensor logits(const Tensor& features) const;
    std::vector<int> predict(const Tensor& features) const;

    // Per-class L2 norm of the prototype (cosine) or weight row (linear).
    std::vector<double> class_norms() const;

private:
    HeadKind kind_ = HeadKind::cosine;
    CosineHead cosine_;
    LinearHead linear_;
};

} // namespace oclb
