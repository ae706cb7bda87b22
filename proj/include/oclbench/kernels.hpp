#pragma once

// Inner loops shared by the autodiff ops. Each kernel has a serial reference and
// an OpenMP version; the parallel versions split work over independent output
// rows (or independent (sample, head) pairs) and keep the per-element
// accumulation order of the reference, so both produce identical bits.

#include <cstddef>
#include <span>
#include <vector>

namespace oclb::kernels {

enum class Exec { serial, parallel, automatic };

// Work (in multiply-adds) below which `automatic` stays serial.
inline constexpr std::size_t parallel_threshold = 1u << 15;

bool openmp_enabled() noexcept;
int max_threads() noexcept;

// c[m x n] = a[m x k] * b[k x n]; each entry sums over k from 0 upwards.
void matmul_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
void matmul_parallel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, Exec exec = Exec::automatic);

// Numerically stable softmax of one row: subtract the max, exponentiate, divide
// by the left-to-right sum.
void softmax_row(const double* in, double* out, std::size_t n) noexcept;

// Batched multi-head attention with optional per-sample key/value prefixes.
//
// qkv holds `batch * tokens` rows of width 3*dim laid out as [q | k | v].
// For sample b, prefix_of[b] indexes into prefix_keys / prefix_values (each
// prefix_len x dim) or is -1 for no prefix. Scores use 1/sqrt(dim / heads).
struct AttentionShape {
    std::size_t batch = 0;
    std::size_t tokens = 0;
    std::size_t dim = 0;
    std::size_t heads = 1;
    std::size_t prefix_len = 0;

    std::size_t head_dim() const noexcept { return dim / heads; }
    std::size_t keys() const noexcept { return prefix_len + tokens; }
    // Size of the saved probability block: batch * heads * tokens * keys.
    std::size_t probs_size() const noexcept { return batch * heads * tokens * keys(); }
};

struct AttentionPrefixes {
    std::vector<const double*> keys;   // each prefix_len x dim
    std::vector<const double*> values; // each prefix_len x dim
    std::span<const int> prefix_of;    // per sample, -1 for none
};

void attention_forward(const AttentionShape& s, const double* qkv,
                       const AttentionPrefixes& prefixes, double* out, double* probs,
                       Exec exec = Exec::automatic);

// grad_qkv is accumulated into. grad_prefix_keys / grad_prefix_values receive
// per-sample contributions of shape [batch x prefix_len x dim]; the caller folds
// them into the shared prefix gradients in sample order.
void attention_backward(const AttentionShape& s, const double* qkv,
                        const AttentionPrefixes& prefixes, const double* probs,
                        const double* grad_out, double* grad_qkv, double* grad_prefix_keys,
                        double* grad_prefix_values, Exec exec = Exec::automatic);

} // namespace oclb::kernels
