#include "oclbench/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace oclb::kernels {

bool openmp_enabled() noexcept {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() noexcept {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

bool go_parallel(Exec exec, std::size_t work) noexcept {
#ifdef _OPENMP
    if (exec == Exec::serial || omp_in_parallel()) return false;
    return exec == Exec::parallel || work >= parallel_threshold;
#else
    (void)exec;
    (void)work;
    return false;
#endif
}

// Rows [i0, i1) of c. Tiles of 4 rows x 8 columns live in registers; every
// c[i][j] still starts from zero and adds its products in ascending k, so the
// result does not depend on the tiling or on how rows are split over threads.
#pragma GCC diagnostic ignored "-Wpsabi" // internal helpers only, never an ABI boundary
typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) noexcept {
    v4d v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store4(double* p, v4d v) noexcept { std::memcpy(p, &v, sizeof v); }

#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__)
__attribute__((target_clones("avx2", "default")))
#endif
void matmul_rows(const double* a, const double* b, double* c, std::size_t i0, std::size_t i1,
                 std::size_t k, std::size_t n) noexcept {
    const std::size_t n8 = n - n % 8;
    std::size_t i = i0;
    for (; i + 4 <= i1; i += 4) {
        for (std::size_t j = 0; j < n8; j += 8) {
            v4d acc[4][2] = {};
            for (std::size_t kk = 0; kk < k; ++kk) {
                const v4d b0 = load4(b + kk * n + j), b1 = load4(b + kk * n + j + 4);
                for (std::size_t r = 0; r < 4; ++r) {
                    const double x = a[(i + r) * k + kk];
                    acc[r][0] += x * b0;
                    acc[r][1] += x * b1;
                }
            }
            for (std::size_t r = 0; r < 4; ++r) {
                store4(c + (i + r) * n + j, acc[r][0]);
                store4(c + (i + r) * n + j + 4, acc[r][1]);
            }
        }
    }
    for (; i < i1; ++i)
        for (std::size_t j = 0; j < n8; j += 8) {
            v4d acc0 = {}, acc1 = {};
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double x = a[i * k + kk];
                acc0 += x * load4(b + kk * n + j);
                acc1 += x * load4(b + kk * n + j + 4);
            }
            store4(c + i * n + j, acc0);
            store4(c + i * n + j + 4, acc1);
        }
    for (std::size_t r = i0; r < i1; ++r)
        for (std::size_t j = n8; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a[r * k + kk] * b[kk * n + j];
            c[r * n + j] = acc;
        }
}

} // namespace

void matmul_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    matmul_rows(a, b, c, 0, m, k, n);
}

void matmul_parallel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
    // Panels of 16 rows keep the 4-row tiles intact.
    const auto panels = static_cast<std::ptrdiff_t>((m + 15) / 16);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < panels; ++p) {
        const std::size_t i0 = static_cast<std::size_t>(p) * 16;
        matmul_rows(a, b, c, i0, std::min(m, i0 + 16), k, n);
    }
}

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, Exec exec) {
    if (go_parallel(exec, m * k * n))
        matmul_parallel(a, b, c, m, k, n);
    else
        matmul_serial(a, b, c, m, k, n);
}

void softmax_row(const double* in, double* out, std::size_t n) noexcept {
    if (n == 0) return;
    double mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = in[j] > mx ? in[j] : mx;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        sum += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
}

namespace {

struct HeadView {
    const AttentionShape& s;
    const double* qkv;
    const AttentionPrefixes& prefixes;
    std::size_t b;
    std::size_t h;

    std::size_t stride() const noexcept { return 3 * s.dim; }
    int prefix() const noexcept {
        return prefixes.prefix_of.empty() ? -1 : prefixes.prefix_of[b];
    }
    std::size_t live_prefix() const noexcept { return prefix() < 0 ? 0 : s.prefix_len; }

    const double* query(std::size_t i) const noexcept {
        return qkv + (b * s.tokens + i) * stride() + h * s.head_dim();
    }
    // Key j in the (possibly prefixed) key sequence.
    const double* key(std::size_t j) const noexcept {
        const std::size_t m = live_prefix();
        if (j < m) return prefixes.keys[prefix()] + j * s.dim + h * s.head_dim();
        return qkv + (b * s.tokens + (j - m)) * stride() + s.dim + h * s.head_dim();
    }
    const double* value(std::size_t j) const noexcept {
        const std::size_t m = live_prefix();
        if (j < m) return prefixes.values[prefix()] + j * s.dim + h * s.head_dim();
        return qkv + (b * s.tokens + (j - m)) * stride() + 2 * s.dim + h * s.head_dim();
    }
};

void forward_head(const AttentionShape& s, const double* qkv, const AttentionPrefixes& prefixes,
                  std::size_t b, std::size_t h, double* out, double* probs) {
    const HeadView view{s, qkv, prefixes, b, h};
    const std::size_t dh = s.head_dim();
    const std::size_t nkeys = view.live_prefix() + s.tokens;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> scores(nkeys);
    for (std::size_t i = 0; i < s.tokens; ++i) {
        const double* q = view.query(i);
        for (std::size_t j = 0; j < nkeys; ++j) {
            const double* k = view.key(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < dh; ++c) dot += q[c] * k[c];
            scores[j] = dot * scale;
        }
        double* p = probs + ((b * s.heads + h) * s.tokens + i) * s.keys();
        softmax_row(scores.data(), p, nkeys);
        double* o = out + (b * s.tokens + i) * s.dim + h * dh;
        for (std::size_t c = 0; c < dh; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nkeys; ++j) acc += p[j] * view.value(j)[c];
            o[c] = acc;
        }
    }
}

void backward_head(const AttentionShape& s, const double* qkv, const AttentionPrefixes& prefixes,
                   const double* probs, const double* grad_out, std::size_t b, std::size_t h,
                   double* grad_qkv, double* grad_pk, double* grad_pv) {
    const HeadView view{s, qkv, prefixes, b, h};
    const std::size_t dh = s.head_dim();
    const std::size_t m = view.live_prefix();
    const std::size_t nkeys = m + s.tokens;
    const std::size_t stride = 3 * s.dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto grad_key = [&](std::size_t j) -> double* {
        if (j < m) return grad_pk + (b * s.prefix_len + j) * s.dim + h * dh;
        return grad_qkv + (b * s.tokens + (j - m)) * stride + s.dim + h * dh;
    };
    auto grad_value = [&](std::size_t j) -> double* {
        if (j < m) return grad_pv + (b * s.prefix_len + j) * s.dim + h * dh;
        return grad_qkv + (b * s.tokens + (j - m)) * stride + 2 * s.dim + h * dh;
    };

    std::vector<double> dp(nkeys);
    for (std::size_t i = 0; i < s.tokens; ++i) {
        const double* p = probs + ((b * s.heads + h) * s.tokens + i) * s.keys();
        const double* go = grad_out + (b * s.tokens + i) * s.dim + h * dh;
        double weighted = 0.0;
        for (std::size_t j = 0; j < nkeys; ++j) {
            const double* v = view.value(j);
            double acc = 0.0;
            for (std::size_t c = 0; c < dh; ++c) acc += go[c] * v[c];
            dp[j] = acc;
            weighted += p[j] * acc;
            double* gv = grad_value(j);
            for (std::size_t c = 0; c < dh; ++c) gv[c] += p[j] * go[c];
        }
        const double* q = view.query(i);
        double* gq = grad_qkv + (b * s.tokens + i) * stride + h * dh;
        for (std::size_t j = 0; j < nkeys; ++j) {
            const double ds = p[j] * (dp[j] - weighted) * scale;
            const double* k = view.key(j);
            double* gk = grad_key(j);
            for (std::size_t c = 0; c < dh; ++c) {
                gq[c] += ds * k[c];
                gk[c] += ds * q[c];
            }
        }
    }
}

} // namespace

void attention_forward(const AttentionShape& s, const double* qkv,
                       const AttentionPrefixes& prefixes, double* out, double* probs, Exec exec) {
    const std::size_t pairs = s.batch * s.heads;
    const std::size_t work = pairs * s.tokens * s.keys() * s.head_dim();
    if (go_parallel(exec, work)) {
        const auto n = static_cast<std::ptrdiff_t>(pairs);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t bh = 0; bh < n; ++bh) {
            const auto u = static_cast<std::size_t>(bh);
            forward_head(s, qkv, prefixes, u / s.heads, u % s.heads, out, probs);
        }
    } else {
        for (std::size_t bh = 0; bh < pairs; ++bh)
            forward_head(s, qkv, prefixes, bh / s.heads, bh % s.heads, out, probs);
    }
}

void attention_backward(const AttentionShape& s, const double* qkv,
                        const AttentionPrefixes& prefixes, const double* probs,
                        const double* grad_out, double* grad_qkv, double* grad_prefix_keys,
                        double* grad_prefix_values, Exec exec) {
    const std::size_t pairs = s.batch * s.heads;
    const std::size_t work = pairs * s.tokens * s.keys() * s.head_dim();
    if (go_parallel(exec, work)) {
        const auto n = static_cast<std::ptrdiff_t>(pairs);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t bh = 0; bh < n; ++bh) {
            const auto u = static_cast<std::size_t>(bh);
            backward_head(s, qkv, prefixes, probs, grad_out, u / s.heads, u % s.heads, grad_qkv,
                          grad_prefix_keys, grad_prefix_values);
        }
    } else {
        for (std::size_t bh = 0; bh < pairs; ++bh)
            backward_head(s, qkv, prefixes, probs, grad_out, bh / s.heads, bh % s.heads,
                          grad_qkv, grad_prefix_keys, grad_prefix_values);
    }
}

} // namespace oclb::kernels
