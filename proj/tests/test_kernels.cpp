#include "oclbench/kernels.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace oclb;
namespace k = oclb::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

// Attention written straight from the definition, in long double.
std::vector<long double> attention_oracle(const k::AttentionShape& s, const std::vector<double>& qkv,
                                          const std::vector<std::vector<double>>& pk,
                                          const std::vector<std::vector<double>>& pv,
                                          const std::vector<int>& prefix_of) {
    const std::size_t D = s.dim, hd = s.head_dim();
    std::vector<long double> out(s.batch * s.tokens * D);
    const long double scale = 1.0L / std::sqrt(static_cast<long double>(hd));
    for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h) {
            std::vector<std::vector<long double>> keys, values;
            if (prefix_of[b] >= 0)
                for (std::size_t m = 0; m < s.prefix_len; ++m) {
                    std::vector<long double> kk(hd), vv(hd);
                    for (std::size_t d = 0; d < hd; ++d) {
                        kk[d] = pk[prefix_of[b]][m * D + h * hd + d];
                        vv[d] = pv[prefix_of[b]][m * D + h * hd + d];
                    }
                    keys.push_back(kk);
                    values.push_back(vv);
                }
            for (std::size_t j = 0; j < s.tokens; ++j) {
                std::vector<long double> kk(hd), vv(hd);
                const double* row = qkv.data() + (b * s.tokens + j) * 3 * D;
                for (std::size_t d = 0; d < hd; ++d) {
                    kk[d] = row[D + h * hd + d];
                    vv[d] = row[2 * D + h * hd + d];
                }
                keys.push_back(kk);
                values.push_back(vv);
            }
            for (std::size_t i = 0; i < s.tokens; ++i) {
                const double* q = qkv.data() + (b * s.tokens + i) * 3 * D + h * hd;
                std::vector<long double> sc(keys.size());
                long double mx = -INFINITY, sum = 0;
                for (std::size_t j = 0; j < keys.size(); ++j) {
                    long double dot = 0;
                    for (std::size_t d = 0; d < hd; ++d) dot += q[d] * keys[j][d];
                    sc[j] = dot * scale;
                    mx = std::max(mx, sc[j]);
                }
                for (auto& x : sc) sum += (x = std::exp(x - mx));
                for (std::size_t d = 0; d < hd; ++d) {
                    long double acc = 0;
                    for (std::size_t j = 0; j < keys.size(); ++j) acc += sc[j] / sum * values[j][d];
                    out[(b * s.tokens + i) * D + h * hd + d] = acc;
                }
            }
        }
    return out;
}

} // namespace

TEST_CASE("matmul matches a long-double triple loop and serial equals parallel bitwise") {
    Rng rng(11);
    for (auto [m, kk, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 7}, {64, 33, 70}, {0, 4, 3},
                            {4, 0, 3}, {200, 32, 96}}) {
        const auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng);
        std::vector<double> cs(m * n, -1), cp(m * n, -2);
        k::matmul_serial(a.data(), b.data(), cs.data(), m, kk, n);
        k::matmul_parallel(a.data(), b.data(), cp.data(), m, kk, n);
        CHECK(cs == cp);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                long double s = 0;
                for (std::size_t t = 0; t < kk; ++t)
                    s += static_cast<long double>(a[i * kk + t]) * b[t * n + j];
                CHECK(std::abs(static_cast<double>(s) - cs[i * n + j]) < 1e-12 * (1 + std::abs(static_cast<double>(s))));
            }
    }
}

TEST_CASE("softmax_row sums to one and matches a long-double oracle") {
    Rng rng(3);
    for (std::size_t n : {1u, 2u, 9u, 40u}) {
        auto x = random_vec(n, rng);
        x[0] = 700.0; // overflow unless the max is subtracted
        std::vector<double> p(n);
        k::softmax_row(x.data(), p.data(), n);
        long double sum = 0, mx = -INFINITY;
        for (double v : x) mx = std::max<long double>(mx, v);
        for (double v : x) sum += std::exp(v - mx);
        double total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(std::abs(p[j] - static_cast<double>(std::exp(x[j] - mx) / sum)) < 1e-15);
            total += p[j];
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("attention forward agrees with the definition, with and without prefixes") {
    Rng rng(5);
    k::AttentionShape s{3, 5, 8, 2, 3};
    const auto qkv = random_vec(s.batch * s.tokens * 3 * s.dim, rng);
    std::vector<std::vector<double>> pk{random_vec(s.prefix_len * s.dim, rng), random_vec(s.prefix_len * s.dim, rng)};
    std::vector<std::vector<double>> pv{random_vec(s.prefix_len * s.dim, rng), random_vec(s.prefix_len * s.dim, rng)};
    const std::vector<int> prefix_of{1, -1, 0};
    k::AttentionPrefixes pre{{pk[0].data(), pk[1].data()}, {pv[0].data(), pv[1].data()}, prefix_of};

    std::vector<double> out(s.batch * s.tokens * s.dim), probs(s.probs_size());
    k::attention_forward(s, qkv.data(), pre, out.data(), probs.data(), k::Exec::serial);
    const auto want = attention_oracle(s, qkv, pk, pv, prefix_of);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - static_cast<double>(want[i])) < 1e-12);

    // Probability rows cover every key of their sample and sum to one.
    for (std::size_t r = 0; r < s.batch * s.heads * s.tokens; ++r) {
        double total = 0;
        for (std::size_t j = 0; j < s.keys(); ++j) total += probs[r * s.keys() + j];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("parallel attention is bit-identical to serial, forward and backward") {
    Rng rng(8);
    k::AttentionShape s{7, 9, 32, 4, 4};
    const auto qkv = random_vec(s.batch * s.tokens * 3 * s.dim, rng);
    const auto pk = random_vec(s.prefix_len * s.dim, rng), pv = random_vec(s.prefix_len * s.dim, rng);
    const std::vector<int> prefix_of(s.batch, 0);
    k::AttentionPrefixes pre{{pk.data()}, {pv.data()}, prefix_of};
    const auto g = random_vec(s.batch * s.tokens * s.dim, rng);

    std::vector<double> out_s(g.size()), out_p(g.size()), pr_s(s.probs_size()), pr_p(s.probs_size());
    k::attention_forward(s, qkv.data(), pre, out_s.data(), pr_s.data(), k::Exec::serial);
    k::attention_forward(s, qkv.data(), pre, out_p.data(), pr_p.data(), k::Exec::parallel);
    CHECK(out_s == out_p);
    CHECK(pr_s == pr_p);

    const std::size_t pn = s.batch * s.prefix_len * s.dim;
    std::vector<double> gq_s(qkv.size()), gq_p(qkv.size()), gk_s(pn), gk_p(pn), gv_s(pn), gv_p(pn);
    k::attention_backward(s, qkv.data(), pre, pr_s.data(), g.data(), gq_s.data(), gk_s.data(), gv_s.data(), k::Exec::serial);
    k::attention_backward(s, qkv.data(), pre, pr_p.data(), g.data(), gq_p.data(), gk_p.data(), gv_p.data(), k::Exec::parallel);
    CHECK(gq_s == gq_p);
    CHECK(gk_s == gk_p);
    CHECK(gv_s == gv_p);
}

TEST_CASE("attention backward matches central differences") {
    Rng rng(21);
    k::AttentionShape s{2, 3, 4, 2, 2};
    auto qkv = random_vec(s.batch * s.tokens * 3 * s.dim, rng);
    auto pk = random_vec(s.prefix_len * s.dim, rng), pv = random_vec(s.prefix_len * s.dim, rng);
    const std::vector<int> prefix_of{0, 0};
    const auto w = random_vec(s.batch * s.tokens * s.dim, rng);

    auto loss = [&] {
        k::AttentionPrefixes pre{{pk.data()}, {pv.data()}, prefix_of};
        std::vector<double> out(w.size()), probs(s.probs_size());
        k::attention_forward(s, qkv.data(), pre, out.data(), probs.data());
        double l = 0;
        for (std::size_t i = 0; i < w.size(); ++i) l += w[i] * out[i];
        return l;
    };
    k::AttentionPrefixes pre{{pk.data()}, {pv.data()}, prefix_of};
    std::vector<double> out(w.size()), probs(s.probs_size());
    k::attention_forward(s, qkv.data(), pre, out.data(), probs.data());
    const std::size_t pn = s.batch * s.prefix_len * s.dim;
    std::vector<double> gq(qkv.size()), gk(pn), gv(pn);
    k::attention_backward(s, qkv.data(), pre, probs.data(), w.data(), gq.data(), gk.data(), gv.data());

    const double h = 1e-6;
    auto fd = [&](double& x) {
        const double keep = x;
        x = keep + h;
        const double up = loss();
        x = keep - h;
        const double down = loss();
        x = keep;
        return (up - down) / (2 * h);
    };
    for (std::size_t i = 0; i < qkv.size(); ++i) CHECK(gq[i] == doctest::Approx(fd(qkv[i])).epsilon(1e-6));
    for (std::size_t i = 0; i < pk.size(); ++i) {
        // Per-sample contributions fold into the shared prefix gradient.
        double kk = 0, vv = 0;
        for (std::size_t b = 0; b < s.batch; ++b) {
            kk += gk[b * pk.size() + i];
            vv += gv[b * pk.size() + i];
        }
        CHECK(kk == doctest::Approx(fd(pk[i])).epsilon(1e-6));
        CHECK(vv == doctest::Approx(fd(pv[i])).epsilon(1e-6));
    }
}
