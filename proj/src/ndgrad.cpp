#include "oclbench/ndgrad.hpp"

#include "oclbench/error.hpp"
#include "oclbench/kernels.hpp"

#include <cmath>
#include <numbers>

namespace oclb {

// ---- Var / Tape ----------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.owned = std::move(value);
    return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
    Node n;
    n.op = "constant";
    n.borrowed = &value;
    return push(std::move(n));
}

Var Tape::param(const Tensor& value) {
    Node n;
    n.op = "param";
    n.borrowed = &value;
    n.requires_grad = true;
    n.learnable = true;
    return push(std::move(n));
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    n.owned = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (&v.tape() != this) throw ContractError("operand recorded on a different tape");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

void Tape::backward(Var loss) {
    if (&loss.tape() != this) throw ContractError("loss belongs to a different tape");
    const Tensor& lv = loss.value();
    if (lv.size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " +
                            shape_string(lv.shape()));

    grads_.assign(nodes_.size(), std::nullopt);
    if (!nodes_[loss.id()].requires_grad) return;
    grads_[loss.id()] = Tensor::full(lv.shape(), 1.0);

    std::vector<Tensor*> slots;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!grads_[id] || !node.backward) continue;
        slots.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const std::size_t in = node.inputs[k];
            if (!nodes_[in].requires_grad) continue;
            if (!grads_[in]) grads_[in] = Tensor::zeros(nodes_[in].value().shape());
            slots[k] = &*grads_[in];
        }
        node.backward(node.value(), *grads_[id], slots);
    }
}

const Tensor* Tape::grad(Var v) const {
    if (v.id() >= grads_.size() || !grads_[v.id()]) return nullptr;
    return &*grads_[v.id()];
}

Tensor Tape::grad_or_zeros(Var v) const {
    if (const Tensor* g = grad(v)) return *g;
    return Tensor::zeros(v.shape());
}

std::size_t Tape::grad_storage_count() const noexcept {
    std::size_t n = 0;
    for (const auto& g : grads_) n += g.has_value();
    return n;
}

// ---- helpers ---------------------------------------------------------------

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + " expects a matrix, got " +
                             shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + " differ");
}

Tensor transposed(const Tensor& t) {
    const std::size_t r = t.dim(0), c = t.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = t[i * c + j];
    return out;
}

void add_into(Tensor& dst, const Tensor& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

} // namespace

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2(av, "matmul");
    require_rank2(bv, "matmul");
    if (av.dim(1) != bv.dim(0))
        throw DimensionError("matmul: inner extents differ for " + shape_string(av.shape()) +
                             " and " + shape_string(bv.shape()));
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    kernels::matmul(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    return a.tape().record(
        "matmul", std::move(out), {a, b},
        [ap, bp, m, k, n](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            if (gin[0]) {
                const Tensor bt = transposed(*bp);
                Tensor da({m, k});
                kernels::matmul(g.ptr(), bt.ptr(), da.ptr(), m, n, k);
                add_into(*gin[0], da);
            }
            if (gin[1]) {
                const Tensor at = transposed(*ap);
                Tensor db({k, n});
                kernels::matmul(at.ptr(), g.ptr(), db.ptr(), k, m, n);
                add_into(*gin[1], db);
            }
        });
}

Var transpose(Var a) {
    require_rank2(a.value(), "transpose");
    return a.tape().record("transpose", transposed(a.value()), {a},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (gin[0]) add_into(*gin[0], transposed(g));
                           });
}

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    add_into(out, b.value());
    return a.tape().record("add", std::move(out), {a, b},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (gin[0]) add_into(*gin[0], g);
                               if (gin[1]) add_into(*gin[1], g);
                           });
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return a.tape().record("sub", std::move(out), {a, b},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (gin[0]) add_into(*gin[0], g);
                               if (gin[1])
                                   for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                           });
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    const Tensor* ap = &a.value();
    const Tensor* bp = &b.value();
    Tensor out(ap->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*ap)[i] * (*bp)[i];
    return a.tape().record(
        "mul", std::move(out), {a, b},
        [ap, bp](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*bp)[i];
            if (gin[1])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*ap)[i];
        });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (double& x : out.data()) x *= factor;
    return a.tape().record(
        "scale", std::move(out), {a},
        [factor](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
        });
}

Var add_row(Var x, Var row) {
    const Tensor& xv = x.value();
    const Tensor& rv = row.value();
    const std::size_t d = xv.cols();
    if (rv.size() != d)
        throw DimensionError("add_row: row of " + std::to_string(rv.size()) +
                             " entries does not fit " + shape_string(xv.shape()));
    Tensor out = xv;
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] += rv[c];
    return x.tape().record("add_row", std::move(out), {x, row},
                           [d](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (gin[0]) add_into(*gin[0], g);
                               if (gin[1])
                                   for (std::size_t r = 0; r < g.rows(); ++r)
                                       for (std::size_t c = 0; c < d; ++c)
                                           (*gin[1])[c] += g[r * d + c];
                           });
}

Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    return a.tape().record("sum", Tensor::scalar(s), {a},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (gin[0])
                                   for (double& x : gin[0]->data()) x += g[0];
                           });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (a.value().size() == 0) throw ContractError("mean of an empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var softmax_rows(Var x) {
    const Tensor& xv = x.value();
    require_rank2(xv, "softmax_rows");
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    if (c == 0) throw DimensionError("softmax_rows needs at least one column");
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) kernels::softmax_row(xv.ptr() + i * c, out.ptr() + i * c, c);
    return x.tape().record(
        "softmax_rows", std::move(out), {x},
        [r, c](const Tensor& y, const Tensor& g, std::span<Tensor* const> gin) {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    (*gin[0])[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
            }
        });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    if (!(eps > 0.0)) throw ContractError("layer_norm needs eps > 0");
    const Tensor& xv = x.value();
    const std::size_t n = xv.rows(), d = xv.cols();
    if (gamma.value().size() != d || beta.value().size() != d)
        throw DimensionError("layer_norm: affine parameters do not match width " +
                             std::to_string(d));
    const Tensor* gp = &gamma.value();
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv(n);
    const auto& bv = beta.value();
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xv.ptr() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(d);
        inv[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (row[c] - mu) * inv[r];
            xhat[r * d + c] = h;
            out[r * d + c] = (*gp)[c] * h + bv[c];
        }
    }
    return x.tape().record(
        "layer_norm", std::move(out), {x, gamma, beta},
        [n, d, gp, xhat = std::move(xhat), inv = std::move(inv)](
            const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            for (std::size_t r = 0; r < n; ++r) {
                const double* gr = g.ptr() + r * d;
                const double* hr = xhat.ptr() + r * d;
                if (gin[1])
                    for (std::size_t c = 0; c < d; ++c) (*gin[1])[c] += gr[c] * hr[c];
                if (gin[2])
                    for (std::size_t c = 0; c < d; ++c) (*gin[2])[c] += gr[c];
                if (!gin[0]) continue;
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = gr[c] * (*gp)[c];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[c];
                }
                const double dd = static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = gr[c] * (*gp)[c];
                    (*gin[0])[r * d + c] += inv[r] / dd * (dd * dh - sum_dh - hr[c] * sum_dh_h);
                }
            }
        });
}

namespace {
constexpr double gelu_k = 0.044715;
const double gelu_c = std::sqrt(2.0 / std::numbers::pi);
} // namespace

// 0.5 (1 + tanh(u)) is the logistic function of 2u, which needs one exp
// instead of a tanh and has no cancellation for negative u.
double gelu_value(double x) noexcept {
    return x / (1.0 + std::exp(-2.0 * gelu_c * (x + gelu_k * x * x * x)));
}

double gelu_derivative(double x) noexcept {
    const double s = 1.0 / (1.0 + std::exp(-2.0 * gelu_c * (x + gelu_k * x * x * x)));
    return s + 2.0 * x * s * (1.0 - s) * gelu_c * (1.0 + 3.0 * gelu_k * x * x);
}

Var gelu(Var x) {
    const Tensor* xp = &x.value();
    Tensor out(xp->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value((*xp)[i]);
    return x.tape().record("gelu", std::move(out), {x},
                           [xp](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   (*gin[0])[i] += g[i] * gelu_derivative((*xp)[i]);
                           });
}

Var concat_rows(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2(av, "concat_rows");
    require_rank2(bv, "concat_rows");
    if (av.dim(1) != bv.dim(1))
        throw DimensionError("concat_rows: column extents differ for " +
                             shape_string(av.shape()) + " and " + shape_string(bv.shape()));
    const std::size_t p = av.dim(0), q = bv.dim(0), d = av.dim(1);
    std::vector<double> data;
    data.reserve((p + q) * d);
    data.insert(data.end(), av.data().begin(), av.data().end());
    data.insert(data.end(), bv.data().begin(), bv.data().end());
    Tensor out({p + q, d});
    std::copy(data.begin(), data.end(), out.data().begin());
    return a.tape().record("concat_rows", std::move(out), {a, b},
                           [p, q, d](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (gin[0])
                                   for (std::size_t i = 0; i < p * d; ++i) (*gin[0])[i] += g[i];
                               if (gin[1])
                                   for (std::size_t i = 0; i < q * d; ++i)
                                       (*gin[1])[i] += g[p * d + i];
                           });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols of nothing");
    const std::size_t r = parts[0].value().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& v : parts) {
        require_rank2(v.value(), "concat_cols");
        if (v.value().dim(0) != r)
            throw DimensionError("concat_cols: row extents differ (" + std::to_string(r) +
                                 " vs " + std::to_string(v.value().dim(0)) + ")");
        widths.push_back(v.value().dim(1));
        total += widths.back();
    }
    Tensor out({r, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t c = 0; c < widths[k]; ++c) out[i * total + off + c] = v[i * widths[k] + c];
        off += widths[k];
    }
    return parts[0].tape().record(
        "concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
        [r, total, widths](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                if (gin[k])
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t c = 0; c < widths[k]; ++c)
                            (*gin[k])[i * widths[k] + c] += g[i * total + off + c];
                off += widths[k];
            }
        });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = x.value();
    if (begin + count > xv.rows())
        throw DimensionError("slice_rows [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " +
                             shape_string(xv.shape()));
    Shape shape = xv.shape();
    shape[0] = count;
    const std::size_t d = xv.cols();
    Tensor out(shape);
    std::copy_n(xv.ptr() + begin * d, count * d, out.ptr());
    return x.tape().record("slice_rows", std::move(out), {x},
                           [begin, count, d](const Tensor&, const Tensor& g,
                                             std::span<Tensor* const> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < count * d; ++i)
                                   (*gin[0])[begin * d + i] += g[i];
                           });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = x.value();
    require_rank2(xv, "slice_cols");
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    if (begin + count > c)
        throw DimensionError("slice_cols [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " +
                             shape_string(xv.shape()));
    Tensor out({r, count});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * c + begin + j];
    return x.tape().record("slice_cols", std::move(out), {x},
                           [r, c, begin, count](const Tensor&, const Tensor& g,
                                                std::span<Tensor* const> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < count; ++j)
                                       (*gin[0])[i * c + begin + j] += g[i * count + j];
                           });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
    const Tensor& xv = x.value();
    const std::size_t d = xv.cols();
    for (std::size_t r : rows)
        if (r >= xv.rows())
            throw DimensionError("gather_rows: row " + std::to_string(r) + " outside " +
                                 shape_string(xv.shape()));
    Shape shape = xv.shape();
    shape[0] = rows.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(xv.ptr() + rows[i] * d, d, out.ptr() + i * d);
    return x.tape().record("gather_rows", std::move(out), {x},
                           [d, rows = std::move(rows)](const Tensor&, const Tensor& g,
                                                       std::span<Tensor* const> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < rows.size(); ++i)
                                   for (std::size_t c = 0; c < d; ++c)
                                       (*gin[0])[rows[i] * d + c] += g[i * d + c];
                           });
}

Var reshape(Var x, Shape shape) {
    return x.tape().record("reshape", x.value().reshaped(std::move(shape)), {x},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                           });
}

} // namespace oclb
