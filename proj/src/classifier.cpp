#include "oclbench/classifier.hpp"

#include "oclbench/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace oclb {

HeadKind parse_head_kind(std::string_view text) {
    if (text == "cosine") return HeadKind::cosine;
    if (text == "linear") return HeadKind::linear;
    throw ConfigError("unknown head '" + std::string(text) + "' (expected cosine or linear)");
}

std::string_view to_string(HeadKind kind) noexcept {
    return kind == HeadKind::cosine ? "cosine" : "linear";
}

namespace {

double l2(const double* x, std::size_t n) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
    return std::sqrt(s);
}

void require_features(const Tensor& g, const char* op) {
    if (g.rank() != 2)
        throw DimensionError(std::string(op) + " expects features [batch x dim], got " +
                             shape_string(g.shape()));
}

} // namespace

CosineHead CosineHead::init(std::size_t classes, std::size_t dim, double tau, Rng& rng) {
    if (!(tau > 0.0)) throw ConfigError("temperature tau must be positive");
    CosineHead head;
    head.tau = tau;
    for (std::size_t c = 0; c < classes; ++c) {
        Tensor p({dim});
        double n = 0.0;
        while (n <= norm_epsilon) {
            for (double& x : p.data()) x = rng.normal();
            n = l2(p.ptr(), dim);
        }
        for (double& x : p.data()) x /= n;
        head.prototypes.push_back(std::move(p));
    }
    return head;
}

LinearHead LinearHead::init(std::size_t classes, std::size_t dim, Rng& rng) {
    LinearHead head;
    const double sd = 1.0 / std::sqrt(3.0 * static_cast<double>(dim));
    for (std::size_t c = 0; c < classes; ++c) {
        Tensor w({dim});
        for (double& x : w.data()) x = rng.normal(0.0, sd);
        head.weights.push_back(std::move(w));
        head.biases.push_back(Tensor::zeros({1}));
    }
    return head;
}

Var cosine_logits(Var g, std::span<const Var> prototypes, double tau) {
    const Tensor& gv = g.value();
    require_features(gv, "cosine_logits");
    if (!(tau > 0.0)) throw ContractError("cosine_logits needs tau > 0");
    const std::size_t batch = gv.dim(0), dim = gv.dim(1), classes = prototypes.size();
    std::vector<const Tensor*> protos;
    for (const Var& p : prototypes) {
        if (p.value().size() != dim)
            throw DimensionError("prototype " + shape_string(p.shape()) +
                                 " does not match feature width " + std::to_string(dim));
        protos.push_back(&p.value());
    }
    std::vector<double> gnorm(batch), pnorm(classes);
    for (std::size_t b = 0; b < batch; ++b)
        gnorm[b] = std::max(l2(gv.ptr() + b * dim, dim), norm_epsilon);
    for (std::size_t c = 0; c < classes; ++c)
        pnorm[c] = std::max(l2(protos[c]->ptr(), dim), norm_epsilon);

    Tensor out({batch, classes});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* gb = gv.ptr() + b * dim;
        for (std::size_t c = 0; c < classes; ++c) {
            const double* pc = protos[c]->ptr();
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += gb[i] * pc[i];
            out[b * classes + c] = dot / (gnorm[b] * pnorm[c]) / tau;
        }
    }

    std::vector<Var> inputs{g};
    inputs.insert(inputs.end(), prototypes.begin(), prototypes.end());
    const Tensor* gp = &gv;
    return g.tape().record(
        "cosine_logits", std::move(out), std::move(inputs),
        [gp, protos, gnorm, pnorm, batch, dim, classes, tau](
            const Tensor& z, const Tensor& grad, std::span<Tensor* const> gin) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gb = gp->ptr() + b * dim;
                const bool g_floor = gnorm[b] <= norm_epsilon;
                for (std::size_t c = 0; c < classes; ++c) {
                    const double up = grad[b * classes + c];
                    if (up == 0.0) continue;
                    const double* pc = protos[c]->ptr();
                    const double denom = gnorm[b] * pnorm[c] * tau;
                    // z * tau = cos; d cos / d g = p / (|g||p|) - cos * g / |g|^2
                    const double cosv = z[b * classes + c] * tau;
                    if (gin[0]) {
                        double* dg = gin[0]->ptr() + b * dim;
                        const double radial = g_floor ? 0.0 : cosv / (gnorm[b] * gnorm[b] * tau);
                        for (std::size_t i = 0; i < dim; ++i)
                            dg[i] += up * (pc[i] / denom - radial * gb[i]);
                    }
                    if (Tensor* dp = gin[1 + c]) {
                        const double radial =
                            pnorm[c] <= norm_epsilon ? 0.0 : cosv / (pnorm[c] * pnorm[c] * tau);
                        for (std::size_t i = 0; i < dim; ++i)
                            (*dp)[i] += up * (gb[i] / denom - radial * pc[i]);
                    }
                }
            }
        });
}

Var linear_logits(Var g, std::span<const Var> weights, std::span<const Var> biases) {
    const Tensor& gv = g.value();
    require_features(gv, "linear_logits");
    if (weights.size() != biases.size())
        throw DimensionError("linear_logits: weight and bias counts differ");
    const std::size_t batch = gv.dim(0), dim = gv.dim(1), classes = weights.size();
    std::vector<const Tensor*> ws;
    for (std::size_t c = 0; c < classes; ++c) {
        if (weights[c].value().size() != dim || biases[c].value().size() != 1)
            throw DimensionError("linear_logits: class " + std::to_string(c) +
                                 " parameters do not match feature width " + std::to_string(dim));
        ws.push_back(&weights[c].value());
    }
    Tensor out({batch, classes});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* gb = gv.ptr() + b * dim;
        for (std::size_t c = 0; c < classes; ++c) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += gb[i] * (*ws[c])[i];
            out[b * classes + c] = dot + biases[c].value()[0];
        }
    }
    std::vector<Var> inputs{g};
    inputs.insert(inputs.end(), weights.begin(), weights.end());
    inputs.insert(inputs.end(), biases.begin(), biases.end());
    const Tensor* gp = &gv;
    return g.tape().record(
        "linear_logits", std::move(out), std::move(inputs),
        [gp, ws, batch, dim, classes](const Tensor&, const Tensor& grad,
                                      std::span<Tensor* const> gin) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gb = gp->ptr() + b * dim;
                for (std::size_t c = 0; c < classes; ++c) {
                    const double up = grad[b * classes + c];
                    if (gin[0]) {
                        double* dg = gin[0]->ptr() + b * dim;
                        for (std::size_t i = 0; i < dim; ++i) dg[i] += up * (*ws[c])[i];
                    }
                    if (Tensor* dw = gin[1 + c])
                        for (std::size_t i = 0; i < dim; ++i) (*dw)[i] += up * gb[i];
                    if (Tensor* db = gin[1 + classes + c]) (*db)[0] += up;
                }
            }
        });
}

std::size_t LogitMask::allowed_count() const noexcept {
    return static_cast<std::size_t>(std::count(allowed.begin(), allowed.end(), true));
}

LogitMask make_mask(std::span<const int> labels, std::size_t classes) {
    if (labels.empty()) throw ContractError("logit mask needs at least one label");
    LogitMask mask{std::vector<bool>(classes, false)};
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw LabelError("label " + std::to_string(y) + " outside [0, " +
                             std::to_string(classes) + ")");
        mask.allowed[static_cast<std::size_t>(y)] = true;
    }
    return mask;
}

LogitMask full_mask(std::size_t classes) { return {std::vector<bool>(classes, true)}; }

Var masked_ce_loss(Var logits, const LogitMask& mask, std::span<const int> labels) {
    const Tensor& z = logits.value();
    if (z.rank() != 2) throw DimensionError("masked_ce_loss expects [batch x classes] logits");
    const std::size_t batch = z.dim(0), classes = z.dim(1);
    if (batch == 0) throw ContractError("masked_ce_loss on an empty batch");
    if (labels.size() != batch)
        throw DimensionError("masked_ce_loss: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(batch));
    if (mask.classes() != classes)
        throw DimensionError("masked_ce_loss: mask covers " + std::to_string(mask.classes()) +
                             " classes, logits have " + std::to_string(classes));
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw LabelError("label " + std::to_string(y) + " outside [0, " +
                             std::to_string(classes) + ")");
        if (mask.is_masked(static_cast<std::size_t>(y)))
            throw ContractError("label " + std::to_string(y) +
                                " is masked; mask and batch disagree");
    }

    // probs holds the masked softmax; masked entries stay exactly 0.
    Tensor probs({batch, classes});
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* zb = z.ptr() + b * classes;
        double mx = -INFINITY;
        for (std::size_t c = 0; c < classes; ++c)
            if (mask.allowed[c]) mx = std::max(mx, zb[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c)
            if (mask.allowed[c]) {
                probs[b * classes + c] = std::exp(zb[c] - mx);
                s += probs[b * classes + c];
            }
        for (std::size_t c = 0; c < classes; ++c)
            if (mask.allowed[c]) probs[b * classes + c] /= s;
        total += (mx - zb[labels[b]]) + std::log(s);
    }
    std::vector<int> ys(labels.begin(), labels.end());
    return logits.tape().record(
        "masked_ce_loss", Tensor::scalar(total / static_cast<double>(batch)), {logits},
        [probs = std::move(probs), ys = std::move(ys), batch, classes](
            const Tensor&, const Tensor& grad, std::span<Tensor* const> gin) {
            if (!gin[0]) return;
            const double up = grad[0] / static_cast<double>(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < classes; ++c) {
                    const double p = probs[b * classes + c];
                    if (p != 0.0) (*gin[0])[b * classes + c] += up * p;
                }
                (*gin[0])[b * classes + static_cast<std::size_t>(ys[b])] -= up;
            }
        });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
    return masked_ce_loss(logits, full_mask(logits.value().dim(1)), labels);
}

Tensor masked_softmax(const Tensor& logits, const LogitMask& mask) {
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (mask.classes() != classes) throw DimensionError("masked_softmax: mask width mismatch");
    Tensor out({batch, classes});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* zb = logits.ptr() + b * classes;
        double mx = -INFINITY;
        for (std::size_t c = 0; c < classes; ++c)
            if (mask.allowed[c]) mx = std::max(mx, zb[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c)
            if (mask.allowed[c]) s += (out[b * classes + c] = std::exp(zb[c] - mx));
        for (std::size_t c = 0; c < classes; ++c)
            if (mask.allowed[c]) out[b * classes + c] /= s;
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t batch = logits.rows(), classes = logits.cols();
    std::vector<int> out(batch, 0);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* zb = logits.ptr() + b * classes;
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (zb[c] > zb[best]) best = c;
        out[b] = static_cast<int>(best);
    }
    return out;
}

ClassifierHead ClassifierHead::make_cosine(CosineHead head) {
    ClassifierHead h;
    h.kind_ = HeadKind::cosine;
    h.cosine_ = std::move(head);
    return h;
}

ClassifierHead ClassifierHead::make_linear(LinearHead head) {
    ClassifierHead h;
    h.kind_ = HeadKind::linear;
    h.linear_ = std::move(head);
    return h;
}

std::size_t ClassifierHead::classes() const noexcept {
    return kind_ == HeadKind::cosine ? cosine_.prototypes.size() : linear_.weights.size();
}

std::vector<Tensor*> ClassifierHead::parameters() {
    std::vector<Tensor*> out;
    if (kind_ == HeadKind::cosine) {
        for (auto& p : cosine_.prototypes) out.push_back(&p);
    } else {
        for (auto& w : linear_.weights) out.push_back(&w);
        for (auto& b : linear_.biases) out.push_back(&b);
    }
    return out;
}

ClassifierHead::Registered ClassifierHead::logits(Tape& tape, Var features) const {
    Registered r;
    if (kind_ == HeadKind::cosine) {
        for (const auto& p : cosine_.prototypes) r.leaves.push_back(tape.param(p));
        r.logits = cosine_logits(features, r.leaves, cosine_.tau);
    } else {
        const std::size_t c = linear_.weights.size();
        for (const auto& w : linear_.weights) r.leaves.push_back(tape.param(w));
        for (const auto& b : linear_.biases) r.leaves.push_back(tape.param(b));
        r.logits = linear_logits(features, std::span<const Var>(r.leaves).first(c),
                                 std::span<const Var>(r.leaves).subspan(c));
    }
    return r;
}

Tensor ClassifierHead::logits(const Tensor& features) const {
    Tape tape;
    Var g = tape.constant_ref(features);
    std::vector<Var> leaves;
    if (kind_ == HeadKind::cosine) {
        for (const auto& p : cosine_.prototypes) leaves.push_back(tape.constant_ref(p));
        return cosine_logits(g, leaves, cosine_.tau).value();
    }
    std::vector<Var> bs;
    for (const auto& w : linear_.weights) leaves.push_back(tape.constant_ref(w));
    for (const auto& b : linear_.biases) bs.push_back(tape.constant_ref(b));
    return linear_logits(g, leaves, bs).value();
}

std::vector<int> ClassifierHead::predict(const Tensor& features) const {
    return argmax_rows(logits(features));
}

std::vector<double> ClassifierHead::class_norms() const {
    std::vector<double> out;
    const auto& rows = kind_ == HeadKind::cosine ? cosine_.prototypes : linear_.weights;
    for (const auto& r : rows) out.push_back(l2(r.ptr(), r.size()));
    return out;
}

} // namespace oclb
