#include "fcl/ops.hpp"

#include <algorithm>
#include <cmath>

#include "fcl/errors.hpp"
#include "fcl/kernels.hpp"

namespace fcl {

using kernels::GemmShape;
using kernels::Trans;

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void accumulate(std::span<real> dst, std::span<const real> src, double c = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(dst[i] + c * src[i]);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    kernels::gemm(Trans::no, Trans::no, {m, n, k}, a.ptr(), b.ptr(), out.ptr(), false);
    if (detail::should_record({&a, &b})) {
        detail::record("matmul", {&a, &b}, out, [a, b, out, m, n, k]() mutable {
            const real* g = out.grad().data();
            if (a.requires_grad()) {
                kernels::gemm(Trans::no, Trans::yes, {m, k, n}, g, b.ptr(), a.ensure_grad().data(), true);
            }
            if (b.requires_grad()) {
                kernels::gemm(Trans::yes, Trans::no, {k, n, m}, a.ptr(), g, b.ensure_grad().data(), true);
            }
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    kernels::gemm(Trans::no, Trans::yes, {m, n, k}, a.ptr(), b.ptr(), out.ptr(), false);
    if (detail::should_record({&a, &b})) {
        detail::record("matmul_nt", {&a, &b}, out, [a, b, out, m, n, k]() mutable {
            const real* g = out.grad().data();
            if (a.requires_grad()) {
                kernels::gemm(Trans::no, Trans::no, {m, k, n}, g, b.ptr(), a.ensure_grad().data(), true);
            }
            if (b.requires_grad()) {
                kernels::gemm(Trans::yes, Trans::no, {n, k, m}, g, a.ptr(), b.ensure_grad().data(), true);
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank2(x, "linear");
    require_rank2(w, "linear");
    if (x.dim(1) != w.dim(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    }
    const std::size_t n = x.dim(0), in = x.dim(1), outd = w.dim(0);
    if (bias.defined() && bias.numel() != outd) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(w.shape()));
    }
    Tensor out({n, outd});
    kernels::gemm(Trans::no, Trans::yes, {n, outd, in}, x.ptr(), w.ptr(), out.ptr(), false);
    if (bias.defined()) {
        real* o = out.ptr();
        const real* bp = bias.ptr();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < outd; ++c) o[r * outd + c] += bp[c];
        }
    }
    if (detail::should_record({&x, &w, &bias})) {
        detail::record("linear", {&x, &w, &bias}, out, [x, w, bias, out, n, in, outd]() mutable {
            const real* g = out.grad().data();
            if (x.requires_grad()) {
                kernels::gemm(Trans::no, Trans::no, {n, in, outd}, g, w.ptr(), x.ensure_grad().data(), true);
            }
            if (w.requires_grad()) {
                kernels::gemm(Trans::yes, Trans::no, {outd, in, n}, g, x.ptr(), w.ensure_grad().data(), true);
            }
            if (bias.defined() && bias.requires_grad()) {
                auto gb = bias.ensure_grad();
                for (std::size_t c = 0; c < outd; ++c) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < n; ++r) acc += g[r * outd + c];
                    gb[c] = static_cast<real>(gb[c] + acc);
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::should_record({&a, &b})) {
        detail::record("add", {&a, &b}, out, [a, b, out]() mutable {
            if (a.requires_grad()) accumulate(a.ensure_grad(), out.grad());
            if (b.requires_grad()) accumulate(b.ensure_grad(), out.grad());
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::should_record({&a, &b})) {
        detail::record("mul", {&a, &b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto gb = b.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = static_cast<real>(a.data()[i] * c);
    if (detail::should_record({&a})) {
        detail::record("scale", {&a}, out, [a, out, c]() mutable { accumulate(a.ensure_grad(), out.grad(), c); });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (real v : a.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<real>(acc));
    if (detail::should_record({&a})) {
        detail::record("sum", {&a}, out, [a, out]() mutable {
            const real g = out.grad()[0];
            for (auto& v : a.ensure_grad()) v += g;
        });
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        out.data()[i] = static_cast<real>(0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v))));
    }
    if (detail::should_record({&x})) {
        detail::record("gelu", {&x}, out, [x, out, n]() mutable {
            auto gx = x.ensure_grad();
            auto g = out.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double v = x.data()[i];
                const double u = kGeluC * (v + 0.044715 * v * v * v);
                const double t = std::tanh(u);
                const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
                const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                gx[i] = static_cast<real>(gx[i] + g[i] * d);
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    require_rank2(x, "softmax");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const real* xr = x.ptr() + r * cols;
        real* orow = out.ptr() + r * cols;
        const double mx = *std::max_element(xr, xr + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(double(xr[c]) - mx);
        for (std::size_t c = 0; c < cols; ++c) orow[c] = static_cast<real>(std::exp(double(xr[c]) - mx) / z);
    }
    if (detail::should_record({&x})) {
        detail::record("softmax", {&x}, out, [x, out, rows, cols]() mutable {
            auto gx = x.ensure_grad();
            auto g = out.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += double(g[r * cols + c]) * out.data()[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    gx[i] = static_cast<real>(gx[i] + out.data()[i] * (g[i] - dot));
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (gain.numel() != cols || bias.numel() != cols) {
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                             " vs input " + shape_str(x.shape()));
    }
    Tensor out(x.shape());
    std::vector<real> xhat(rows * cols);
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const real* xr = x.ptr() + r * cols;
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
        mean /= double(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= double(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (xr[c] - mean) * inv_std[r];
            xhat[r * cols + c] = static_cast<real>(h);
            out.ptr()[r * cols + c] = static_cast<real>(h * gain.ptr()[c] + bias.ptr()[c]);
        }
    }
    if (detail::should_record({&x, &gain, &bias})) {
        detail::record("layer_norm", {&x, &gain, &bias}, out,
                       [x, gain, bias, out, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
            auto g = out.grad();
            if (gain.requires_grad() || bias.requires_grad()) {
                std::vector<double> gg(cols, 0.0), gbias(cols, 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        gg[c] += double(g[r * cols + c]) * xhat[r * cols + c];
                        gbias[c] += g[r * cols + c];
                    }
                }
                if (gain.requires_grad()) {
                    auto dst = gain.ensure_grad();
                    for (std::size_t c = 0; c < cols; ++c) dst[c] = static_cast<real>(dst[c] + gg[c]);
                }
                if (bias.requires_grad()) {
                    auto dst = bias.ensure_grad();
                    for (std::size_t c = 0; c < cols; ++c) dst[c] = static_cast<real>(dst[c] + gbias[c]);
                }
            }
            if (x.requires_grad()) {
                auto gx = x.ensure_grad();
                const double n = double(cols);
                for (std::size_t r = 0; r < rows; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double dh = double(g[r * cols + c]) * gain.ptr()[c];
                        s1 += dh;
                        s2 += dh * xhat[r * cols + c];
                    }
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double dh = double(g[r * cols + c]) * gain.ptr()[c];
                        const double dx = inv_std[r] * (dh - s1 / n - xhat[r * cols + c] * s2 / n);
                        gx[r * cols + c] = static_cast<real>(gx[r * cols + c] + dx);
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    require_rank2(table, "embedding");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw ContractError("embedding: empty index list");
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    for (auto id : idx) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw IndexError("embedding: index " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
        }
    }
    Tensor out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(table.ptr() + std::size_t(idx[r]) * d, d, out.ptr() + r * d);
    }
    if (detail::should_record({&table})) {
        detail::record("embedding", {&table}, out, [table, out, d, idx = std::move(idx)]() mutable {
            auto gt = table.ensure_grad();
            auto g = out.grad();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                for (std::size_t c = 0; c < d; ++c) gt[std::size_t(idx[r]) * d + c] += g[r * d + c];
            }
        });
    }
    return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                 std::size_t heads) {
    require_rank2(q, "attention");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const std::size_t d = q.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                             " heads");
    }
    if (batch * seq != q.dim(0)) {
        throw DimensionError("attention: " + std::to_string(batch) + "x" + std::to_string(seq) +
                             " positions vs rows of " + shape_str(q.shape()));
    }
    const kernels::AttentionShape s{batch, seq, heads, d / heads};
    Tensor out(q.shape());
    std::vector<real> probs(batch * heads * seq * seq);
    kernels::attention_forward(s, q.ptr(), k.ptr(), v.ptr(), probs.data(), out.ptr());
    if (detail::should_record({&q, &k, &v})) {
        detail::record("attention", {&q, &k, &v}, out, [q, k, v, out, s, probs = std::move(probs)]() mutable {
            real* dq = q.requires_grad() ? q.ensure_grad().data() : nullptr;
            real* dk = k.requires_grad() ? k.ensure_grad().data() : nullptr;
            real* dv = v.requires_grad() ? v.ensure_grad().data() : nullptr;
            kernels::attention_backward(s, q.ptr(), k.ptr(), v.ptr(), probs.data(), out.grad().data(), dq, dk, dv);
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
    require_rank2(logits, "softmax_cross_entropy");
    const std::size_t n = logits.dim(0), V = logits.dim(1);
    if (targets.size() != n) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             shape_str(logits.shape()) + " logits");
    }
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    for (auto t : tgt) {
        if (t < 0 || static_cast<std::size_t>(t) >= V) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                             std::to_string(V) + ")");
        }
    }
    std::vector<real> probs(n * V);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const real* lr = logits.ptr() + r * V;
        const double mx = *std::max_element(lr, lr + V);
        double z = 0.0;
        for (std::size_t c = 0; c < V; ++c) z += std::exp(double(lr[c]) - mx);
        const double logz = std::log(z) + mx;
        total += logz - double(lr[tgt[r]]);
        for (std::size_t c = 0; c < V; ++c) probs[r * V + c] = static_cast<real>(std::exp(double(lr[c]) - logz));
    }
    Tensor out = Tensor::scalar(static_cast<real>(total / double(n)));
    if (detail::should_record({&logits})) {
        detail::record("softmax_cross_entropy", {&logits}, out,
                       [logits, out, n, V, tgt = std::move(tgt), probs = std::move(probs)]() mutable {
            auto gl = logits.ensure_grad();
            const double g = out.grad()[0] / double(n);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < V; ++c) {
                    const double onehot = static_cast<std::size_t>(tgt[r]) == c ? 1.0 : 0.0;
                    gl[r * V + c] = static_cast<real>(gl[r * V + c] + g * (probs[r * V + c] - onehot));
                }
            }
        });
    }
    return out;
}

Tensor distill_kl(const Tensor& student, const Tensor& teacher, double temperature) {
    require_rank2(student, "distill_kl");
    require_same_shape(student, teacher, "distill_kl");
    if (!(temperature > 0.0)) throw ContractError("distill_kl: temperature must be positive");
    const std::size_t n = student.dim(0), V = student.dim(1);
    auto log_softmax_row = [V, temperature](const real* row, std::vector<double>& dst) {
        double mx = -INFINITY;
        for (std::size_t c = 0; c < V; ++c) mx = std::max(mx, double(row[c]) / temperature);
        double z = 0.0;
        for (std::size_t c = 0; c < V; ++c) z += std::exp(double(row[c]) / temperature - mx);
        const double logz = std::log(z) + mx;
        for (std::size_t c = 0; c < V; ++c) dst[c] = double(row[c]) / temperature - logz;
    };
    const double t2 = temperature * temperature;
    std::vector<double> ls(V), lt(V);
    // cached per row: student probs p and (log p - log q - KL_row)
    std::vector<real> p_cache(n * V), w_cache(n * V);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        log_softmax_row(student.ptr() + r * V, ls);
        log_softmax_row(teacher.ptr() + r * V, lt);
        double kl = 0.0;
        for (std::size_t c = 0; c < V; ++c) kl += std::exp(ls[c]) * (ls[c] - lt[c]);
        kl = std::max(kl, 0.0);
        total += kl;
        for (std::size_t c = 0; c < V; ++c) {
            p_cache[r * V + c] = static_cast<real>(std::exp(ls[c]));
            w_cache[r * V + c] = static_cast<real>(ls[c] - lt[c] - kl);
        }
    }
    Tensor out = Tensor::scalar(static_cast<real>(t2 * total / double(n)));
    if (detail::should_record({&student})) {
        detail::record("distill_kl", {&student}, out,
                       [student, out, n, V, t2, temperature, p = std::move(p_cache), w = std::move(w_cache)]() mutable {
            auto gs = student.ensure_grad();
            const double g = out.grad()[0] * t2 / (double(n) * temperature);
            for (std::size_t i = 0; i < n * V; ++i) {
                gs[i] = static_cast<real>(gs[i] + g * double(p[i]) * double(w[i]));
            }
        });
    }
    return out;
}

}  // namespace fcl
