#include "fcl/kernels.hpp"

#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fcl::kernels {

namespace {

inline real at(Trans t, const real* x, std::size_t rows, std::size_t cols, std::size_t i,
               std::size_t j) {
    // element (i, j) of op(X) where op(X) is rows x cols
    return t == Trans::no ? x[i * cols + j] : x[j * rows + i];
}

inline void store(real* c, double acc, bool accumulate) {
    *c = accumulate ? static_cast<real>(double(*c) + acc) : static_cast<real>(acc);
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm_reference(Trans ta, Trans tb, GemmShape s, const real* a, const real* b, real* c,
                    bool accumulate) {
    for (std::size_t i = 0; i < s.m; ++i) {
        for (std::size_t j = 0; j < s.n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < s.k; ++p) {
                acc += double(at(ta, a, s.m, s.k, i, p)) * double(at(tb, b, s.k, s.n, p, j));
            }
            store(&c[i * s.n + j], acc, accumulate);
        }
    }
}

void gemm(Trans ta, Trans tb, GemmShape s, const real* a, const real* b, real* c, bool accumulate) {
    const std::size_t m = s.m, n = s.n, k = s.k;
    // Pack op(B) as a row-major k x n panel so the inner loop is unit-stride.
    std::vector<real> packed;
    const real* bp = b;
    if (tb == Trans::yes) {
        packed.resize(k * n);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * k + p];
        }
        bp = packed.data();
    }

#pragma omp parallel
    {
        std::vector<double> acc(n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ta == Trans::no ? a[i * k + p] : a[p * m + i];
                const real* brow = bp + p * n;
                for (std::size_t j = 0; j < n; ++j) acc[j] += av * double(brow[j]);
            }
            real* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) store(&crow[j], acc[j], accumulate);
        }
    }
}

namespace {

// One (batch, head) slice of the forward pass.
void attention_slice(AttentionShape s, std::size_t b, std::size_t h, const real* q, const real* k,
                     const real* v, real* probs, real* out, std::vector<double>& row) {
    const std::size_t d = s.model_dim(), L = s.seq, hd = s.head_dim;
    const double scale = 1.0 / std::sqrt(double(hd));
    const std::size_t base = b * L;
    real* p = probs + (b * s.heads + h) * L * L;
    for (std::size_t i = 0; i < L; ++i) {
        const real* qi = q + (base + i) * d + h * hd;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < L; ++j) {
            const real* kj = k + (base + j) * d + h * hd;
            double dot = 0.0;
            for (std::size_t c = 0; c < hd; ++c) dot += double(qi[c]) * double(kj[c]);
            row[j] = dot * scale;
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::size_t j = 0; j < L; ++j) p[i * L + j] = static_cast<real>(row[j] / z);
        real* oi = out + (base + i) * d + h * hd;
        for (std::size_t c = 0; c < hd; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < L; ++j) acc += double(p[i * L + j]) * double(v[(base + j) * d + h * hd + c]);
            oi[c] = static_cast<real>(acc);
        }
    }
}

}  // namespace

void attention_forward_reference(AttentionShape s, const real* q, const real* k, const real* v,
                                 real* probs, real* out) {
    std::vector<double> row(s.seq);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t h = 0; h < s.heads; ++h) attention_slice(s, b, h, q, k, v, probs, out, row);
    }
}

void attention_forward(AttentionShape s, const real* q, const real* k, const real* v, real* probs,
                       real* out) {
    const auto slices = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel
    {
        std::vector<double> row(s.seq);
#pragma omp for schedule(static)
        for (std::ptrdiff_t bh = 0; bh < slices; ++bh) {
            const auto b = static_cast<std::size_t>(bh) / s.heads;
            const auto h = static_cast<std::size_t>(bh) % s.heads;
            attention_slice(s, b, h, q, k, v, probs, out, row);
        }
    }
}

void attention_backward(AttentionShape s, const real* q, const real* k, const real* v,
                        const real* probs, const real* dout, real* dq, real* dk, real* dv) {
    const std::size_t d = s.model_dim(), L = s.seq, hd = s.head_dim;
    const double scale = 1.0 / std::sqrt(double(hd));
    const auto slices = static_cast<std::ptrdiff_t>(s.batch * s.heads);
    // Slices write disjoint (rows, head-columns) blocks of dq/dk/dv.
#pragma omp parallel
    {
        std::vector<double> dp(L * L), ds(L * L);
#pragma omp for schedule(static)
        for (std::ptrdiff_t bh = 0; bh < slices; ++bh) {
            const auto b = static_cast<std::size_t>(bh) / s.heads;
            const auto h = static_cast<std::size_t>(bh) % s.heads;
            const std::size_t base = b * L, off = h * hd;
            const real* p = probs + (b * s.heads + h) * L * L;
            for (std::size_t i = 0; i < L; ++i) {
                const real* doi = dout + (base + i) * d + off;
                for (std::size_t j = 0; j < L; ++j) {
                    const real* vj = v + (base + j) * d + off;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) acc += double(doi[c]) * double(vj[c]);
                    dp[i * L + j] = acc;
                }
                double dot = 0.0;
                for (std::size_t j = 0; j < L; ++j) dot += dp[i * L + j] * double(p[i * L + j]);
                for (std::size_t j = 0; j < L; ++j) {
                    ds[i * L + j] = double(p[i * L + j]) * (dp[i * L + j] - dot) * scale;
                }
            }
            if (dv) {
                for (std::size_t j = 0; j < L; ++j) {
                    real* dvj = dv + (base + j) * d + off;
                    for (std::size_t c = 0; c < hd; ++c) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < L; ++i) {
                            acc += double(p[i * L + j]) * double(dout[(base + i) * d + off + c]);
                        }
                        dvj[c] = static_cast<real>(double(dvj[c]) + acc);
                    }
                }
            }
            if (dq) {
                for (std::size_t i = 0; i < L; ++i) {
                    real* dqi = dq + (base + i) * d + off;
                    for (std::size_t c = 0; c < hd; ++c) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < L; ++j) acc += ds[i * L + j] * double(k[(base + j) * d + off + c]);
                        dqi[c] = static_cast<real>(double(dqi[c]) + acc);
                    }
                }
            }
            if (dk) {
                for (std::size_t j = 0; j < L; ++j) {
                    real* dkj = dk + (base + j) * d + off;
                    for (std::size_t c = 0; c < hd; ++c) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < L; ++i) acc += ds[i * L + j] * double(q[(base + i) * d + off + c]);
                        dkj[c] = static_cast<real>(double(dkj[c]) + acc);
                    }
                }
            }
        }
    }
}

}  // namespace fcl::kernels
