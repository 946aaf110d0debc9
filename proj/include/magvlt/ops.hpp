#pragma once
#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "magvlt/tensor.hpp"

namespace magvlt::nd {

template <class Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using EMap = Eigen::Map<EMat<Real>>;
template <class Real>
using ECMap = Eigen::Map<const EMat<Real>>;
template <class Real>
using EMapS = Eigen::Map<EMat<Real>, 0, Eigen::OuterStride<>>;
template <class Real>
using ECMapS = Eigen::Map<const EMat<Real>, 0, Eigen::OuterStride<>>;

// ---- scalar kernels -----------------------------------------------------
// Branch-free expf so the elementwise passes auto-vectorize; the double
// overload stays on libm, which is what the 64-bit verification mode runs on.
inline float exp_approx(float x) {
    x = std::min(88.0f, std::max(-87.0f, x));
    float z = std::floor(x * 1.44269504088896341f + 0.5f);
    float r = x - z * 0.693359375f - z * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    float y = p * r * r + r + 1.0f;
    int32_t yi = std::bit_cast<int32_t>(y) + (int32_t(z) << 23);
    return std::bit_cast<float>(yi);
}
inline double exp_approx(double x) { return std::exp(x); }

inline float tanh_approx(float u) {
    u = std::min(9.0f, std::max(-9.0f, u));
    return 1.0f - 2.0f / (exp_approx(2.0f * u) + 1.0f);
}
inline double tanh_approx(double u) { return std::tanh(u); }

inline constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC1 = 0.044715;

template <class Real, class... Ts>
inline bool track(Tape<Real>* tape, const Ts&... ts) {
    return tape != nullptr && (... || ts.requires_grad);
}

// ---- matmul -------------------------------------------------------------
template <class Real>
Tensor<Real> matmul(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        op_shape_error("matmul", "incompatible shapes " + a.shape_str() + " * " + b.shape_str());
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    const bool tg = track(tape, a, b);
    auto out = Tensor<Real>::zeros({m, n}, tg);
    EMap<Real>(out.ptr(), m, n).noalias() =
        ECMap<Real>(a.ptr(), m, k) * ECMap<Real>(b.ptr(), k, n);
    if (tg)
        tape->record([a, b, out, m, k, n]() {
            ECMap<Real> dC(out.gptr(), m, n);
            if (a.requires_grad)
                EMap<Real>(a.gptr(), m, k).noalias() +=
                    dC * ECMap<Real>(b.ptr(), k, n).transpose();
            if (b.requires_grad)
                EMap<Real>(b.gptr(), k, n).noalias() +=
                    ECMap<Real>(a.ptr(), m, k).transpose() * dC;
        });
    return out;
}

// out = a * b^T, with b stored [n x k]. Used for weight-tied logit heads.
template <class Real>
Tensor<Real> matmul_nt(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[1])
        op_shape_error("matmul_nt",
                       "incompatible shapes " + a.shape_str() + " * " + b.shape_str() + "^T");
    const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
    const bool tg = track(tape, a, b);
    auto out = Tensor<Real>::zeros({m, n}, tg);
    EMap<Real>(out.ptr(), m, n).noalias() =
        ECMap<Real>(a.ptr(), m, k) * ECMap<Real>(b.ptr(), n, k).transpose();
    if (tg)
        tape->record([a, b, out, m, k, n]() {
            ECMap<Real> dC(out.gptr(), m, n);
            if (a.requires_grad)
                EMap<Real>(a.gptr(), m, k).noalias() += dC * ECMap<Real>(b.ptr(), n, k);
            if (b.requires_grad)
                EMap<Real>(b.gptr(), n, k).noalias() +=
                    dC.transpose() * ECMap<Real>(a.ptr(), m, k);
        });
    return out;
}

// ---- elementwise --------------------------------------------------------
template <class Real>
static void check_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape != b.shape)
        op_shape_error(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <class Real>
Tensor<Real> add(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape("add", a, b);
    const bool tg = track(tape, a, b);
    auto out = Tensor<Real>::zeros(a.shape, tg);
    const int64_t n = a.numel();
    const Real *pa = a.ptr(), *pb = b.ptr();
    Real* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (tg)
        tape->record([a, b, out, n]() {
            const Real* g = out.gptr();
            if (a.requires_grad) {
                Real* ga = a.gptr();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad) {
                Real* gb = b.gptr();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    return out;
}

template <class Real>
Tensor<Real> mul(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    check_same_shape("mul", a, b);
    const bool tg = track(tape, a, b);
    auto out = Tensor<Real>::zeros(a.shape, tg);
    const int64_t n = a.numel();
    const Real *pa = a.ptr(), *pb = b.ptr();
    Real* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (tg)
        tape->record([a, b, out, n]() {
            const Real* g = out.gptr();
            if (a.requires_grad) {
                Real* ga = a.gptr();
                const Real* pb2 = b.ptr();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
            }
            if (b.requires_grad) {
                Real* gb = b.gptr();
                const Real* pa2 = a.ptr();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
            }
        });
    return out;
}

template <class Real>
Tensor<Real> scale(Tape<Real>* tape, const Tensor<Real>& a, Real s) {
    const bool tg = track(tape, a);
    auto out = Tensor<Real>::zeros(a.shape, tg);
    const int64_t n = a.numel();
    const Real* pa = a.ptr();
    Real* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    if (tg)
        tape->record([a, out, s, n]() {
            const Real* g = out.gptr();
            Real* ga = a.gptr();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
        });
    return out;
}

template <class Real>
Tensor<Real> sum(Tape<Real>* tape, const Tensor<Real>& a) {
    const bool tg = track(tape, a);
    auto out = Tensor<Real>::zeros({1}, tg);
    const int64_t n = a.numel();
    const Real* pa = a.ptr();
    Real acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    (*out.data)[0] = acc;
    if (tg)
        tape->record([a, out, n]() {
            const Real g = (*out.grad)[0];
            Real* ga = a.gptr();
            for (int64_t i = 0; i < n; ++i) ga[i] += g;
        });
    return out;
}

template <class Real>
Tensor<Real> mean(Tape<Real>* tape, const Tensor<Real>& a) {
    if (a.numel() == 0) op_shape_error("mean", "empty tensor");
    return scale(tape, sum(tape, a), Real(1) / Real(a.numel()));
}

// ---- row-structured -----------------------------------------------------
template <class Real>
Tensor<Real> add_bias(Tape<Real>* tape, const Tensor<Real>& x, const Tensor<Real>& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.shape[0] != x.shape[1])
        op_shape_error("add_bias", "shapes " + x.shape_str() + " + " + b.shape_str());
    const int m = x.shape[0], n = x.shape[1];
    const bool tg = track(tape, x, b);
    auto out = Tensor<Real>::zeros(x.shape, tg);
    const Real *px = x.ptr(), *pb = b.ptr();
    Real* po = out.ptr();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
    if (tg)
        tape->record([x, b, out, m, n]() {
            const Real* g = out.gptr();
            if (x.requires_grad) {
                Real* gx = x.gptr();
                for (int64_t i = 0; i < int64_t(m) * n; ++i) gx[i] += g[i];
            }
            if (b.requires_grad) {
                Real* gb = b.gptr();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    return out;
}

// fused x*W + b
template <class Real>
Tensor<Real> linear(Tape<Real>* tape, const Tensor<Real>& x, const Tensor<Real>& w,
                    const Tensor<Real>& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.shape[1] != w.shape[0] || b.ndim() != 1 ||
        b.shape[0] != w.shape[1])
        op_shape_error("linear", "shapes " + x.shape_str() + " * " + w.shape_str() + " + " +
                                     b.shape_str());
    const int m = x.shape[0], k = x.shape[1], n = w.shape[1];
    const bool tg = track(tape, x, w, b);
    auto out = Tensor<Real>::zeros({m, n}, tg);
    EMap<Real> O(out.ptr(), m, n);
    O.noalias() = ECMap<Real>(x.ptr(), m, k) * ECMap<Real>(w.ptr(), k, n);
    O.rowwise() += Eigen::Map<const Eigen::RowVector<Real, Eigen::Dynamic>>(b.ptr(), n);
    if (tg)
        tape->record([x, w, b, out, m, k, n]() {
            ECMap<Real> dY(out.gptr(), m, n);
            if (x.requires_grad)
                EMap<Real>(x.gptr(), m, k).noalias() +=
                    dY * ECMap<Real>(w.ptr(), k, n).transpose();
            if (w.requires_grad)
                EMap<Real>(w.gptr(), k, n).noalias() +=
                    ECMap<Real>(x.ptr(), m, k).transpose() * dY;
            if (b.requires_grad) {
                // fixed-order loop: Eigen's colwise().sum() rounds differently
                // depending on buffer alignment, which breaks bitwise replays
                Real* gb = b.gptr();
                const Real* g = out.gptr();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    return out;
}

template <class Real>
Tensor<Real> gelu(Tape<Real>* tape, const Tensor<Real>& x) {
    const bool tg = track(tape, x);
    auto out = Tensor<Real>::zeros(x.shape, tg);
    const int64_t n = x.numel();
    const Real* px = x.ptr();
    Real* po = out.ptr();
    auto tanhs = std::make_shared<std::vector<Real>>(size_t(tg ? n : 0));
    const Real c0 = Real(kGeluC0), c1 = Real(kGeluC1);
    if (tg) {
        Real* pt = tanhs->data();
        for (int64_t i = 0; i < n; ++i) {
            const Real v = px[i];
            const Real t = tanh_approx(c0 * (v + c1 * v * v * v));
            pt[i] = t;
            po[i] = Real(0.5) * v * (Real(1) + t);
        }
        tape->record([x, out, tanhs, n, c0, c1]() {
            const Real* g = out.gptr();
            const Real* pt = tanhs->data();
            const Real* pv = x.ptr();
            Real* gx = x.gptr();
            for (int64_t i = 0; i < n; ++i) {
                const Real v = pv[i], t = pt[i];
                const Real du = c0 * (Real(1) + Real(3) * c1 * v * v);
                gx[i] += g[i] * (Real(0.5) * (Real(1) + t) +
                                 Real(0.5) * v * (Real(1) - t * t) * du);
            }
        });
    } else {
        for (int64_t i = 0; i < n; ++i) {
            const Real v = px[i];
            po[i] = Real(0.5) * v * (Real(1) + tanh_approx(c0 * (v + c1 * v * v * v)));
        }
    }
    return out;
}

template <class Real>
Tensor<Real> layer_norm(Tape<Real>* tape, const Tensor<Real>& x, const Tensor<Real>& g,
                        const Tensor<Real>& b, Real eps = Real(1e-5)) {
    if (x.ndim() != 2 || g.ndim() != 1 || b.ndim() != 1 || g.shape[0] != x.shape[1] ||
        b.shape[0] != x.shape[1])
        op_shape_error("layer_norm", "shapes " + x.shape_str() + ", " + g.shape_str() + ", " +
                                         b.shape_str());
    const int m = x.shape[0], n = x.shape[1];
    const bool tg = track(tape, x, g, b);
    auto out = Tensor<Real>::zeros(x.shape, tg);
    auto xhat = std::make_shared<std::vector<Real>>(size_t(tg ? int64_t(m) * n : 0));
    auto rstd = std::make_shared<std::vector<Real>>(size_t(tg ? m : 0));
    const Real *px = x.ptr(), *pg = g.ptr(), *pb = b.ptr();
    Real* po = out.ptr();
    for (int i = 0; i < m; ++i) {
        const Real* row = px + int64_t(i) * n;
        Real mu = 0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= Real(n);
        Real var = 0;
        for (int j = 0; j < n; ++j) {
            const Real d = row[j] - mu;
            var += d * d;
        }
        var /= Real(n);
        const Real rs = Real(1) / std::sqrt(var + eps);
        Real* orow = po + int64_t(i) * n;
        if (tg) {
            Real* hrow = xhat->data() + int64_t(i) * n;
            (*rstd)[size_t(i)] = rs;
            for (int j = 0; j < n; ++j) {
                const Real h = (row[j] - mu) * rs;
                hrow[j] = h;
                orow[j] = pg[j] * h + pb[j];
            }
        } else {
            for (int j = 0; j < n; ++j) orow[j] = pg[j] * (row[j] - mu) * rs + pb[j];
        }
    }
    if (tg)
        tape->record([x, g, b, out, xhat, rstd, m, n]() {
            const Real* dy = out.gptr();
            const Real* pg2 = g.ptr();
            for (int i = 0; i < m; ++i) {
                const Real* dyr = dy + int64_t(i) * n;
                const Real* hr = xhat->data() + int64_t(i) * n;
                const Real rs = (*rstd)[size_t(i)];
                if (g.requires_grad) {
                    Real* gg = g.gptr();
                    for (int j = 0; j < n; ++j) gg[j] += dyr[j] * hr[j];
                }
                if (b.requires_grad) {
                    Real* gb = b.gptr();
                    for (int j = 0; j < n; ++j) gb[j] += dyr[j];
                }
                if (x.requires_grad) {
                    Real m1 = 0, m2 = 0;
                    for (int j = 0; j < n; ++j) {
                        const Real dg = dyr[j] * pg2[j];
                        m1 += dg;
                        m2 += dg * hr[j];
                    }
                    m1 /= Real(n);
                    m2 /= Real(n);
                    Real* gx = x.gptr() + int64_t(i) * n;
                    for (int j = 0; j < n; ++j)
                        gx[j] += rs * (dyr[j] * pg2[j] - m1 - hr[j] * m2);
                }
            }
        });
    return out;
}

template <class Real>
Tensor<Real> softmax_lastdim(Tape<Real>* tape, const Tensor<Real>& x) {
    if (x.ndim() < 1) op_shape_error("softmax_lastdim", "needs at least 1-D, got " + x.shape_str());
    const int n = x.shape.back();
    const int64_t m = x.numel() / n;
    const bool tg = track(tape, x);
    auto out = Tensor<Real>::zeros(x.shape, tg);
    const Real* px = x.ptr();
    Real* po = out.ptr();
    for (int64_t i = 0; i < m; ++i) {
        const Real* row = px + i * n;
        Real* orow = po + i * n;
        Real mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Real s = 0;
        for (int j = 0; j < n; ++j) {
            const Real e = exp_approx(row[j] - mx);
            orow[j] = e;
            s += e;
        }
        const Real inv = Real(1) / s;
        for (int j = 0; j < n; ++j) orow[j] *= inv;
    }
    if (tg)
        tape->record([x, out, m, n]() {
            const Real* p = out.ptr();
            const Real* dy = out.gptr();
            Real* gx = x.gptr();
            for (int64_t i = 0; i < m; ++i) {
                const Real* pr = p + i * n;
                const Real* dr = dy + i * n;
                Real dot = 0;
                for (int j = 0; j < n; ++j) dot += dr[j] * pr[j];
                Real* gr = gx + i * n;
                for (int j = 0; j < n; ++j) gr[j] += pr[j] * (dr[j] - dot);
            }
        });
    return out;
}

// ---- gathers ------------------------------------------------------------
template <class Real>
Tensor<Real> embedding(Tape<Real>* tape, const Tensor<Real>& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) op_shape_error("embedding", "table must be 2-D, got " + table.shape_str());
    const int v = table.shape[0], d = table.shape[1];
    for (int id : ids)
        if (id < 0 || id >= v)
            op_shape_error("embedding", "id " + std::to_string(id) + " outside table " +
                                            table.shape_str());
    const int n = int(ids.size());
    const bool tg = track(tape, table);
    auto out = Tensor<Real>::zeros({n, d}, tg);
    const Real* pt = table.ptr();
    Real* po = out.ptr();
    for (int i = 0; i < n; ++i)
        std::copy_n(pt + int64_t(ids[size_t(i)]) * d, d, po + int64_t(i) * d);
    if (tg)
        tape->record([table, out, ids, d, n]() {
            const Real* g = out.gptr();
            Real* gt = table.gptr();
            for (int i = 0; i < n; ++i) {
                Real* dst = gt + int64_t(ids[size_t(i)]) * d;
                const Real* src = g + int64_t(i) * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    return out;
}

template <class Real>
Tensor<Real> gather_rows(Tape<Real>* tape, const Tensor<Real>& x, const std::vector<int>& rows) {
    if (x.ndim() != 2) op_shape_error("gather_rows", "input must be 2-D, got " + x.shape_str());
    const int m = x.shape[0], n = x.shape[1];
    for (int r : rows)
        if (r < 0 || r >= m)
            op_shape_error("gather_rows", "row " + std::to_string(r) + " outside " + x.shape_str());
    const int k = int(rows.size());
    const bool tg = track(tape, x);
    auto out = Tensor<Real>::zeros({k, n}, tg);
    for (int i = 0; i < k; ++i)
        std::copy_n(x.ptr() + int64_t(rows[size_t(i)]) * n, n, out.ptr() + int64_t(i) * n);
    if (tg)
        tape->record([x, out, rows, n, k]() {
            const Real* g = out.gptr();
            Real* gx = x.gptr();
            for (int i = 0; i < k; ++i) {
                Real* dst = gx + int64_t(rows[size_t(i)]) * n;
                const Real* src = g + int64_t(i) * n;
                for (int j = 0; j < n; ++j) dst[j] += src[j];
            }
        });
    return out;
}

template <class Real>
Tensor<Real> slice_rows(Tape<Real>* tape, const Tensor<Real>& x, int begin, int count) {
    if (x.ndim() != 2) op_shape_error("slice_rows", "input must be 2-D, got " + x.shape_str());
    const int m = x.shape[0], n = x.shape[1];
    if (begin < 0 || count < 0 || begin + count > m)
        op_shape_error("slice_rows", "range [" + std::to_string(begin) + "," +
                                         std::to_string(begin + count) + ") outside " +
                                         x.shape_str());
    const bool tg = track(tape, x);
    auto out = Tensor<Real>::zeros({count, n}, tg);
    std::copy_n(x.ptr() + int64_t(begin) * n, int64_t(count) * n, out.ptr());
    if (tg)
        tape->record([x, out, begin, count, n]() {
            const Real* g = out.gptr();
            Real* gx = x.gptr() + int64_t(begin) * n;
            for (int64_t i = 0; i < int64_t(count) * n; ++i) gx[i] += g[i];
        });
    return out;
}

template <class Real>
Tensor<Real> concat_rows(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[1])
        op_shape_error("concat_rows", "shapes " + a.shape_str() + " vs " + b.shape_str());
    const int ma = a.shape[0], mb = b.shape[0], n = a.shape[1];
    const bool tg = track(tape, a, b);
    auto out = Tensor<Real>::zeros({ma + mb, n}, tg);
    std::copy_n(a.ptr(), int64_t(ma) * n, out.ptr());
    std::copy_n(b.ptr(), int64_t(mb) * n, out.ptr() + int64_t(ma) * n);
    if (tg)
        tape->record([a, b, out, ma, mb, n]() {
            const Real* g = out.gptr();
            if (a.requires_grad) {
                Real* ga = a.gptr();
                for (int64_t i = 0; i < int64_t(ma) * n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad) {
                Real* gb = b.gptr();
                const Real* gs = g + int64_t(ma) * n;
                for (int64_t i = 0; i < int64_t(mb) * n; ++i) gb[i] += gs[i];
            }
        });
    return out;
}

// ---- fused multi-head self-attention ------------------------------------
// qkv is [(B*S) x 3D] packed [q | k | v]; returns [(B*S) x D]. With `causal`
// set, row t of every score matrix only ever reads columns <= t, so outputs
// at position t are bitwise independent of ids after t.
template <class Real>
Tensor<Real> self_attention(Tape<Real>* tape, const Tensor<Real>& qkv, int batch, int seq,
                            int heads, bool causal) {
    if (qkv.ndim() != 2 || qkv.shape[0] != batch * seq || qkv.shape[1] % 3 != 0)
        op_shape_error("self_attention", "qkv " + qkv.shape_str() + " for batch " +
                                             std::to_string(batch) + " seq " + std::to_string(seq));
    const int d3 = qkv.shape[1], dm = d3 / 3;
    if (dm % heads != 0)
        op_shape_error("self_attention", "model dim " + std::to_string(dm) +
                                             " not divisible by heads " + std::to_string(heads));
    const int hd = dm / heads;
    const Real scl = Real(1) / std::sqrt(Real(hd));
    const bool tg = track(tape, qkv);
    auto out = Tensor<Real>::zeros({batch * seq, dm}, tg);
    auto probs = std::make_shared<std::vector<Real>>(size_t(int64_t(batch) * heads * seq * seq));

    for (int b = 0; b < batch; ++b) {
        const Real* base = qkv.ptr() + int64_t(b) * seq * d3;
        Real* obase = out.ptr() + int64_t(b) * seq * dm;
        for (int h = 0; h < heads; ++h) {
            ECMapS<Real> Q(base + h * hd, seq, hd, Eigen::OuterStride<>(d3));
            ECMapS<Real> K(base + dm + h * hd, seq, hd, Eigen::OuterStride<>(d3));
            ECMapS<Real> V(base + 2 * dm + h * hd, seq, hd, Eigen::OuterStride<>(d3));
            Real* pp = probs->data() + (int64_t(b) * heads + h) * seq * seq;
            EMap<Real> P(pp, seq, seq);
            P.noalias() = Q * K.transpose() * scl;
            for (int i = 0; i < seq; ++i) {
                Real* row = pp + int64_t(i) * seq;
                const int lim = causal ? i + 1 : seq;
                Real mx = row[0];
                for (int j = 1; j < lim; ++j) mx = std::max(mx, row[j]);
                Real s = 0;
                for (int j = 0; j < lim; ++j) {
                    const Real e = exp_approx(row[j] - mx);
                    row[j] = e;
                    s += e;
                }
                const Real inv = Real(1) / s;
                for (int j = 0; j < lim; ++j) row[j] *= inv;
                for (int j = lim; j < seq; ++j) row[j] = 0;
            }
            EMapS<Real> O(obase + h * hd, seq, hd, Eigen::OuterStride<>(dm));
            O.noalias() = P * V;
        }
    }

    if (tg)
        tape->record([qkv, out, probs, batch, seq, heads, d3, dm, hd, scl, causal]() {
            std::vector<Real> tmp(size_t(int64_t(seq) * seq));
            for (int b = 0; b < batch; ++b) {
                const Real* base = qkv.ptr() + int64_t(b) * seq * d3;
                Real* gbase = qkv.gptr() + int64_t(b) * seq * d3;
                const Real* gout = out.gptr() + int64_t(b) * seq * dm;
                for (int h = 0; h < heads; ++h) {
                    ECMapS<Real> Q(base + h * hd, seq, hd, Eigen::OuterStride<>(d3));
                    ECMapS<Real> K(base + dm + h * hd, seq, hd, Eigen::OuterStride<>(d3));
                    ECMapS<Real> V(base + 2 * dm + h * hd, seq, hd, Eigen::OuterStride<>(d3));
                    EMapS<Real> dQ(gbase + h * hd, seq, hd, Eigen::OuterStride<>(d3));
                    EMapS<Real> dK(gbase + dm + h * hd, seq, hd, Eigen::OuterStride<>(d3));
                    EMapS<Real> dV(gbase + 2 * dm + h * hd, seq, hd, Eigen::OuterStride<>(d3));
                    const Real* pp = probs->data() + (int64_t(b) * heads + h) * seq * seq;
                    ECMap<Real> P(pp, seq, seq);
                    ECMapS<Real> dO(gout + h * hd, seq, hd, Eigen::OuterStride<>(dm));
                    dV.noalias() += P.transpose() * dO;
                    EMap<Real> dS(tmp.data(), seq, seq);
                    dS.noalias() = dO * V.transpose();  // dP for now
                    for (int i = 0; i < seq; ++i) {
                        Real* dr = tmp.data() + int64_t(i) * seq;
                        const Real* pr = pp + int64_t(i) * seq;
                        const int lim = causal ? i + 1 : seq;
                        Real dot = 0;
                        for (int j = 0; j < lim; ++j) dot += dr[j] * pr[j];
                        for (int j = 0; j < lim; ++j) dr[j] = pr[j] * (dr[j] - dot);
                        for (int j = lim; j < seq; ++j) dr[j] = 0;
                    }
                    dQ.noalias() += dS * K * scl;
                    dK.noalias() += dS.transpose() * Q * scl;
                }
            }
        });
    return out;
}

// ---- label-smoothed cross entropy over selected rows --------------------
// Returns the scalar SUM of per-row losses; callers normalize. Gradients
// flow only into the listed rows; every other logit row stays untouched,
// which the loss-locality acceptance check verifies bitwise.
template <class Real>
Tensor<Real> ce_smoothed_rows(Tape<Real>* tape, const Tensor<Real>& logits,
                              const std::vector<int>& rows, const std::vector<int>& targets,
                              Real smoothing) {
    if (logits.ndim() != 2) op_shape_error("ce_smoothed_rows", "logits must be 2-D, got " + logits.shape_str());
    if (rows.size() != targets.size())
        op_shape_error("ce_smoothed_rows", std::to_string(rows.size()) + " rows vs " +
                                               std::to_string(targets.size()) + " targets");
    if (smoothing < Real(0) || smoothing >= Real(1))
        op_shape_error("ce_smoothed_rows", "smoothing outside [0,1)");
    const int m = logits.shape[0], v = logits.shape[1];
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= m)
            op_shape_error("ce_smoothed_rows", "row " + std::to_string(rows[i]) + " outside " +
                                                   logits.shape_str());
        if (targets[i] < 0 || targets[i] >= v)
            op_shape_error("ce_smoothed_rows", "target " + std::to_string(targets[i]) +
                                                   " outside vocab " + std::to_string(v));
    }
    const int k = int(rows.size());
    const bool tg = track(tape, logits);
    auto out = Tensor<Real>::zeros({1}, tg);
    auto probs = std::make_shared<std::vector<Real>>(size_t(tg ? int64_t(k) * v : 0));
    const Real* pl = logits.ptr();
    Real total = 0;
    for (int i = 0; i < k; ++i) {
        const Real* row = pl + int64_t(rows[size_t(i)]) * v;
        Real mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        Real se = 0, sz = 0;
        for (int j = 0; j < v; ++j) {
            se += std::exp(row[j] - mx);
            sz += row[j];
        }
        const Real lse = mx + std::log(se);
        const Real tgt = row[targets[size_t(i)]];
        total += lse - (Real(1) - smoothing) * tgt - smoothing / Real(v) * sz;
        if (tg) {
            Real* pr = probs->data() + int64_t(i) * v;
            const Real inv = Real(1) / se;
            for (int j = 0; j < v; ++j) pr[j] = std::exp(row[j] - mx) * inv;
        }
    }
    (*out.data)[0] = total;
    if (tg)
        tape->record([logits, out, probs, rows, targets, smoothing, v, k]() {
            const Real g = (*out.grad)[0];
            Real* gl = logits.gptr();
            const Real unif = smoothing / Real(v);
            for (int i = 0; i < k; ++i) {
                Real* grow = gl + int64_t(rows[size_t(i)]) * v;
                const Real* pr = probs->data() + int64_t(i) * v;
                const int t = targets[size_t(i)];
                for (int j = 0; j < v; ++j) {
                    Real q = unif + (j == t ? Real(1) - smoothing : Real(0));
                    grow[j] += g * (pr[j] - q);
                }
            }
        });
    return out;
}

// convenience for a single logit vector
template <class Real>
Tensor<Real> cross_entropy_smoothed(Tape<Real>* tape, const Tensor<Real>& logits, int target,
                                    Real smoothing) {
    if (logits.ndim() == 1) {
        Tensor<Real> view = logits;  // same buffers
        view.shape = {1, logits.shape[0]};
        return ce_smoothed_rows(tape, view, {0}, {target}, smoothing);
    }
    return ce_smoothed_rows(tape, logits, {0}, {target}, smoothing);
}

}  // namespace magvlt::nd
