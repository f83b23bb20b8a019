#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fox/parallel.hpp"
#include "fox/tensor.hpp"

namespace fox {

// ---------------------------------------------------------------------------
// Raw kernels. Hot loops are written so the unit-stride axis is always the
// innermost one and every output element is owned by exactly one parallel
// block; reductions stay sequential inside a block, which keeps results
// bit-identical for any thread count.
// ---------------------------------------------------------------------------

// y[t,:] = sum_i x[t,i] * w[i,:]     x: [rows, in], w: [in, out]
template <class T>
void matmul(const T* x, const T* w, T* y, std::int64_t rows, std::int64_t in, std::int64_t out) {
    parallel_for(rows, [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
            const T* xr = x + t * in;
            T* yr = y + t * out;
            for (std::int64_t o = 0; o < out; ++o) yr[o] = T(0);
            for (std::int64_t i = 0; i < in; ++i) {
                const T a = xr[i];
                if (a == T(0)) continue;
                const T* wr = w + i * out;
                for (std::int64_t o = 0; o < out; ++o) yr[o] += a * wr[o];
            }
        }
    });
}

// dw[i,:] += sum_t x[t,i] * dy[t,:]    (gradient of matmul wrt w)
template <class T>
void matmul_acc_weight_grad(const T* x, const T* dy, T* dw, std::int64_t rows, std::int64_t in,
                            std::int64_t out) {
    parallel_for(in, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t t = 0; t < rows; ++t) {
            const T* dyr = dy + t * out;
            const T* xr = x + t * in;
            for (std::int64_t i = i0; i < i1; ++i) {
                const T a = xr[i];
                if (a == T(0)) continue;
                T* dwr = dw + i * out;
                for (std::int64_t o = 0; o < out; ++o) dwr[o] += a * dyr[o];
            }
        }
    });
}

// wt[o,i] = w[i,o]
template <class T>
void transpose(const T* w, T* wt, std::int64_t in, std::int64_t out) {
    parallel_for(out, [&](std::int64_t o0, std::int64_t o1) {
        for (std::int64_t i = 0; i < in; ++i) {
            const T* wr = w + i * out;
            for (std::int64_t o = o0; o < o1; ++o) wt[o * in + i] = wr[o];
        }
    });
}

template <class T>
T dot(const T* a, const T* b, std::int64_t n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    T s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
void axpy(T a, const T* x, T* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// In-place numerically stable softmax over one row.
template <class T>
void softmax_row(T* row, std::int64_t n) {
    T mx = row[0];
    for (std::int64_t i = 1; i < n; ++i)
        if (row[i] > mx) mx = row[i];
    T sum = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    const T inv = T(1) / sum;
    for (std::int64_t i = 0; i < n; ++i) row[i] *= inv;
}

template <class T>
T silu(T z) {
    return z / (T(1) + std::exp(-z));
}

// ---------------------------------------------------------------------------
// Tensor-level operations
// ---------------------------------------------------------------------------

// y_i = weight_i * x_i / sqrt(mean(x^2) + eps), applied to each trailing
// vector of x independently.
template <class T>
TensorT<T> rms_norm(const TensorT<T>& x, const TensorT<T>& weight, double eps) {
    if (eps < 0.0) throw std::invalid_argument("rms_norm: eps must be non-negative");
    if (weight.rank() != 1 || x.rank() < 1 || x.shape().back() != weight.dim(0))
        throw std::invalid_argument("rms_norm: weight length must match trailing dimension");
    const std::int64_t dim = weight.dim(0);
    const std::int64_t rows = x.size() / dim;
    TensorT<T> y(x.shape());
    const T* xp = x.data();
    const T* wp = weight.data();
    T* yp = y.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xp + r * dim;
        T* yr = yp + r * dim;
        T ss = 0;
        for (std::int64_t i = 0; i < dim; ++i) ss += xr[i] * xr[i];
        const T scale = T(1) / std::sqrt(ss / T(dim) + T(eps));
        for (std::int64_t i = 0; i < dim; ++i) yr[i] = wp[i] * xr[i] * scale;
    }
    return y;
}

// Rotates consecutive channel pairs (2j, 2j+1) of every head vector by
// angle pos * theta^(-2j/head_dim).
template <class T>
TensorT<T> rope_apply(const TensorT<T>& x, std::span<const std::int64_t> positions, double theta) {
    if (x.rank() != 3) throw std::invalid_argument("rope_apply: expected [seq, heads, head_dim]");
    const std::int64_t seq = x.dim(0), heads = x.dim(1), hd = x.dim(2);
    if (hd % 2 != 0) throw std::invalid_argument("rope_apply: head_dim must be even");
    if (static_cast<std::int64_t>(positions.size()) != seq)
        throw std::invalid_argument("rope_apply: positions length must equal seq");
    if (theta <= 0.0) throw std::invalid_argument("rope_apply: theta must be positive");
    TensorT<T> y(x.shape());
    const T* xp = x.data();
    T* yp = y.data();
    for (std::int64_t s = 0; s < seq; ++s) {
        const double pos = static_cast<double>(positions[static_cast<std::size_t>(s)]);
        for (std::int64_t h = 0; h < heads; ++h) {
            const T* xr = xp + (s * heads + h) * hd;
            T* yr = yp + (s * heads + h) * hd;
            for (std::int64_t j = 0; j < hd / 2; ++j) {
                const double freq = std::pow(theta, -2.0 * static_cast<double>(j) /
                                                        static_cast<double>(hd));
                const T c = static_cast<T>(std::cos(pos * freq));
                const T s_ = static_cast<T>(std::sin(pos * freq));
                const T a = xr[2 * j], b = xr[2 * j + 1];
                yr[2 * j] = a * c - b * s_;
                yr[2 * j + 1] = a * s_ + b * c;
            }
        }
    }
    return y;
}

// y = (silu(x * w_gate) ⊙ (x * w_up)) * w_down
template <class T>
TensorT<T> swiglu_ffn(const TensorT<T>& x, const TensorT<T>& w_gate, const TensorT<T>& w_up,
                      const TensorT<T>& w_down) {
    if (x.rank() < 1) throw std::invalid_argument("swiglu_ffn: scalar input");
    const std::int64_t hidden = x.shape().back();
    const std::int64_t rows = x.size() / hidden;
    if (w_gate.rank() != 2 || w_up.rank() != 2 || w_down.rank() != 2 ||
        w_gate.dim(0) != hidden || w_up.dim(0) != hidden || w_gate.dim(1) != w_up.dim(1) ||
        w_down.dim(0) != w_gate.dim(1) || w_down.dim(1) != hidden)
        throw std::invalid_argument("swiglu_ffn: inconsistent weight shapes");
    const std::int64_t ffn = w_gate.dim(1);
    TensorT<T> y(x.shape());
    std::vector<T> gate(static_cast<std::size_t>(rows * ffn));
    std::vector<T> up(static_cast<std::size_t>(rows * ffn));
    matmul(x.data(), w_gate.data(), gate.data(), rows, hidden, ffn);
    matmul(x.data(), w_up.data(), up.data(), rows, hidden, ffn);
    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r)
            for (std::int64_t f = 0; f < ffn; ++f) {
                auto idx = static_cast<std::size_t>(r * ffn + f);
                gate[idx] = silu(gate[idx]) * up[idx];
            }
    });
    matmul(gate.data(), w_down.data(), y.data(), rows, ffn, hidden);
    return y;
}

// Mean over positions of -log softmax(logits)[target].
template <class T>
double cross_entropy_loss(const TensorT<T>& logits, std::span<const std::int32_t> targets) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: expected [seq, vocab]");
    const std::int64_t seq = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != seq)
        throw std::invalid_argument("cross_entropy: targets length must equal seq");
    double total = 0.0;
    for (std::int64_t s = 0; s < seq; ++s) {
        const std::int32_t t = targets[static_cast<std::size_t>(s)];
        if (t < 0 || t >= vocab) throw std::invalid_argument("cross_entropy: target id out of range");
        const T* row = logits.data() + s * vocab;
        T mx = row[0];
        for (std::int64_t v = 1; v < vocab; ++v)
            if (row[v] > mx) mx = row[v];
        double lse = 0.0;
        for (std::int64_t v = 0; v < vocab; ++v) lse += std::exp(static_cast<double>(row[v] - mx));
        total += std::log(lse) + static_cast<double>(mx) - static_cast<double>(row[t]);
    }
    return total / static_cast<double>(seq);
}

}  // namespace fox
