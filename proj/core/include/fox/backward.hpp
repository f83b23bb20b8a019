#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fox/model.hpp"

namespace fox {

// Pre-transposed weight matrices used by the input-gradient matmuls.
// Rebuild whenever the parameters change.
template <class T>
struct TransposedWeightsT {
    struct Layer {
        TensorT<T> wq_t, wk_t, wv_t;  // [proj_dim, hidden]
        TensorT<T> wo_t;              // [hidden, q_dim]
        TensorT<T> w_gate_t, w_up_t;  // [ffn, hidden]
        TensorT<T> w_down_t;          // [hidden, ffn]
    };
    std::vector<Layer> layers;
};

template <class T>
TransposedWeightsT<T> make_transposed(const ParameterSetT<T>& params) {
    TransposedWeightsT<T> tw;
    tw.layers.resize(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& l = params.layers[i];
        auto& o = tw.layers[i];
        auto tr = [](const TensorT<T>& w) {
            TensorT<T> wt({w.dim(1), w.dim(0)});
            transpose(w.data(), wt.data(), w.dim(0), w.dim(1));
            return wt;
        };
        o.wq_t = tr(l.wq);
        o.wk_t = tr(l.wk);
        o.wv_t = tr(l.wv);
        o.wo_t = tr(l.wo);
        o.w_gate_t = tr(l.w_gate);
        o.w_up_t = tr(l.w_up);
        o.w_down_t = tr(l.w_down);
    }
    return tw;
}

namespace detail {

// dx and dw for y_i = w_i * x_i / sqrt(mean(x^2) + eps).
template <class T>
void rms_norm_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, std::int64_t rows,
                       std::int64_t dim, double eps) {
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * dim;
        const T* dyr = dy + r * dim;
        T* dxr = dx + r * dim;
        T ss = 0;
        for (std::int64_t i = 0; i < dim; ++i) ss += xr[i] * xr[i];
        const T inv = T(1) / std::sqrt(ss / T(dim) + T(eps));
        T s = 0;
        for (std::int64_t i = 0; i < dim; ++i) s += dyr[i] * w[i] * xr[i];
        const T k = inv * inv * inv * s / T(dim);
        for (std::int64_t i = 0; i < dim; ++i) {
            dxr[i] = inv * w[i] * dyr[i] - k * xr[i];
            dw[i] += dyr[i] * xr[i] * inv;
        }
    }
}

// Inverse of rope_rotate_rows (rotation by the negated angle).
template <class T>
void rope_rotate_rows_inverse(T* x, std::int64_t seq, std::int64_t heads, std::int64_t head_dim,
                              std::int64_t start_pos, const std::vector<double>& freqs) {
    parallel_for(seq, [&](std::int64_t s0, std::int64_t s1) {
        for (std::int64_t s = s0; s < s1; ++s) {
            const double pos = static_cast<double>(start_pos + s);
            for (std::int64_t h = 0; h < heads; ++h) {
                T* r = x + (s * heads + h) * head_dim;
                for (std::int64_t j = 0; j < head_dim / 2; ++j) {
                    const T c = static_cast<T>(std::cos(pos * freqs[static_cast<std::size_t>(j)]));
                    const T sn = static_cast<T>(std::sin(pos * freqs[static_cast<std::size_t>(j)]));
                    const T a = r[2 * j], b = r[2 * j + 1];
                    r[2 * j] = a * c + b * sn;
                    r[2 * j + 1] = -a * sn + b * c;
                }
            }
        }
    });
}

// Backward through the causal softmax(QK^T/sqrt(d))V core for one layer.
// Probabilities are recomputed from the cached rotated q/k. KV-head grads
// accumulate across the query heads of the group, so the head loop stays
// sequential.
template <class T>
void attention_core_backward(const LayerTraceT<T>& lt, const TensorT<T>& dconcat,
                             const ModelConfig& config, TensorT<T>& dq_rot, TensorT<T>& dk_rot,
                             TensorT<T>& dv) {
    const std::int64_t seq = lt.q_rot.dim(0);
    const std::int64_t hd = config.head_dim;
    const std::int64_t n_heads = config.n_heads, n_kv = config.n_kv_heads;
    const std::int64_t q_dim = n_heads * hd, kv_dim = n_kv * hd;
    const std::int64_t group = config.kv_group_size();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    std::vector<T> probs(static_cast<std::size_t>(seq * seq));
    std::vector<T> dscore(static_cast<std::size_t>(seq * seq));
    for (std::int64_t h = 0; h < n_heads; ++h) {
        const std::int64_t kvh = h / group;
        parallel_for(seq, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t i = i0; i < i1; ++i) {
                T* prow = probs.data() + i * seq;
                const T* qv = lt.q_rot.data() + i * q_dim + h * hd;
                for (std::int64_t j = 0; j <= i; ++j)
                    prow[j] = dot(qv, lt.k_rot.data() + j * kv_dim + kvh * hd, hd) * scale;
                softmax_row(prow, i + 1);
                // dp then dscore for this row
                T* drow = dscore.data() + i * seq;
                const T* doh = dconcat.data() + i * q_dim + h * hd;
                T srow = 0;
                for (std::int64_t j = 0; j <= i; ++j) {
                    drow[j] = dot(doh, lt.v.data() + j * kv_dim + kvh * hd, hd);
                    srow += prow[j] * drow[j];
                }
                for (std::int64_t j = 0; j <= i; ++j) drow[j] = prow[j] * (drow[j] - srow);
                // dq for this row
                T* dq = dq_rot.data() + i * q_dim + h * hd;
                for (std::int64_t j = 0; j <= i; ++j)
                    axpy(drow[j] * scale, lt.k_rot.data() + j * kv_dim + kvh * hd, dq, hd);
            }
        });
        parallel_for(seq, [&](std::int64_t j0, std::int64_t j1) {
            for (std::int64_t j = j0; j < j1; ++j) {
                T* dk = dk_rot.data() + j * kv_dim + kvh * hd;
                T* dvj = dv.data() + j * kv_dim + kvh * hd;
                for (std::int64_t i = j; i < seq; ++i) {
                    axpy(dscore[static_cast<std::size_t>(i * seq + j)] * scale,
                         lt.q_rot.data() + i * q_dim + h * hd, dk, hd);
                    axpy(probs[static_cast<std::size_t>(i * seq + j)],
                         dconcat.data() + i * q_dim + h * hd, dvj, hd);
                }
            }
        });
    }
}

}  // namespace detail

// Accumulates the gradients of a traced forward pass into `grads`, given
// d(loss)/d(logits). The tied embedding receives both the input-lookup and
// the output-projection contributions.
template <class T>
void backward_from_trace(const ForwardTraceT<T>& trace, const TensorT<T>& dlogits,
                         const ParameterSetT<T>& params, const TransposedWeightsT<T>& tw,
                         const ModelConfig& config, ParameterSetT<T>& grads) {
    const std::int64_t seq = dlogits.dim(0);
    const std::int64_t h = config.hidden_dim;
    const std::int64_t vocab = config.vocab_size;
    const std::int64_t ffn = config.ffn_hidden_dim;
    const std::int64_t q_dim = config.n_heads * config.head_dim;
    const std::int64_t kv_dim = config.n_kv_heads * config.head_dim;
    const auto freqs = detail::rope_freqs(config.head_dim, config.rope_theta);

    // Logits = final_normed x W_out^T with W_out = embedding (tied) or output_proj.
    const TensorT<T>& w_out = config.tie_embeddings ? params.embedding : params.output_proj;
    TensorT<T>& dw_out = config.tie_embeddings ? grads.embedding : grads.output_proj;
    TensorT<T> dnormed({seq, h});
    matmul(dlogits.data(), w_out.data(), dnormed.data(), seq, vocab, h);
    matmul_acc_weight_grad(dlogits.data(), trace.final_normed.data(), dw_out.data(), seq, vocab, h);

    TensorT<T> dx({seq, h});
    detail::rms_norm_backward(trace.final_in.data(), params.final_norm_weight.data(),
                              dnormed.data(), dx.data(), grads.final_norm_weight.data(), seq, h,
                              config.norm_eps);

    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& lw = params.layers[li];
        const auto& lt = trace.layers[li];
        const auto& ltw = tw.layers[li];
        auto& gw = grads.layers[li];

        // FFN sub-block: x_out = x_mid + (silu(xn wg) ⊙ (xn wu)) wd
        TensorT<T> dgated({seq, ffn});
        matmul(dx.data(), ltw.w_down_t.data(), dgated.data(), seq, h, ffn);
        matmul_acc_weight_grad(lt.gated.data(), dx.data(), gw.w_down.data(), seq, ffn, h);

        TensorT<T> dgate_pre({seq, ffn}), dup({seq, ffn});
        parallel_for(seq, [&](std::int64_t r0, std::int64_t r1) {
            for (std::int64_t r = r0; r < r1; ++r)
                for (std::int64_t f = 0; f < ffn; ++f) {
                    const std::int64_t idx = r * ffn + f;
                    const T z = lt.gate_pre[idx];
                    const T sig = T(1) / (T(1) + std::exp(-z));
                    const T sil = z * sig;
                    dup[idx] = dgated[idx] * sil;
                    dgate_pre[idx] = dgated[idx] * lt.up[idx] * sig * (T(1) + z * (T(1) - sig));
                }
        });
        matmul_acc_weight_grad(lt.ffn_normed.data(), dgate_pre.data(), gw.w_gate.data(), seq, h, ffn);
        matmul_acc_weight_grad(lt.ffn_normed.data(), dup.data(), gw.w_up.data(), seq, h, ffn);

        TensorT<T> dffn_normed({seq, h});
        matmul(dgate_pre.data(), ltw.w_gate_t.data(), dffn_normed.data(), seq, ffn, h);
        {
            TensorT<T> tmp({seq, h});
            matmul(dup.data(), ltw.w_up_t.data(), tmp.data(), seq, ffn, h);
            for (std::int64_t i = 0; i < tmp.size(); ++i) dffn_normed[i] += tmp[i];
        }
        TensorT<T> dx_mid({seq, h});
        detail::rms_norm_backward(lt.x_mid.data(), lw.ffn_norm_weight.data(), dffn_normed.data(),
                                  dx_mid.data(), gw.ffn_norm_weight.data(), seq, h, config.norm_eps);
        for (std::int64_t i = 0; i < dx.size(); ++i) dx_mid[i] += dx[i];  // residual skip

        // Attention sub-block: x_mid = x_in + attn(xn) wo
        TensorT<T> dconcat({seq, q_dim});
        matmul(dx_mid.data(), ltw.wo_t.data(), dconcat.data(), seq, h, q_dim);
        matmul_acc_weight_grad(lt.attn_concat.data(), dx_mid.data(), gw.wo.data(), seq, q_dim, h);

        TensorT<T> dq_rot({seq, q_dim}), dk_rot({seq, kv_dim}), dv({seq, kv_dim});
        detail::attention_core_backward(lt, dconcat, config, dq_rot, dk_rot, dv);
        detail::rope_rotate_rows_inverse(dq_rot.data(), seq, config.n_heads, config.head_dim, 0,
                                         freqs);
        detail::rope_rotate_rows_inverse(dk_rot.data(), seq, config.n_kv_heads, config.head_dim, 0,
                                         freqs);

        matmul_acc_weight_grad(lt.attn_normed.data(), dq_rot.data(), gw.wq.data(), seq, h, q_dim);
        matmul_acc_weight_grad(lt.attn_normed.data(), dk_rot.data(), gw.wk.data(), seq, h, kv_dim);
        matmul_acc_weight_grad(lt.attn_normed.data(), dv.data(), gw.wv.data(), seq, h, kv_dim);

        TensorT<T> dattn_normed({seq, h});
        matmul(dq_rot.data(), ltw.wq_t.data(), dattn_normed.data(), seq, q_dim, h);
        {
            TensorT<T> tmp({seq, h});
            matmul(dk_rot.data(), ltw.wk_t.data(), tmp.data(), seq, kv_dim, h);
            for (std::int64_t i = 0; i < tmp.size(); ++i) dattn_normed[i] += tmp[i];
            matmul(dv.data(), ltw.wv_t.data(), tmp.data(), seq, kv_dim, h);
            for (std::int64_t i = 0; i < tmp.size(); ++i) dattn_normed[i] += tmp[i];
        }
        TensorT<T> dx_in({seq, h});
        detail::rms_norm_backward(lt.x_in.data(), lw.attn_norm_weight.data(), dattn_normed.data(),
                                  dx_in.data(), gw.attn_norm_weight.data(), seq, h, config.norm_eps);
        for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] = dx_mid[i] + dx_in[i];
    }

    // Embedding-lookup gradient (input side).
    for (std::int64_t s = 0; s < seq; ++s) {
        T* row = grads.embedding.data() +
                 static_cast<std::int64_t>(trace.tokens[static_cast<std::size_t>(s)]) * h;
        axpy(T(1), dx.data() + s * h, row, h);
    }
}

// Per-position weighted cross entropy with logits gradient. Positions with
// weight 0 contribute neither loss nor gradient. Returns the weighted sum
// of -log softmax(logits)[target].
template <class T>
double loss_and_dlogits(const TensorT<T>& logits, std::span<const std::int32_t> targets,
                        std::span<const T> weights, TensorT<T>& dlogits) {
    const std::int64_t seq = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != seq ||
        static_cast<std::int64_t>(weights.size()) != seq)
        throw std::invalid_argument("loss_and_dlogits: targets/weights length mismatch");
    for (std::int64_t s = 0; s < seq; ++s) {
        if (weights[static_cast<std::size_t>(s)] == T(0)) continue;
        const std::int32_t t = targets[static_cast<std::size_t>(s)];
        if (t < 0 || t >= vocab)
            throw std::invalid_argument("loss_and_dlogits: target id out of range");
    }
    std::vector<double> row_loss(static_cast<std::size_t>(seq), 0.0);
    parallel_for(seq, [&](std::int64_t s0, std::int64_t s1) {
        for (std::int64_t s = s0; s < s1; ++s) {
            const T w = weights[static_cast<std::size_t>(s)];
            T* drow = dlogits.data() + s * vocab;
            if (w == T(0)) {
                std::fill(drow, drow + vocab, T(0));
                continue;
            }
            const std::int32_t t = targets[static_cast<std::size_t>(s)];
            const T* row = logits.data() + s * vocab;
            T mx = row[0];
            for (std::int64_t v = 1; v < vocab; ++v)
                if (row[v] > mx) mx = row[v];
            double lse = 0.0;
            for (std::int64_t v = 0; v < vocab; ++v) {
                const T e = std::exp(row[v] - mx);
                drow[v] = e;
                lse += static_cast<double>(e);
            }
            const T inv = static_cast<T>(1.0 / lse);
            for (std::int64_t v = 0; v < vocab; ++v) drow[v] *= inv * w;
            drow[t] -= w;
            row_loss[static_cast<std::size_t>(s)] =
                static_cast<double>(w) *
                (std::log(lse) + static_cast<double>(mx) - static_cast<double>(row[t]));
        }
    });
    double total = 0.0;
    for (double l : row_loss) total += l;
    return total;
}

// Gradients of cross_entropy_loss(forward(tokens), targets) with respect to
// every parameter (mean over all positions).
template <class T>
ParameterSetT<T> backward(std::span<const std::int32_t> tokens,
                          std::span<const std::int32_t> targets, const ParameterSetT<T>& params,
                          const ModelConfig& config) {
    if (tokens.size() != targets.size())
        throw std::invalid_argument("backward: tokens/targets length mismatch");
    ForwardTraceT<T> trace;
    TensorT<T> out_t = build_output_transpose(params, config);
    TensorT<T> logits = forward<T>(tokens, params, config, nullptr, &out_t, &trace);
    const std::int64_t seq = logits.dim(0);
    std::vector<T> weights(static_cast<std::size_t>(seq), static_cast<T>(1.0 / static_cast<double>(seq)));
    TensorT<T> dlogits({seq, config.vocab_size});
    loss_and_dlogits<T>(logits, targets, weights, dlogits);
    ParameterSetT<T> grads = zeros_like(params);
    TransposedWeightsT<T> tw = make_transposed(params);
    backward_from_trace(trace, dlogits, params, tw, config, grads);
    return grads;
}

}  // namespace fox
