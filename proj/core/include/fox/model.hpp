#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fox/config.hpp"
#include "fox/errors.hpp"
#include "fox/kv_cache.hpp"
#include "fox/ops.hpp"
#include "fox/params.hpp"

namespace fox {

// Activations recorded during a forward pass for use by the backward pass.
// Attention probabilities are not stored; they are recomputed from the
// cached rotated q/k when needed.
template <class T>
struct LayerTraceT {
    TensorT<T> x_in;         // [seq, hidden] residual stream entering the layer
    TensorT<T> attn_normed;  // [seq, hidden]
    TensorT<T> q_rot;        // [seq, n_heads*head_dim], post-rotation
    TensorT<T> k_rot;        // [seq, n_kv_heads*head_dim], post-rotation
    TensorT<T> v;            // [seq, n_kv_heads*head_dim]
    TensorT<T> attn_concat;  // [seq, n_heads*head_dim], pre-output-projection
    TensorT<T> x_mid;        // [seq, hidden] after attention residual
    TensorT<T> ffn_normed;   // [seq, hidden]
    TensorT<T> gate_pre;     // [seq, ffn], pre-activation
    TensorT<T> up;           // [seq, ffn]
    TensorT<T> gated;        // [seq, ffn] = silu(gate_pre) * up
};

template <class T>
struct ForwardTraceT {
    std::vector<std::int32_t> tokens;
    std::vector<LayerTraceT<T>> layers;
    TensorT<T> final_in;      // [seq, hidden] input of the final norm
    TensorT<T> final_normed;  // [seq, hidden]
};

namespace detail {

// Frequencies theta^(-2j/head_dim) for j in [0, head_dim/2).
inline std::vector<double> rope_freqs(std::int64_t head_dim, double theta) {
    std::vector<double> f(static_cast<std::size_t>(head_dim / 2));
    for (std::int64_t j = 0; j < head_dim / 2; ++j)
        f[static_cast<std::size_t>(j)] =
            std::pow(theta, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
    return f;
}

// In-place rotation of [seq, heads*head_dim] rows at absolute positions
// start_pos + row.
template <class T>
void rope_rotate_rows(T* x, std::int64_t seq, std::int64_t heads, std::int64_t head_dim,
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
                    r[2 * j] = a * c - b * sn;
                    r[2 * j + 1] = a * sn + b * c;
                }
            }
        }
    });
}

}  // namespace detail

// Grouped-query attention over one layer's weights: projects Q (n_heads) and
// K/V (n_kv_heads), rotates Q and K, and computes causally masked scaled
// dot-product attention followed by the output projection. Query head h
// reads KV head h / (n_heads / n_kv_heads). With `cache`, the input rows are
// appended at absolute positions [start_pos, start_pos+seq) and attention
// runs over the whole cached history.
template <class T>
TensorT<T> gqa_attention(const TensorT<T>& x, const LayerWeightsT<T>& lw,
                         const ModelConfig& config, LayerKVT<T>* cache = nullptr,
                         std::int64_t start_pos = 0, LayerTraceT<T>* trace = nullptr) {
    if (x.rank() != 2 || x.dim(1) != config.hidden_dim)
        throw std::invalid_argument("gqa_attention: expected [seq, hidden_dim] input");
    const std::int64_t seq = x.dim(0);
    if (seq < 1) throw std::invalid_argument("gqa_attention: empty input");
    const std::int64_t hd = config.head_dim;
    const std::int64_t n_heads = config.n_heads, n_kv = config.n_kv_heads;
    const std::int64_t q_dim = n_heads * hd, kv_dim = n_kv * hd;
    const std::int64_t group = config.kv_group_size();
    if (cache) {
        if (start_pos != cache->filled)
            throw StateError("gqa_attention: cache position overlap");
        if (start_pos + seq > cache->capacity())
            throw CapacityError("gqa_attention: cache capacity exceeded");
    } else if (start_pos != 0) {
        throw std::invalid_argument("gqa_attention: nonzero start position requires a cache");
    }

    TensorT<T> q({seq, q_dim}), k({seq, kv_dim}), v({seq, kv_dim});
    matmul(x.data(), lw.wq.data(), q.data(), seq, config.hidden_dim, q_dim);
    matmul(x.data(), lw.wk.data(), k.data(), seq, config.hidden_dim, kv_dim);
    matmul(x.data(), lw.wv.data(), v.data(), seq, config.hidden_dim, kv_dim);

    const auto freqs = detail::rope_freqs(hd, config.rope_theta);
    detail::rope_rotate_rows(q.data(), seq, n_heads, hd, start_pos, freqs);
    detail::rope_rotate_rows(k.data(), seq, n_kv, hd, start_pos, freqs);

    if (cache) {
        for (std::int64_t s = 0; s < seq; ++s)
            for (std::int64_t g = 0; g < n_kv; ++g) {
                const T* ks = k.data() + s * kv_dim + g * hd;
                const T* vs = v.data() + s * kv_dim + g * hd;
                std::copy(ks, ks + hd, cache->key_slot(g, start_pos + s));
                std::copy(vs, vs + hd, cache->value_slot(g, start_pos + s));
            }
        cache->commit(seq);
    }

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    TensorT<T> concat({seq, q_dim});
    // One block per (query position, head); each owns one output vector.
    parallel_for(seq * n_heads, [&](std::int64_t b0, std::int64_t b1) {
        std::vector<T> scores(static_cast<std::size_t>(start_pos + seq));
        for (std::int64_t b = b0; b < b1; ++b) {
            const std::int64_t s = b / n_heads;
            const std::int64_t h = b % n_heads;
            const std::int64_t kvh = h / group;
            const std::int64_t n_keys = start_pos + s + 1;  // causal window
            const T* qv = q.data() + s * q_dim + h * hd;
            for (std::int64_t j = 0; j < n_keys; ++j) {
                const T* kv = cache ? cache->key_row(kvh, j) : k.data() + j * kv_dim + kvh * hd;
                scores[static_cast<std::size_t>(j)] = dot(qv, kv, hd) * scale;
            }
            softmax_row(scores.data(), n_keys);
            T* out = concat.data() + s * q_dim + h * hd;
            std::fill(out, out + hd, T(0));
            for (std::int64_t j = 0; j < n_keys; ++j) {
                const T* vv = cache ? cache->value_row(kvh, j) : v.data() + j * kv_dim + kvh * hd;
                axpy(scores[static_cast<std::size_t>(j)], vv, out, hd);
            }
        }
    });

    TensorT<T> y({seq, config.hidden_dim});
    matmul(concat.data(), lw.wo.data(), y.data(), seq, q_dim, config.hidden_dim);

    if (trace) {
        trace->q_rot = std::move(q);
        trace->k_rot = std::move(k);
        trace->v = std::move(v);
        trace->attn_concat = std::move(concat);
    }
    return y;
}

// Transposed output-projection matrix [hidden, vocab]; speeds up the logit
// matmul. Must be rebuilt whenever the parameters change.
template <class T>
TensorT<T> build_output_transpose(const ParameterSetT<T>& params, const ModelConfig& config) {
    const TensorT<T>& w = config.tie_embeddings ? params.embedding : params.output_proj;
    TensorT<T> wt({config.hidden_dim, config.vocab_size});
    transpose(w.data(), wt.data(), config.vocab_size, config.hidden_dim);
    return wt;
}

// Full decoder forward pass: embedding lookup, n_layers pre-norm blocks with
// residual connections, final norm, logits against the (tied) output matrix.
// `out_proj_t`, when given, must be build_output_transpose(params, config).
// `trace` requires cache == nullptr.
template <class T>
TensorT<T> forward(std::span<const std::int32_t> tokens, const ParameterSetT<T>& params,
                   const ModelConfig& config, KVCacheT<T>* cache = nullptr,
                   const TensorT<T>* out_proj_t = nullptr, ForwardTraceT<T>* trace = nullptr) {
    const std::int64_t seq = static_cast<std::int64_t>(tokens.size());
    if (seq < 1) throw std::invalid_argument("forward: empty token sequence");
    if (trace && cache) throw std::invalid_argument("forward: trace requires cache-free pass");
    const std::int64_t start_pos = cache ? cache->filled() : 0;
    if (start_pos + seq > config.max_seq_len)
        throw CapacityError("forward: sequence exceeds max_seq_len");
    for (std::int32_t id : tokens)
        if (id < 0 || id >= config.vocab_size)
            throw std::invalid_argument("forward: token id out of range");

    const std::int64_t h = config.hidden_dim;
    TensorT<T> x({seq, h});
    for (std::int64_t s = 0; s < seq; ++s) {
        const T* row = params.embedding.data() + static_cast<std::int64_t>(tokens[static_cast<std::size_t>(s)]) * h;
        std::copy(row, row + h, x.data() + s * h);
    }

    if (trace) {
        trace->tokens.assign(tokens.begin(), tokens.end());
        trace->layers.assign(params.layers.size(), {});
    }

    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& lw = params.layers[li];
        LayerTraceT<T>* lt = trace ? &trace->layers[li] : nullptr;
        if (lt) lt->x_in = x;

        TensorT<T> normed = rms_norm(x, lw.attn_norm_weight, config.norm_eps);
        TensorT<T> attn = gqa_attention(normed, lw, config,
                                        cache ? &cache->layers[li] : nullptr, start_pos, lt);
        if (lt) lt->attn_normed = std::move(normed);
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] += attn[i];
        if (lt) lt->x_mid = x;

        TensorT<T> fnormed = rms_norm(x, lw.ffn_norm_weight, config.norm_eps);
        const std::int64_t ffn = config.ffn_hidden_dim;
        TensorT<T> gate_pre({seq, ffn}), up({seq, ffn}), gated({seq, ffn});
        matmul(fnormed.data(), lw.w_gate.data(), gate_pre.data(), seq, h, ffn);
        matmul(fnormed.data(), lw.w_up.data(), up.data(), seq, h, ffn);
        parallel_for(seq, [&](std::int64_t r0, std::int64_t r1) {
            for (std::int64_t r = r0; r < r1; ++r)
                for (std::int64_t f = 0; f < ffn; ++f)
                    gated[r * ffn + f] = silu(gate_pre[r * ffn + f]) * up[r * ffn + f];
        });
        TensorT<T> down({seq, h});
        matmul(gated.data(), lw.w_down.data(), down.data(), seq, ffn, h);
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] += down[i];

        if (lt) {
            lt->ffn_normed = std::move(fnormed);
            lt->gate_pre = std::move(gate_pre);
            lt->up = std::move(up);
            lt->gated = std::move(gated);
        }
    }

    if (trace) trace->final_in = x;
    TensorT<T> normed = rms_norm(x, params.final_norm_weight, config.norm_eps);

    TensorT<T> logits({seq, config.vocab_size});
    if (out_proj_t) {
        matmul(normed.data(), out_proj_t->data(), logits.data(), seq, h, config.vocab_size);
    } else {
        const TensorT<T>& w = config.tie_embeddings ? params.embedding : params.output_proj;
        parallel_for(seq, [&](std::int64_t s0, std::int64_t s1) {
            for (std::int64_t s = s0; s < s1; ++s)
                for (std::int64_t vId = 0; vId < config.vocab_size; ++vId)
                    logits[s * config.vocab_size + vId] =
                        dot(normed.data() + s * h, w.data() + vId * h, h);
        });
    }
    if (trace) trace->final_normed = std::move(normed);
    return logits;
}

}  // namespace fox
