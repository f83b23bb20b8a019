#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fox/config.hpp"
#include "fox/tensor.hpp"

namespace fox {

template <class T>
struct LayerWeightsT {
    TensorT<T> attn_norm_weight;  // [hidden]
    TensorT<T> wq;                // [hidden, n_heads*head_dim]
    TensorT<T> wk;                // [hidden, n_kv_heads*head_dim]
    TensorT<T> wv;                // [hidden, n_kv_heads*head_dim]
    TensorT<T> wo;                // [n_heads*head_dim, hidden]
    TensorT<T> ffn_norm_weight;   // [hidden]
    TensorT<T> w_gate;            // [hidden, ffn_hidden]
    TensorT<T> w_up;              // [hidden, ffn_hidden]
    TensorT<T> w_down;            // [ffn_hidden, hidden]
};

// All trainable weights. With tie_embeddings the stored `embedding` matrix
// is also the output projection (transposed at use); `output_proj` exists
// only for untied configurations.
template <class T>
struct ParameterSetT {
    TensorT<T> embedding;  // [vocab, hidden]
    std::vector<LayerWeightsT<T>> layers;
    TensorT<T> final_norm_weight;  // [hidden]
    TensorT<T> output_proj;        // [vocab, hidden], untied configs only

    std::int64_t element_count() const {
        std::int64_t n = embedding.size() + final_norm_weight.size() + output_proj.size();
        for (const auto& l : layers)
            n += l.attn_norm_weight.size() + l.wq.size() + l.wk.size() + l.wv.size() +
                 l.wo.size() + l.ffn_norm_weight.size() + l.w_gate.size() + l.w_up.size() +
                 l.w_down.size();
        return n;
    }

    // Visits every tensor in a fixed order with its checkpoint name.
    template <class Fn>
    void visit(Fn&& fn) {
        fn("embedding", embedding);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            fn(p + "attn_norm", layers[i].attn_norm_weight);
            fn(p + "wq", layers[i].wq);
            fn(p + "wk", layers[i].wk);
            fn(p + "wv", layers[i].wv);
            fn(p + "wo", layers[i].wo);
            fn(p + "ffn_norm", layers[i].ffn_norm_weight);
            fn(p + "w_gate", layers[i].w_gate);
            fn(p + "w_up", layers[i].w_up);
            fn(p + "w_down", layers[i].w_down);
        }
        fn("final_norm", final_norm_weight);
        if (!output_proj.empty()) fn("output_proj", output_proj);
    }

    template <class Fn>
    void visit(Fn&& fn) const {
        const_cast<ParameterSetT*>(this)->visit(
            [&](const std::string& name, TensorT<T>& t) { fn(name, const_cast<const TensorT<T>&>(t)); });
    }
};

struct InitOptions {
    // Projection matrices use proj_std; the (tied) embedding uses a smaller
    // embed_std so a freshly initialized model predicts near-uniformly over
    // the vocabulary.
    double proj_std = 0.02;
    double embed_std = 0.01;
};

// Allocates all tensors per config and fills them: normal(0, std) for
// matrices, ones for norm weights. Deterministic in the seed.
template <class T>
ParameterSetT<T> init_parameters(const ModelConfig& config, std::uint64_t seed,
                                 InitOptions opts = {}) {
    config.validate();
    RandomSource rng(seed);
    const std::int64_t h = config.hidden_dim;
    const std::int64_t q_dim = config.n_heads * config.head_dim;
    const std::int64_t kv_dim = config.n_kv_heads * config.head_dim;
    ParameterSetT<T> p;
    p.embedding = TensorT<T>::randn({config.vocab_size, h}, rng, opts.embed_std);
    p.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& l : p.layers) {
        l.attn_norm_weight = TensorT<T>({h});
        l.attn_norm_weight.fill(T(1));
        l.wq = TensorT<T>::randn({h, q_dim}, rng, opts.proj_std);
        l.wk = TensorT<T>::randn({h, kv_dim}, rng, opts.proj_std);
        l.wv = TensorT<T>::randn({h, kv_dim}, rng, opts.proj_std);
        l.wo = TensorT<T>::randn({q_dim, h}, rng, opts.proj_std);
        l.ffn_norm_weight = TensorT<T>({h});
        l.ffn_norm_weight.fill(T(1));
        l.w_gate = TensorT<T>::randn({h, config.ffn_hidden_dim}, rng, opts.proj_std);
        l.w_up = TensorT<T>::randn({h, config.ffn_hidden_dim}, rng, opts.proj_std);
        l.w_down = TensorT<T>::randn({config.ffn_hidden_dim, h}, rng, opts.proj_std);
    }
    p.final_norm_weight = TensorT<T>({h});
    p.final_norm_weight.fill(T(1));
    if (!config.tie_embeddings)
        p.output_proj = TensorT<T>::randn({config.vocab_size, h}, rng, opts.embed_std);
    return p;
}

// Same-shaped set with every tensor zeroed (gradient / moment buffers).
template <class T>
ParameterSetT<T> zeros_like(const ParameterSetT<T>& p) {
    ParameterSetT<T> z;
    z.embedding = TensorT<T>(p.embedding.shape());
    z.layers.resize(p.layers.size());
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        auto& o = z.layers[i];
        o.attn_norm_weight = TensorT<T>(l.attn_norm_weight.shape());
        o.wq = TensorT<T>(l.wq.shape());
        o.wk = TensorT<T>(l.wk.shape());
        o.wv = TensorT<T>(l.wv.shape());
        o.wo = TensorT<T>(l.wo.shape());
        o.ffn_norm_weight = TensorT<T>(l.ffn_norm_weight.shape());
        o.w_gate = TensorT<T>(l.w_gate.shape());
        o.w_up = TensorT<T>(l.w_up.shape());
        o.w_down = TensorT<T>(l.w_down.shape());
    }
    z.final_norm_weight = TensorT<T>(p.final_norm_weight.shape());
    if (!p.output_proj.empty()) z.output_proj = TensorT<T>(p.output_proj.shape());
    return z;
}

using LayerWeights = LayerWeightsT<float>;
using ParameterSet = ParameterSetT<float>;

}  // namespace fox
