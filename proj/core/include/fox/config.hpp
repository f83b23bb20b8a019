#pragma once

#include <cstdint>
#include <string>

namespace fox {

// Architectural hyperparameters of the network.
struct ModelConfig {
    std::int64_t vocab_size = 0;
    std::int64_t hidden_dim = 0;
    std::int64_t n_layers = 0;
    std::int64_t n_heads = 0;
    std::int64_t n_kv_heads = 0;
    std::int64_t head_dim = 0;
    std::int64_t ffn_hidden_dim = 0;
    std::int64_t max_seq_len = 0;
    double rope_theta = 10000.0;
    double norm_eps = 1e-6;
    bool tie_embeddings = true;

    // Throws std::invalid_argument when any structural invariant is broken
    // (hidden_dim != n_heads*head_dim, n_heads % n_kv_heads != 0, ...).
    void validate() const;

    std::int64_t kv_group_size() const { return n_heads / n_kv_heads; }
};

// Named presets:
//   "fox1-paper" - the full-scale 1.6B architecture, used for parameter
//                  arithmetic and memory accounting only.
//   "fox1-toy"   - the desk-scale configuration all training and
//                  inference tests run on.
//   "gradcheck"  - a minimal configuration small enough for elementwise
//                  finite-difference verification.
ModelConfig preset_config(const std::string& name);

struct ParamCounts {
    std::int64_t total = 0;
    std::int64_t embedding = 0;
    std::int64_t per_layer = 0;
    std::int64_t savings_from_tying = 0;
};

// Closed-form trainable-parameter count for a config.
ParamCounts count_parameters(const ModelConfig& config);

// Bytes held by a KV cache covering seq_len positions.
std::int64_t kv_memory_bytes(const ModelConfig& config, std::int64_t seq_len,
                             std::int64_t bytes_per_element);

}  // namespace fox
