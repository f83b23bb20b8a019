#include "fox/config.hpp"

#include <stdexcept>

#include "fox/errors.hpp"

namespace fox {

void ModelConfig::validate() const {
    if (vocab_size < 1) throw std::invalid_argument("config: vocab_size must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("config: hidden_dim must be >= 1");
    if (n_layers < 1) throw std::invalid_argument("config: n_layers must be >= 1");
    if (n_heads < 1 || n_kv_heads < 1)
        throw std::invalid_argument("config: head counts must be >= 1");
    if (hidden_dim != n_heads * head_dim)
        throw std::invalid_argument("config: hidden_dim must equal n_heads * head_dim");
    if (n_heads % n_kv_heads != 0)
        throw std::invalid_argument("config: n_heads must be a multiple of n_kv_heads");
    if (head_dim % 2 != 0)
        throw std::invalid_argument("config: head_dim must be even (rotary pairs)");
    if (ffn_hidden_dim < 1) throw std::invalid_argument("config: ffn_hidden_dim must be >= 1");
    if (max_seq_len < 1) throw std::invalid_argument("config: max_seq_len must be >= 1");
    if (rope_theta <= 0.0) throw std::invalid_argument("config: rope_theta must be positive");
    if (norm_eps <= 0.0) throw std::invalid_argument("config: norm_eps must be positive");
}

ModelConfig preset_config(const std::string& name) {
    ModelConfig c;
    if (name == "fox1-paper") {
        c.vocab_size = 256000;
        c.hidden_dim = 2048;
        c.n_layers = 32;
        c.n_heads = 16;
        c.n_kv_heads = 4;
        c.head_dim = 128;
        c.ffn_hidden_dim = 4096;
        c.max_seq_len = 8192;
    } else if (name == "fox1-toy") {
        c.vocab_size = 8192;
        c.hidden_dim = 256;
        c.n_layers = 8;
        c.n_heads = 8;
        c.n_kv_heads = 2;
        c.head_dim = 32;
        c.ffn_hidden_dim = 704;
        c.max_seq_len = 512;
    } else if (name == "gradcheck") {
        c.vocab_size = 32;
        c.hidden_dim = 16;
        c.n_layers = 2;
        c.n_heads = 4;
        c.n_kv_heads = 2;
        c.head_dim = 4;
        c.ffn_hidden_dim = 32;
        c.max_seq_len = 64;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    c.validate();
    return c;
}

ParamCounts count_parameters(const ModelConfig& config) {
    config.validate();
    ParamCounts out;
    const std::int64_t h = config.hidden_dim;
    const std::int64_t q_dim = config.n_heads * config.head_dim;
    const std::int64_t kv_dim = config.n_kv_heads * config.head_dim;
    out.embedding = config.vocab_size * h;
    out.per_layer = h * q_dim      // wq
                    + h * kv_dim   // wk
                    + h * kv_dim   // wv
                    + q_dim * h    // wo
                    + 3 * h * config.ffn_hidden_dim  // w_gate, w_up, w_down
                    + 2 * h;       // attn_norm, ffn_norm
    out.savings_from_tying = config.tie_embeddings ? out.embedding : 0;
    out.total = out.embedding + config.n_layers * out.per_layer + h  // final norm
                + (config.tie_embeddings ? 0 : out.embedding);       // untied output head
    return out;
}

std::int64_t kv_memory_bytes(const ModelConfig& config, std::int64_t seq_len,
                             std::int64_t bytes_per_element) {
    if (seq_len < 0 || seq_len > config.max_seq_len)
        throw CapacityError("kv_memory: seq_len exceeds max_seq_len");
    return 2 * config.n_layers * config.n_kv_heads * seq_len * config.head_dim *
           bytes_per_element;
}

}  // namespace fox
