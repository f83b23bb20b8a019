#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fox/config.hpp"
#include "fox/params.hpp"
#include "fox/tensor.hpp"

namespace fox {

struct SamplingParams {
    enum class Mode { Greedy, Temperature };
    Mode mode = Mode::Greedy;
    double temperature = 1.0;  // > 0, Temperature mode only
    std::int64_t top_k = 0;    // 0 disables top-k filtering
    std::int64_t max_new_tokens = 16;
    std::vector<std::int32_t> stop_ids;
    std::uint64_t seed = 0;  // ignored by greedy decoding

    void validate() const;
};

// Autoregressive decoding: one prefill pass fills the KV cache, then each
// step feeds exactly one token. Returns the generated ids (a stop id, when
// hit, is included as the final token). `out_proj_t`, when given, must be
// build_output_transpose(params, config).
std::vector<std::int32_t> generate(std::span<const std::int32_t> prompt_ids,
                                   const ParameterSet& params, const ModelConfig& config,
                                   const SamplingParams& sampling,
                                   const Tensor* out_proj_t = nullptr);

// Reference path: same decoding loop, but the full prefix is recomputed
// from scratch for every emitted token instead of using a cache.
std::vector<std::int32_t> generate_recompute(std::span<const std::int32_t> prompt_ids,
                                             const ParameterSet& params,
                                             const ModelConfig& config,
                                             const SamplingParams& sampling,
                                             const Tensor* out_proj_t = nullptr);

// exp(token-weighted mean next-token cross entropy) over the samples; pad
// positions are excluded. Samples longer than the model context are split
// into consecutive context-length windows exactly like training batches.
double perplexity(const std::vector<std::vector<std::int32_t>>& samples,
                  const ParameterSet& params, const ModelConfig& config,
                  const Tensor* out_proj_t = nullptr);

// Mean masked cross entropy used by perplexity (perplexity == exp of this).
double corpus_loss(const std::vector<std::vector<std::int32_t>>& samples,
                   const ParameterSet& params, const ModelConfig& config,
                   const Tensor* out_proj_t = nullptr);

}  // namespace fox
