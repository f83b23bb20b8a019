#include "fox/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fox/batching.hpp"
#include "fox/errors.hpp"
#include "fox/kv_cache.hpp"
#include "fox/model.hpp"
#include "fox/rng.hpp"
#include "fox/tokenizer.hpp"

namespace fox {

void SamplingParams::validate() const {
    if (mode == Mode::Temperature && temperature <= 0.0)
        throw std::invalid_argument("sampling: temperature must be positive");
    if (top_k < 0) throw std::invalid_argument("sampling: top_k must be >= 1 when set");
    if (max_new_tokens < 1) throw std::invalid_argument("sampling: max_new_tokens must be >= 1");
}

namespace {

std::int32_t argmax_id(const float* row, std::int64_t n) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return static_cast<std::int32_t>(best);
}

std::int32_t sample_id(const float* row, std::int64_t n, const SamplingParams& sp,
                       RandomSource& rng) {
    if (sp.mode == SamplingParams::Mode::Greedy) return argmax_id(row, n);
    // Candidate set: all ids, or the top_k highest logits (ties -> lower id).
    std::vector<std::int32_t> cand;
    if (sp.top_k > 0 && sp.top_k < n) {
        cand.resize(static_cast<std::size_t>(n));
        std::iota(cand.begin(), cand.end(), 0);
        std::partial_sort(cand.begin(), cand.begin() + sp.top_k, cand.end(),
                          [&](std::int32_t a, std::int32_t b) {
                              if (row[a] != row[b]) return row[a] > row[b];
                              return a < b;
                          });
        cand.resize(static_cast<std::size_t>(sp.top_k));
    } else {
        cand.resize(static_cast<std::size_t>(n));
        std::iota(cand.begin(), cand.end(), 0);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int32_t id : cand)
        mx = std::max(mx, static_cast<double>(row[id]) / sp.temperature);
    std::vector<double> p(cand.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        p[i] = std::exp(static_cast<double>(row[cand[i]]) / sp.temperature - mx);
        sum += p[i];
    }
    const double u = rng.next_uniform() * sum;
    double acc = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        acc += p[i];
        if (u < acc) return cand[i];
    }
    return cand.back();
}

template <class NextLogits>
std::vector<std::int32_t> decode_loop(std::span<const std::int32_t> prompt_ids,
                                      const ModelConfig& config, const SamplingParams& sp,
                                      NextLogits&& next_logits) {
    sp.validate();
    if (prompt_ids.empty()) throw std::invalid_argument("generate: empty prompt");
    if (static_cast<std::int64_t>(prompt_ids.size()) + sp.max_new_tokens > config.max_seq_len)
        throw CapacityError("generate: prompt plus max_new_tokens exceeds max_seq_len");
    RandomSource rng(sp.seed);
    std::vector<std::int32_t> out;
    out.reserve(static_cast<std::size_t>(sp.max_new_tokens));
    for (std::int64_t i = 0; i < sp.max_new_tokens; ++i) {
        const Tensor logits = next_logits(out);
        const float* row = logits.data() + (logits.dim(0) - 1) * config.vocab_size;
        const std::int32_t id = sample_id(row, config.vocab_size, sp, rng);
        out.push_back(id);
        if (std::find(sp.stop_ids.begin(), sp.stop_ids.end(), id) != sp.stop_ids.end()) break;
    }
    return out;
}

}  // namespace

std::vector<std::int32_t> generate(std::span<const std::int32_t> prompt_ids,
                                   const ParameterSet& params, const ModelConfig& config,
                                   const SamplingParams& sampling, const Tensor* out_proj_t) {
    sampling.validate();
    if (prompt_ids.empty()) throw std::invalid_argument("generate: empty prompt");
    const std::int64_t need =
        static_cast<std::int64_t>(prompt_ids.size()) + sampling.max_new_tokens;
    if (need > config.max_seq_len)
        throw CapacityError("generate: prompt plus max_new_tokens exceeds max_seq_len");
    KVCache cache(config, need);
    bool prefilled = false;
    return decode_loop(prompt_ids, config, sampling, [&](const std::vector<std::int32_t>& out) {
        if (!prefilled) {
            prefilled = true;
            return forward<float>(prompt_ids, params, config, &cache, out_proj_t);
        }
        const std::int32_t last = out.back();
        return forward<float>(std::span<const std::int32_t>(&last, 1), params, config, &cache,
                              out_proj_t);
    });
}

std::vector<std::int32_t> generate_recompute(std::span<const std::int32_t> prompt_ids,
                                             const ParameterSet& params,
                                             const ModelConfig& config,
                                             const SamplingParams& sampling,
                                             const Tensor* out_proj_t) {
    return decode_loop(prompt_ids, config, sampling, [&](const std::vector<std::int32_t>& out) {
        std::vector<std::int32_t> prefix(prompt_ids.begin(), prompt_ids.end());
        prefix.insert(prefix.end(), out.begin(), out.end());
        return forward<float>(prefix, params, config, nullptr, out_proj_t);
    });
}

double corpus_loss(const std::vector<std::vector<std::int32_t>>& samples,
                   const ParameterSet& params, const ModelConfig& config,
                   const Tensor* out_proj_t) {
    Tensor local_t;
    if (!out_proj_t) {
        local_t = build_output_transpose(params, config);
        out_proj_t = &local_t;
    }
    double loss_sum = 0.0;
    std::int64_t valid = 0;
    for (const auto& sample : samples) {
        if (sample.size() < 2)
            throw std::invalid_argument("perplexity: every sample needs length >= 2");
        for_each_training_window(
            std::span<const std::int32_t>(sample), config.max_seq_len, Vocab::kPadId,
            [&](const TrainingWindow& w) {
                if (w.valid == 0) return;
                const Tensor logits = forward<float>(w.tokens, params, config, nullptr, out_proj_t);
                for (std::int64_t s = 0; s < logits.dim(0); ++s) {
                    if (w.weights[static_cast<std::size_t>(s)] == 0.0f) continue;
                    const float* row = logits.data() + s * config.vocab_size;
                    float mx = row[0];
                    for (std::int64_t i = 1; i < config.vocab_size; ++i)
                        if (row[i] > mx) mx = row[i];
                    double lse = 0.0;
                    for (std::int64_t i = 0; i < config.vocab_size; ++i)
                        lse += std::exp(static_cast<double>(row[i] - mx));
                    loss_sum += std::log(lse) + static_cast<double>(mx) -
                                static_cast<double>(row[w.targets[static_cast<std::size_t>(s)]]);
                    ++valid;
                }
            });
    }
    if (valid == 0) throw std::invalid_argument("perplexity: no scorable positions");
    return loss_sum / static_cast<double>(valid);
}

double perplexity(const std::vector<std::vector<std::int32_t>>& samples,
                  const ParameterSet& params, const ModelConfig& config,
                  const Tensor* out_proj_t) {
    return std::exp(corpus_loss(samples, params, config, out_proj_t));
}

}  // namespace fox
