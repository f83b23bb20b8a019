#include "fox/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "fox/backward.hpp"
#include "fox/batching.hpp"
#include "fox/checkpoint.hpp"
#include "fox/model.hpp"

namespace fox {

namespace {

std::string step_stem(const std::string& dir, std::int64_t step) {
    std::ostringstream os;
    os << dir << "/step_" << std::setfill('0') << std::setw(6) << step;
    return os.str();
}

struct TrainPosition {
    std::int64_t step = 0;            // completed updates
    std::int64_t stage_index = 0;     // stage being consumed
    std::int64_t samples_consumed = 0;  // within the current stage
    std::int64_t tokens_consumed = 0;   // cumulative over the run
};

void save_train_state(const std::string& stem, const ParameterSet& params,
                      const ModelConfig& config, const ParameterSet& m, const ParameterSet& v,
                      const TrainPosition& pos, std::uint64_t init_seed) {
    save_checkpoint(stem, params, config);
    std::vector<blob::Entry> entries;
    const_cast<ParameterSet&>(m).visit([&](const std::string& name, Tensor& t) {
        entries.push_back({"m." + name, t.shape(), t.data(), t.size()});
    });
    const_cast<ParameterSet&>(v).visit([&](const std::string& name, Tensor& t) {
        entries.push_back({"v." + name, t.shape(), t.data(), t.size()});
    });
    nlohmann::json table = blob::write(stem + ".opt.bin", entries);
    const std::string base = stem.find_last_of('/') == std::string::npos
                                 ? stem
                                 : stem.substr(stem.find_last_of('/') + 1);
    nlohmann::json j = {{"format", "fox-train-state"},
                        {"version", 1},
                        {"step", pos.step},
                        {"stage_index", pos.stage_index},
                        {"samples_consumed", pos.samples_consumed},
                        {"tokens_consumed", pos.tokens_consumed},
                        {"init_seed", init_seed},
                        {"opt_blob", base + ".opt.bin"},
                        {"moments", std::move(table)}};
    std::ofstream os(stem + ".train.json", std::ios::trunc);
    if (!os) throw std::runtime_error("trainer: cannot write " + stem + ".train.json");
    os << j.dump(2) << "\n";
}

TrainPosition load_train_state(const std::string& stem, ParameterSet& m, ParameterSet& v) {
    std::ifstream is(stem + ".train.json");
    if (!is) throw std::runtime_error("trainer: cannot open " + stem + ".train.json");
    nlohmann::json j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "fox-train-state")
        throw std::runtime_error("trainer: unrecognized train-state format");
    TrainPosition pos;
    pos.step = j.at("step").get<std::int64_t>();
    pos.stage_index = j.at("stage_index").get<std::int64_t>();
    pos.samples_consumed = j.at("samples_consumed").get<std::int64_t>();
    pos.tokens_consumed = j.at("tokens_consumed").get<std::int64_t>();
    const std::string dir = stem.find_last_of('/') == std::string::npos
                                ? ""
                                : stem.substr(0, stem.find_last_of('/') + 1);
    const std::string blob_path = dir + j.at("opt_blob").get<std::string>();
    const auto& table = j.at("moments");
    m.visit([&](const std::string& name, Tensor& t) {
        blob::read_into(blob_path, table, "m." + name, t.data(), t.size());
    });
    v.visit([&](const std::string& name, Tensor& t) {
        blob::read_into(blob_path, table, "v." + name, t.data(), t.size());
    });
    return pos;
}

}  // namespace

TrainResult train(const CurriculumPlan& plan, const ModelConfig& config, const Vocab& vocab,
                  const TrainerOptions& opts, const std::string& resume_stem) {
    plan.validate();
    config.validate();
    opts.hyper.validate();
    opts.schedule.validate();
    if (vocab.size() > config.vocab_size)
        throw std::invalid_argument("trainer: vocabulary larger than model vocab_size");
    if (opts.checkpoint_dir.empty())
        throw std::invalid_argument("trainer: checkpoint_dir required");
    std::filesystem::create_directories(opts.checkpoint_dir);

    TrainResult result;
    ParameterSet params;
    ParameterSet m, v;
    TrainPosition pos;
    if (resume_stem.empty()) {
        params = init_parameters<float>(config, opts.init_seed, opts.init);
        m = zeros_like(params);
        v = zeros_like(params);
    } else {
        LoadedCheckpoint ck = load_checkpoint(resume_stem);
        params = std::move(ck.params);
        m = zeros_like(params);
        v = zeros_like(params);
        pos = load_train_state(resume_stem, m, v);
    }

    std::ofstream log_file;
    if (!opts.loss_log_path.empty()) {
        log_file.open(opts.loss_log_path, resume_stem.empty() ? std::ios::trunc : std::ios::app);
        if (!log_file) throw std::runtime_error("trainer: cannot open loss log");
    }
    auto emit = [&](const LossLogRecord& rec) {
        result.log.push_back(rec);
        if (log_file) {
            nlohmann::json j = {{"step", rec.step},
                                {"stage", rec.stage},
                                {"lr", rec.lr},
                                {"loss", rec.loss},
                                {"tokens_consumed", rec.tokens_consumed}};
            log_file << j.dump() << "\n";
            log_file.flush();
        }
        if (opts.on_step) opts.on_step(rec);
    };

    // Derived matrices for the hot paths; refreshed after every update.
    Tensor out_t = build_output_transpose(params, config);
    TransposedWeightsT<float> tw = make_transposed(params);

    // The dedup filter spans the whole run; reconstructing earlier stages'
    // streams on resume replays its state exactly.
    BloomFilter filter = BloomFilter::with_capacity(1 << 20, 0.001);
    for (std::int64_t s = 0; s < pos.stage_index; ++s)
        StageSampleStream(plan.stages[static_cast<std::size_t>(s)], vocab, filter, nullptr);

    ParameterSet grads = zeros_like(params);

    for (std::size_t stage_idx = static_cast<std::size_t>(pos.stage_index);
         stage_idx < plan.stages.size(); ++stage_idx) {
        const auto& stage = plan.stages[stage_idx];
        StageSampleStream stream(stage, vocab, filter, opts.warn);
        std::int64_t samples_in_stage = 0;
        if (static_cast<std::int64_t>(stage_idx) == pos.stage_index && pos.samples_consumed > 0) {
            stream.skip(pos.samples_consumed);
            samples_in_stage = pos.samples_consumed;
        }

        std::optional<TrainingSample> carry;
        for (;;) {
            // Assemble one batch of whole samples within the token budget.
            std::vector<TrainingSample> batch;
            std::int64_t batch_tok = 0;
            for (;;) {
                std::optional<TrainingSample> sample =
                    carry ? std::exchange(carry, std::nullopt) : stream.next();
                if (!sample) break;
                const auto len = static_cast<std::int64_t>(sample->tokens.size());
                if (batch_tok + len > stage.batch_tokens) {
                    carry = std::move(sample);
                    break;
                }
                batch_tok += len;
                batch.push_back(std::move(*sample));
                if (batch_tok == stage.batch_tokens) break;
            }
            if (batch.empty()) break;

            grads.visit([](const std::string&, Tensor& g) { g.fill(0.0f); });
            double loss_sum = 0.0;
            std::int64_t valid = 0;
            for (const auto& sample : batch) {
                for_each_training_window(
                    std::span<const std::int32_t>(sample.tokens), config.max_seq_len,
                    Vocab::kPadId, [&](const TrainingWindow& w) {
                        if (w.valid == 0) return;
                        ForwardTraceT<float> trace;
                        Tensor logits = forward<float>(w.tokens, params, config, nullptr, &out_t,
                                                       &trace);
                        Tensor dlogits({static_cast<std::int64_t>(w.tokens.size()),
                                        config.vocab_size});
                        loss_sum += loss_and_dlogits<float>(logits, w.targets, w.weights, dlogits);
                        valid += w.valid;
                        backward_from_trace(trace, dlogits, params, tw, config, grads);
                    });
            }
            if (valid == 0) continue;
            scale_gradients(grads, static_cast<float>(1.0 / static_cast<double>(valid)));
            if (opts.clip_norm > 0.0) {
                const double norm = gradient_norm(grads);
                if (norm > opts.clip_norm)
                    scale_gradients(grads, static_cast<float>(opts.clip_norm / norm));
            }
            const std::int64_t t = pos.step + 1;
            const double lr = wsd_lr(t, opts.schedule);
            adamw_step(params, grads, m, v, t, opts.hyper, lr);
            out_t = build_output_transpose(params, config);
            tw = make_transposed(params);

            pos.step = t;
            pos.tokens_consumed += batch_tok;
            samples_in_stage += static_cast<std::int64_t>(batch.size());
            pos.stage_index = static_cast<std::int64_t>(stage_idx);
            pos.samples_consumed = samples_in_stage;

            emit({t, static_cast<std::int64_t>(stage_idx), lr,
                  loss_sum / static_cast<double>(valid), pos.tokens_consumed});

            if (opts.checkpoint_interval > 0 && t % opts.checkpoint_interval == 0)
                save_train_state(step_stem(opts.checkpoint_dir, t), params, config, m, v, pos,
                                 opts.init_seed);
        }

        // Stage boundary checkpoint; the position already points at the next
        // stage's first sample.
        pos.stage_index = static_cast<std::int64_t>(stage_idx) + 1;
        pos.samples_consumed = 0;
        const std::string stem =
            opts.checkpoint_dir + "/stage" + std::to_string(stage_idx + 1) + "_end";
        save_train_state(stem, params, config, m, v, pos, opts.init_seed);
        result.stage_checkpoints.push_back(stem);
    }

    result.final_stem = opts.checkpoint_dir + "/final";
    save_train_state(result.final_stem, params, config, m, v, pos, opts.init_seed);
    result.params = std::move(params);
    return result;
}

}  // namespace fox
