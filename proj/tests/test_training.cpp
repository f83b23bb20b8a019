#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fox/backward.hpp"
#include "fox/corpus_gen.hpp"
#include "fox/data.hpp"
#include "fox/model.hpp"
#include "fox/optimizer.hpp"
#include "fox/parallel.hpp"
#include "fox/schedule.hpp"
#include "fox/trainer.hpp"

using namespace fox;

namespace {

double loss_of(const std::vector<std::int32_t>& tokens, const std::vector<std::int32_t>& targets,
               const ParameterSetT<double>& params, const ModelConfig& config) {
    auto logits = forward<double>(tokens, params, config);
    return cross_entropy_loss(logits, std::span<const std::int32_t>(targets));
}

// Central finite differences against the analytic gradients, elementwise.
void check_gradients(const ModelConfig& config, std::uint64_t seed) {
    auto params = init_parameters<double>(config, seed);
    RandomSource rng(seed * 13 + 1);
    std::vector<std::int32_t> tokens, targets;
    for (int i = 0; i < 8; ++i) {
        tokens.push_back(static_cast<std::int32_t>(rng.next_below(
            static_cast<std::uint64_t>(config.vocab_size))));
        targets.push_back(static_cast<std::int32_t>(rng.next_below(
            static_cast<std::uint64_t>(config.vocab_size))));
    }
    auto grads = backward<double>(tokens, targets, params, config);

    // Relative step: 1e-3 of the parameter magnitude. An absolute 1e-3 step
    // would be a ~5-10% kick to weights initialized at std 0.02, and the
    // O(h^2) truncation term of the central difference would then swamp the
    // tolerance being certified.
    const double hrel = 1e-3;
    double worst = 0.0;
    std::vector<TensorT<double>*> ptensors, gtensors;
    params.visit([&](const std::string&, TensorT<double>& t) { ptensors.push_back(&t); });
    grads.visit([&](const std::string&, TensorT<double>& t) { gtensors.push_back(&t); });
    REQUIRE(ptensors.size() == gtensors.size());
    for (std::size_t k = 0; k < ptensors.size(); ++k) {
        TensorT<double>& p = *ptensors[k];
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            const double h = hrel * std::max(std::abs(orig), 1e-2);
            p[i] = orig + h;
            const double lp = loss_of(tokens, targets, params, config);
            p[i] = orig - h;
            const double lm = loss_of(tokens, targets, params, config);
            p[i] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = (*gtensors[k])[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    CHECK(worst < 1e-4);
}

std::string write_tiny_corpus(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    RandomSource rng(555);
    auto write_jsonl = [&](const std::string& name, int docs, int words) {
        std::ofstream os(dir / name, std::ios::trunc);
        static const char* bank[] = {"ka", "romu", "tel", "sina", "bor", "ledo", "mif", "tuva"};
        for (int d = 0; d < docs; ++d) {
            std::string text;
            for (int w = 0; w < words; ++w) {
                if (w) text += ' ';
                text += bank[rng.next_below(8)];
            }
            nlohmann::json j = {{"text", text}, {"source", name}};
            os << j.dump() << "\n";
        }
    };
    write_jsonl("a.jsonl", 60, 90);
    write_jsonl("b.jsonl", 40, 70);
    write_jsonl("c.jsonl", 40, 80);  // stage 2 must not collide with the shared dedup filter
    nlohmann::json manifest = {
        {"stages",
         {{{"name", "stage1"},
           {"token_budget", 4096},
           {"batch_tokens", 256},
           {"chunk_policy", {{"type", "fixed"}, {"length", 128}}},
           {"shuffle_seed", 7},
           {"sources",
            {{{"name", "A"}, {"path", "a.jsonl"}, {"weight_percent", 70.0}},
             {{"name", "B"}, {"path", "b.jsonl"}, {"weight_percent", 30.0}}}}},
          {{"name", "stage2"},
           {"token_budget", 2048},
           {"batch_tokens", 256},
           {"chunk_policy", {{"type", "fixed"}, {"length", 128}}},
           {"shuffle_seed", 8},
           {"sources", {{{"name", "C"}, {"path", "c.jsonl"}, {"weight_percent", 100.0}}}}}}}};
    const std::string mpath = (dir / "manifest.json").string();
    std::ofstream os(mpath, std::ios::trunc);
    os << manifest.dump(2) << "\n";
    return mpath;
}

ModelConfig micro_config() {
    ModelConfig c;
    c.vocab_size = 512;
    c.hidden_dim = 32;
    c.n_layers = 2;
    c.n_heads = 4;
    c.n_kv_heads = 2;
    c.head_dim = 8;
    c.ffn_hidden_dim = 64;
    c.max_seq_len = 64;
    c.validate();
    return c;
}

}  // namespace

TEST_CASE("wsd schedule values and continuity") {
    WsdSchedule s;  // warmup 2000, decay 16000, peak 4e-4, floor 4e-5
    s.stable_steps = 1000;
    s.validate();
    CHECK(wsd_lr(0, s) == 0.0);
    CHECK(wsd_lr(2000, s) == 4e-4);
    CHECK(wsd_lr(2500, s) == 4e-4);
    // Continuity at warmup->stable: one step before the boundary is within
    // one ramp increment of the plateau.
    CHECK(wsd_lr(1999, s) == doctest::Approx(4e-4).epsilon(1e-3));
    CHECK(wsd_lr(3000, s) == 4e-4);  // decay start boundary
    // Log-linear decay midpoint: peak * (floor/peak)^(1/2).
    CHECK(wsd_lr(3000 + 8000, s) ==
          doctest::Approx(4e-4 * std::sqrt(4e-5 / 4e-4)).epsilon(1e-12));
    CHECK(wsd_lr(3000 + 16000, s) == doctest::Approx(4e-5).epsilon(1e-12));
    CHECK(wsd_lr(3000 + 16001, s) == 4e-5);
    CHECK(wsd_lr(1000000, s) == 4e-5);

    // Linear fallback when the floor is zero.
    WsdSchedule z = s;
    z.floor_lr = 0.0;
    CHECK(wsd_lr(3000 + 8000, z) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(wsd_lr(3000 + 16000, z) == 0.0);

    // Degenerate warmup: lr starts at peak.
    WsdSchedule w0 = s;
    w0.warmup_steps = 0;
    CHECK(wsd_lr(0, w0) == 4e-4);
}

TEST_CASE("adamw examples") {
    const ModelConfig c = preset_config("gradcheck");
    OptimizerHyper hyper;  // defaults: lr 4e-4, wd 0.1, betas 0.9/0.95
    auto params = init_parameters<float>(c, 2);
    auto m = zeros_like(params), v = zeros_like(params);
    auto grads = zeros_like(params);

    // Zero gradient: pure decoupled decay, p *= (1 - lr*wd) on matrices.
    const float p0 = params.embedding[0];
    const float n0 = params.final_norm_weight[0];
    adamw_step(params, grads, m, v, 1, hyper, 4e-4);
    CHECK(params.embedding[0] == doctest::Approx(p0 * (1.0f - 4e-4f * 0.1f)).epsilon(1e-7));
    CHECK(params.final_norm_weight[0] == n0);  // 1-D tensors take no decay

    // First step with nonzero gradient and no decay: -lr * sign(g).
    OptimizerHyper nodecay = hyper;
    nodecay.weight_decay = 0.0;
    auto params2 = init_parameters<float>(c, 2);
    auto m2 = zeros_like(params2), v2 = zeros_like(params2);
    auto g2 = zeros_like(params2);
    g2.embedding[5] = 0.37f;
    const float before = params2.embedding[5];
    adamw_step(params2, g2, m2, v2, 1, nodecay, 4e-4);
    CHECK(params2.embedding[5] ==
          doctest::Approx(before - 4e-4f).epsilon(1e-4));  // g/(|g|+eps) ~ sign(g)

    // lr = 0 leaves parameters unchanged.
    auto params3 = init_parameters<float>(c, 4);
    auto snapshot = params3;
    auto m3 = zeros_like(params3), v3 = zeros_like(params3);
    auto g3 = zeros_like(params3);
    g3.embedding[1] = -2.5f;
    adamw_step(params3, g3, m3, v3, 1, hyper, 0.0);
    CHECK(params3.embedding[1] == snapshot.embedding[1]);

    // Determinism: identical gradient sequences give bit-identical params.
    auto pa = init_parameters<float>(c, 6), pb = init_parameters<float>(c, 6);
    auto ma = zeros_like(pa), va = zeros_like(pa), mb = zeros_like(pb), vb = zeros_like(pb);
    for (std::int64_t t = 1; t <= 5; ++t) {
        auto g = zeros_like(pa);
        RandomSource rng(static_cast<std::uint64_t>(t));
        g.visit([&](const std::string&, Tensor& x) {
            for (std::int64_t i = 0; i < x.size(); ++i)
                x[i] = static_cast<float>(rng.next_normal() * 0.01);
        });
        adamw_step(pa, g, ma, va, t, hyper, 3e-4);
        adamw_step(pb, g, mb, vb, t, hyper, 3e-4);
    }
    CHECK(pa.embedding[10] == pb.embedding[10]);
    CHECK(pa.layers[0].wq[3] == pb.layers[0].wq[3]);

    // Non-finite gradients halt with a diagnostic.
    auto g_bad = zeros_like(pa);
    g_bad.layers[1].w_up[2] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(adamw_step(pa, g_bad, ma, va, 6, hyper, 3e-4), GradientError);
}

TEST_CASE("gradients match central finite differences (3 seeds)") {
    const ModelConfig c = preset_config("gradcheck");
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) check_gradients(c, seed);
}

TEST_CASE("untied twin splits the tied embedding gradient") {
    ModelConfig tied = preset_config("gradcheck");
    ModelConfig untied = tied;
    untied.tie_embeddings = false;
    auto p_tied = init_parameters<double>(tied, 21);
    auto p_untied = init_parameters<double>(untied, 21);
    // Same function: the twin's output head is a copy of the embedding.
    p_untied.embedding = p_tied.embedding;
    for (std::size_t l = 0; l < p_tied.layers.size(); ++l) {
        // init draws diverge after the shared prefix; copy to be exact
    }
    p_untied.layers = p_tied.layers;
    p_untied.final_norm_weight = p_tied.final_norm_weight;
    p_untied.output_proj = p_tied.embedding;

    std::vector<std::int32_t> tokens = {1, 4, 1, 9, 2, 2, 30, 12};
    std::vector<std::int32_t> targets = {4, 1, 9, 2, 2, 30, 12, 5};
    auto g_tied = backward<double>(tokens, targets, p_tied, tied);
    auto g_untied = backward<double>(tokens, targets, p_untied, untied);
    for (std::int64_t i = 0; i < g_tied.embedding.size(); ++i) {
        const double sum = g_untied.embedding[i] + g_untied.output_proj[i];
        CHECK(std::abs(g_tied.embedding[i] - sum) < 1e-5);
    }

    // A vocabulary row never used as input gets zero input-side gradient.
    bool used[32] = {};
    for (auto t : tokens) used[t] = true;
    for (std::int64_t v = 0; v < untied.vocab_size; ++v) {
        if (used[v]) continue;
        for (std::int64_t j = 0; j < untied.hidden_dim; ++j)
            CHECK(g_untied.embedding.at2(v, j) == 0.0);
    }
}

TEST_CASE("train descends, logs deterministically, and respects budgets") {
    const auto dir = std::filesystem::temp_directory_path() / "fox_train_test";
    std::filesystem::remove_all(dir);
    const std::string manifest = write_tiny_corpus(dir);
    CurriculumPlan plan = load_manifest(manifest);
    const ModelConfig config = micro_config();
    Vocab vocab;  // raw byte-level vocabulary

    TrainerOptions opts;
    opts.schedule = {2, 1000000, 0, 3e-3, 3e-4};
    opts.checkpoint_interval = 5;
    opts.checkpoint_dir = (dir / "run1").string();
    opts.init_seed = 3;
    auto r1 = train(plan, config, vocab, opts);
    REQUIRE(r1.log.size() >= 20);

    // Stage indices are non-decreasing and token accounting is monotone.
    for (std::size_t i = 1; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].stage >= r1.log[i - 1].stage);
        CHECK(r1.log[i].tokens_consumed > r1.log[i - 1].tokens_consumed);
        CHECK(r1.log[i].step == r1.log[i - 1].step + 1);
    }
    CHECK(r1.log.back().stage == 1);
    CHECK(std::filesystem::exists(dir / "run1" / "stage1_end.json"));
    CHECK(std::filesystem::exists(dir / "run1" / "stage2_end.json"));

    // Budget arithmetic: stage batches stay within (batch - chunk, batch].
    std::int64_t prev_tokens = 0;
    for (const auto& rec : r1.log) {
        const std::int64_t batch = rec.tokens_consumed - prev_tokens;
        prev_tokens = rec.tokens_consumed;
        CHECK(batch <= 256);
        CHECK(batch > 256 - 128);
    }

    // Same seeds, same log.
    TrainerOptions opts2 = opts;
    opts2.checkpoint_dir = (dir / "run2").string();
    auto r2 = train(plan, config, vocab, opts2);
    REQUIRE(r2.log.size() == r1.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].loss == r2.log[i].loss);
        CHECK(r1.log[i].lr == r2.log[i].lr);
    }

    // Loss moves down over the run on this highly regular corpus.
    const std::size_t n = r1.log.size();
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 5; ++i) first += r1.log[i].loss;
    for (std::size_t i = n - 5; i < n; ++i) last += r1.log[i].loss;
    CHECK(last < first);

    // Resume from a mid-run step checkpoint and match the original log.
    TrainerOptions opts3 = opts;
    opts3.checkpoint_dir = (dir / "run3").string();
    std::filesystem::create_directories(opts3.checkpoint_dir);
    auto r3 = train(plan, config, vocab, opts3, (dir / "run1" / "step_000005").string());
    REQUIRE(r3.log.size() == r1.log.size() - 5);
    for (std::size_t i = 0; i < r3.log.size(); ++i) {
        CHECK(r3.log[i].step == r1.log[i + 5].step);
        CHECK(r3.log[i].loss == r1.log[i + 5].loss);
        CHECK(r3.log[i].lr == r1.log[i + 5].lr);
        CHECK(r3.log[i].tokens_consumed == r1.log[i + 5].tokens_consumed);
    }
}

TEST_CASE("train results are independent of the worker thread count") {
    const auto dir = std::filesystem::temp_directory_path() / "fox_train_threads";
    std::filesystem::remove_all(dir);
    const std::string manifest = write_tiny_corpus(dir);
    CurriculumPlan plan = load_manifest(manifest);
    plan.stages.resize(1);
    plan.stages[0].token_budget = 1024;
    const ModelConfig config = micro_config();
    Vocab vocab;

    TrainerOptions opts;
    opts.schedule = {1, 1000000, 0, 1e-3, 1e-4};
    opts.checkpoint_interval = 0;
    opts.init_seed = 5;

    set_num_threads(1);
    opts.checkpoint_dir = (dir / "t1").string();
    auto r1 = train(plan, config, vocab, opts);
    set_num_threads(3);
    opts.checkpoint_dir = (dir / "t3").string();
    auto r3 = train(plan, config, vocab, opts);
    set_num_threads(1);
    REQUIRE(r1.log.size() == r3.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r3.log[i].loss);
}

TEST_CASE("corpus exhaustion wraps with a warning") {
    const auto dir = std::filesystem::temp_directory_path() / "fox_train_wrap";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "small.jsonl", std::ios::trunc);
        for (int d = 0; d < 3; ++d) {
            nlohmann::json j = {{"text", "ka romu tel sina bor ledo doc" + std::to_string(d)},
                                {"source", "S"}};
            os << j.dump() << "\n";
        }
    }
    CurriculumStage stage;
    stage.name = "s";
    stage.token_budget = 2048;  // far more than 3 tiny docs provide
    stage.batch_tokens = 128;
    stage.chunk_policy = {ChunkPolicy::Kind::Fixed, 64, 3072};
    stage.shuffle_seed = 1;
    stage.sources = {{"S", (dir / "small.jsonl").string(), 100.0}};
    Vocab vocab;
    BloomFilter filter = BloomFilter::with_capacity(1000, 0.01);
    int warnings = 0;
    StageSampleStream stream(stage, vocab, filter, [&](const std::string&) { ++warnings; });
    std::int64_t samples = 0;
    while (stream.next()) ++samples;
    CHECK(samples == 2048 / 64);
    CHECK(warnings > 0);
    CHECK(stream.stats().tokens_consumed >= 2048);
}
