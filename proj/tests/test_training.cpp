#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "peftlad/checkpoint.hpp"
#include "peftlad/optimizer.hpp"
#include "peftlad/run_config.hpp"
#include "peftlad/tensor.hpp"
#include "peftlad/trainer.hpp"

using namespace peftlad;

namespace {

LogSequence make_sequence(std::vector<std::string> templates, int label, std::size_t order) {
    LogSequence seq;
    seq.label = label;
    seq.order_key = order;
    for (std::size_t i = 0; i < templates.size(); ++i) {
        LogEvent event;
        event.template_text = std::move(templates[i]);
        event.line_index = order * 10 + i;
        event.label = label;
        seq.events.push_back(std::move(event));
    }
    return seq;
}

std::vector<LogSequence> toy_corpus(std::size_t n) {
    std::vector<LogSequence> sequences;
    for (std::size_t i = 0; i < n; ++i) {
        if (i % 3 == 2) {
            sequences.push_back(make_sequence({"service started", "fault detected <*>", "retry scheduled"},
                                              1, i));
        } else if (i % 2 == 0) {
            sequences.push_back(make_sequence({"service started", "request handled ok"}, 0, i));
        } else {
            sequences.push_back(make_sequence({"heartbeat ping", "request handled ok"}, 0, i));
        }
    }
    return sequences;
}

ModelConfig toy_model() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.ffn = 16;
    cfg.max_len = 16;
    cfg.seed = 7;
    return cfg;
}

TrainConfig toy_train(int epochs) {
    TrainConfig cfg;
    cfg.learning_rate = 5e-3;
    cfg.batch_size = 8;
    cfg.epochs = epochs;
    cfg.seed = 7;
    return cfg;
}

PeftChoice reft_choice(int rank = 2) {
    PeftChoice choice;
    choice.kind = PeftKind::reft;
    choice.reft.rank = rank;
    return choice;
}

PeftChoice lora_choice(int rank = 2) {
    PeftChoice choice;
    choice.kind = PeftKind::lora;
    choice.lora.rank = rank;
    choice.lora.alpha = 2.0 * rank;
    return choice;
}

} // namespace

TEST_CASE("one optimizer step matches the hand-computed update") {
    // theta=1, g=1, lr=0.1, wd=0.01: m_hat = v_hat = 1 after bias correction,
    // so theta <- 1 - 0.1/(1+1e-8) - 0.1*0.01*1 = 0.899000001
    Tensor<double> theta = Tensor<double>::scalar(1.0, true);
    AdamW<double> optimizer({0.1, 0.9, 0.999, 1e-8, 0.01});
    optimizer.add_parameter("theta", theta);
    sum(theta).backward(); // gradient of 1
    optimizer.step();
    CHECK(theta.values()[0] == doctest::Approx(0.899000001).epsilon(1e-9));
    CHECK(optimizer.steps_taken() == 1);
    CHECK(!theta.has_grad()); // cleared by the step
}

TEST_CASE("zero gradient with zero decay is a fixed point") {
    Tensor<double> theta = Tensor<double>::scalar(1.0, true);
    AdamW<double> optimizer({0.1, 0.9, 0.999, 1e-8, 0.0});
    optimizer.add_parameter("theta", theta);
    scale(sum(theta), 0.0).backward();
    optimizer.step();
    CHECK(theta.values()[0] == 1.0);
}

TEST_CASE("parameters without gradients are left alone") {
    Tensor<double> touched = Tensor<double>::scalar(1.0, true);
    Tensor<double> untouched = Tensor<double>::scalar(4.0, true);
    AdamW<double> optimizer({0.1, 0.9, 0.999, 1e-8, 0.01});
    optimizer.add_parameter("touched", touched);
    optimizer.add_parameter("untouched", untouched);
    sum(touched).backward();
    optimizer.step();
    CHECK(touched.values()[0] != 1.0);
    CHECK(untouched.values()[0] == 4.0);
}

TEST_CASE("a non-finite gradient aborts the step naming the parameter") {
    Tensor<double> theta = Tensor<double>::scalar(0.0, true);
    AdamW<double> optimizer({0.1, 0.9, 0.999, 1e-8, 0.01});
    optimizer.add_parameter("edge_param", theta);
    sum(sqrt_elem(theta)).backward(); // d sqrt / dx at 0 is infinite
    try {
        optimizer.step();
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("edge_param") != std::string::npos);
    }
}

TEST_CASE("optimizer configuration is validated") {
    CHECK_THROWS_AS(AdamW<double>({0.0, 0.9, 0.999, 1e-8, 0.01}), ConfigError);
    CHECK_THROWS_AS(AdamW<double>({0.1, 1.0, 0.999, 1e-8, 0.01}), ConfigError);
    CHECK_THROWS_AS(AdamW<double>({0.1, 0.9, 0.999, 0.0, 0.01}), ConfigError);
    CHECK_THROWS_AS(AdamW<double>({0.1, 0.9, 0.999, 1e-8, -0.5}), ConfigError);
}

TEST_CASE("the batch loss is the mean of per-example losses") {
    Rng rng(3);
    std::vector<Tensor<double>> rows;
    std::vector<int> labels = {1, 0, 1, 0};
    for (int i = 0; i < 4; ++i) rows.push_back(random_normal<double>({2}, 1.0, rng));
    Tensor<double> batch_loss = cross_entropy_mean(rows_stack(rows), labels);
    double per_example = 0.0;
    for (int i = 0; i < 4; ++i) {
        per_example += cross_entropy_mean(rows_stack<double>({rows[static_cast<std::size_t>(i)]}),
                                          {labels[static_cast<std::size_t>(i)]})
                           .item();
    }
    CHECK(batch_loss.item() == doctest::Approx(per_example / 4.0).epsilon(1e-6));
}

TEST_CASE("training freezes the base bitwise while adapters and head move") {
    auto corpus = toy_corpus(30);
    TrainOutcome outcome = run_training(toy_model(), reft_choice(), toy_train(2), corpus);

    auto fresh_params = init_parameters<float>(outcome.model.model_cfg);
    CHECK(outcome.model.params.token_embedding.values() == fresh_params.token_embedding.values());
    CHECK(outcome.model.params.pos_embedding.values() == fresh_params.pos_embedding.values());
    for (std::size_t b = 0; b < 2; ++b) {
        CHECK(outcome.model.params.blocks[b].query.weight.values() ==
              fresh_params.blocks[b].query.weight.values());
        CHECK(outcome.model.params.blocks[b].ffn_in.weight.values() ==
              fresh_params.blocks[b].ffn_in.weight.values());
        CHECK(outcome.model.params.blocks[b].norm_attn.gamma.values() ==
              fresh_params.blocks[b].norm_attn.gamma.values());
    }

    auto fresh_head = init_head<float>(outcome.model.model_cfg);
    CHECK(outcome.model.head.weight.values() != fresh_head.weight.values());
    auto fresh_peft = init_peft<float>(outcome.model.model_cfg, outcome.model.peft_choice);
    CHECK(outcome.model.peft.reft.at(0).W.values() != fresh_peft.reft.at(0).W.values());

    // the parameter checksum at init is reproducible
    TrainedModel fresh;
    fresh.model_cfg = outcome.model.model_cfg;
    fresh.params = fresh_params;
    fresh.peft = fresh_peft;
    fresh.head = fresh_head;
    CHECK(parameter_checksum(fresh) == outcome.initial_param_checksum);
}

TEST_CASE("training writes one record per epoch with sane timings and falling loss") {
    auto corpus = toy_corpus(30);
    TrainOutcome outcome = run_training(toy_model(), reft_choice(), toy_train(3), corpus);
    REQUIRE(outcome.epochs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(outcome.epochs[i].epoch == static_cast<int>(i) + 1);
        CHECK(std::isfinite(outcome.epochs[i].mean_loss));
        CHECK(outcome.epochs[i].compute_seconds >= 0.0);
        CHECK(outcome.epochs[i].compute_seconds <= outcome.epochs[i].wall_seconds + 1e-6);
    }
    CHECK(outcome.epochs.back().mean_loss < outcome.epochs.front().mean_loss);
}

TEST_CASE("training is deterministic for a fixed seed and differs across seeds") {
    auto corpus = toy_corpus(24);
    TrainOutcome a = run_training(toy_model(), lora_choice(), toy_train(2), corpus);
    TrainOutcome b = run_training(toy_model(), lora_choice(), toy_train(2), corpus);
    CHECK(parameter_checksum(a.model) == parameter_checksum(b.model));
    CHECK(a.epochs[0].mean_loss == b.epochs[0].mean_loss);
    CHECK(a.initial_param_checksum == b.initial_param_checksum);

    TrainConfig other = toy_train(2);
    other.seed = 8;
    ModelConfig other_model = toy_model();
    other_model.seed = 8;
    TrainOutcome c = run_training(other_model, lora_choice(), other, corpus);
    CHECK(parameter_checksum(a.model) != parameter_checksum(c.model));
}

TEST_CASE("intervention projections stay orthonormal through training") {
    auto corpus = toy_corpus(30);
    TrainOutcome outcome = run_training(toy_model(), reft_choice(3), toy_train(3), corpus);
    for (const auto& [layer, iv] : outcome.model.peft.reft) {
        CHECK(orthonormality_defect(iv.R) < 1e-5);
    }
}

TEST_CASE("step hooks fire once per optimizer step") {
    auto corpus = toy_corpus(30); // 30 sequences, batch 8 -> 4 steps per epoch
    int calls = 0;
    TrainHooks hooks;
    hooks.after_step = [&calls](int step, TrainedModel&) {
        ++calls;
        CHECK(step == calls);
    };
    run_training(toy_model(), reft_choice(), toy_train(2), corpus, &hooks);
    CHECK(calls == 8);
}

TEST_CASE("training rejects bad labels, empty splits and bad configs") {
    auto corpus = toy_corpus(10);
    corpus[3].label = 2;
    CHECK_THROWS_AS(run_training(toy_model(), reft_choice(), toy_train(1), corpus), InputError);
    CHECK_THROWS_AS(run_training(toy_model(), reft_choice(), toy_train(1), {}), ConfigError);

    TrainConfig bad = toy_train(1);
    bad.epochs = 0;
    CHECK_THROWS_AS(run_training(toy_model(), reft_choice(), bad, toy_corpus(10)), ConfigError);
    bad = toy_train(1);
    bad.learning_rate = -1.0;
    CHECK_THROWS_AS(run_training(toy_model(), reft_choice(), bad, toy_corpus(10)), ConfigError);
    bad = toy_train(1);
    bad.batch_size = 0;
    CHECK_THROWS_AS(run_training(toy_model(), reft_choice(), bad, toy_corpus(10)), ConfigError);
}

TEST_CASE("a single-class training split is flagged, not fatal") {
    std::vector<LogSequence> all_normal;
    for (std::size_t i = 0; i < 8; ++i) {
        all_normal.push_back(make_sequence({"service started"}, 0, i));
    }
    TrainOutcome outcome = run_training(toy_model(), reft_choice(), toy_train(1), all_normal);
    REQUIRE(!outcome.warnings.empty());
    CHECK(outcome.warnings.front().find("single class") != std::string::npos);
}

TEST_CASE("evaluation counts every sequence exactly once and flags constant output") {
    auto corpus = toy_corpus(30);
    TrainOutcome outcome = run_training(toy_model(), reft_choice(), toy_train(3), corpus);
    auto test = toy_corpus(12);
    EvalResult result = evaluate_model(outcome.model, test);
    CHECK(result.counts.tp + result.counts.fp + result.counts.fn + result.counts.tn == 12);
    CHECK(result.predictions.size() == 12);
    CHECK(result.scores.size() == 12);
    Metrics recomputed = metrics_from_counts(result.counts);
    CHECK(result.metrics.f1 == recomputed.f1);
    bool all_same = true;
    for (int p : result.predictions) all_same = all_same && p == result.predictions.front();
    CHECK(result.degenerate == all_same);
    for (double s : result.scores) {
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("prediction is deterministic and tolerates fully out-of-vocabulary text") {
    auto corpus = toy_corpus(18);
    TrainOutcome outcome = run_training(toy_model(), lora_choice(), toy_train(1), corpus);
    LogSequence unseen = make_sequence({"completely novel words everywhere"}, 0, 0);
    auto [label1, score1] = predict_sequence(outcome.model, unseen);
    auto [label2, score2] = predict_sequence(outcome.model, unseen);
    CHECK(label1 == label2);
    CHECK(score1 == score2);
    CHECK(score1 >= 0.0);
    CHECK(score1 <= 1.0);
}

TEST_CASE("checkpoints round-trip bitwise") {
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / "peftlad_ckpt_test";
    std::filesystem::remove_all(dir);

    auto corpus = toy_corpus(24);
    TrainOutcome outcome = run_training(toy_model(), reft_choice(), toy_train(2), corpus);
    RunConfig run_cfg;
    save_checkpoint(dir, outcome.model, run_config_to_json(run_cfg), "0123456789abcdef");

    LoadedCheckpoint loaded = load_checkpoint(dir);
    CHECK(loaded.fingerprint == "0123456789abcdef");
    CHECK(parameter_checksum(loaded.model) == parameter_checksum(outcome.model));
    CHECK(loaded.model.vocab.size() == outcome.model.vocab.size());

    auto probes = toy_corpus(9);
    EvalResult before = evaluate_model(outcome.model, probes);
    EvalResult after = evaluate_model(loaded.model, probes);
    CHECK(before.scores == after.scores);
    CHECK(before.predictions == after.predictions);

    std::filesystem::remove_all(dir);
}

TEST_CASE("missing checkpoint pieces are missing artifacts") {
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / "peftlad_ckpt_missing";
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_checkpoint(dir), MissingArtifactError);

    auto corpus = toy_corpus(12);
    TrainOutcome outcome = run_training(toy_model(), reft_choice(), toy_train(1), corpus);
    RunConfig run_cfg;
    save_checkpoint(dir, outcome.model, run_config_to_json(run_cfg), "fp");
    std::filesystem::remove(dir / "vocab.json");
    CHECK_THROWS_AS(load_checkpoint(dir), MissingArtifactError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("adapter-free fine-tuning trains just the head") {
    auto corpus = toy_corpus(18);
    PeftChoice none;
    TrainOutcome outcome = run_training(toy_model(), none, toy_train(1), corpus);
    CHECK(outcome.model.peft.lora.empty());
    CHECK(outcome.model.peft.reft.empty());
    auto fresh_head = init_head<float>(outcome.model.model_cfg);
    CHECK(outcome.model.head.weight.values() != fresh_head.weight.values());
}
