#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "peftlad/model.hpp"

using namespace peftlad;

namespace {

ModelConfig small_config(ModelStyle style) {
    ModelConfig cfg;
    cfg.style = style;
    cfg.layers = 2;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.ffn = 16;
    cfg.vocab_size = 11;
    cfg.max_len = 16;
    cfg.seed = 99;
    return cfg;
}

TokenizedSequence make_sequence(std::vector<int> ids, ModelStyle style) {
    TokenizedSequence seq;
    seq.ids = std::move(ids);
    seq.mask.assign(seq.ids.size(), 1);
    seq.selected_index = style == ModelStyle::masked ? 0 : seq.ids.size() - 1;
    return seq;
}

} // namespace

TEST_CASE("initialization is deterministic in the seed and sensitive to it") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    auto p1 = init_parameters<float>(cfg);
    auto p2 = init_parameters<float>(cfg);
    CHECK(p1.token_embedding.values() == p2.token_embedding.values());
    CHECK(p1.blocks[1].ffn_in.weight.values() == p2.blocks[1].ffn_in.weight.values());

    ModelConfig other = cfg;
    other.seed = 100;
    auto p3 = init_parameters<float>(other);
    CHECK(p1.token_embedding.values() != p3.token_embedding.values());

    auto h1 = init_head<float>(cfg);
    auto h2 = init_head<float>(cfg);
    CHECK(h1.weight.values() == h2.weight.values());
    // head and base draw from distinct streams: same seed, different values
    CHECK(h1.weight.values()[0] != p1.blocks[0].query.weight.values()[0]);
}

TEST_CASE("initial scales follow fan-in bounds, zero biases, identity norms") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    auto params = init_parameters<float>(cfg);
    const double bound = 1.0 / std::sqrt(8.0);
    for (float w : params.blocks[0].query.weight.values()) {
        CHECK(std::abs(w) <= bound);
    }
    const double ffn_out_bound = 1.0 / std::sqrt(16.0);
    for (float w : params.blocks[0].ffn_out.weight.values()) {
        CHECK(std::abs(w) <= ffn_out_bound);
    }
    CHECK(params.blocks[0].query.bias.values() == std::vector<float>(8, 0.0f));
    CHECK(params.blocks[1].norm_attn.gamma.values() == std::vector<float>(8, 1.0f));
    CHECK(params.blocks[1].norm_attn.beta.values() == std::vector<float>(8, 0.0f));

    // the base is frozen by construction; only the head opts in
    CHECK(!params.token_embedding.requires_grad());
    CHECK(!params.blocks[0].query.weight.requires_grad());
    auto head = init_head<float>(cfg);
    CHECK(head.weight.requires_grad());
    CHECK(head.bias.requires_grad());
}

TEST_CASE("config validation catches shape mistakes") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(ModelStyle::masked);
    cfg.heads = 3; // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(ModelStyle::masked);
    cfg.vocab_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(ModelStyle::masked);
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("the attention mask hides padding from everyone and the future from causal queries") {
    Tensor<float> masked = attention_mask<float>({1, 1, 0}, ModelStyle::masked);
    // every query sees real keys 0 and 1, nobody sees the pad key 2
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(masked.values()[i * 3 + 0] == 0.0f);
        CHECK(masked.values()[i * 3 + 1] == 0.0f);
        CHECK(masked.values()[i * 3 + 2] == -1e30f);
    }
    Tensor<float> causal = attention_mask<float>({1, 1, 1}, ModelStyle::autoregressive);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(causal.values()[i * 3 + j] == (j <= i ? 0.0f : -1e30f));
        }
    }
}

TEST_CASE("causal hidden states ignore appended future tokens bitwise") {
    ModelConfig cfg = small_config(ModelStyle::autoregressive);
    auto params = init_parameters<float>(cfg);

    TokenizedSequence prefix = make_sequence({5, 7, 3}, ModelStyle::autoregressive);
    TokenizedSequence longer = make_sequence({5, 7, 3, 9, 4}, ModelStyle::autoregressive);

    auto short_states = forward_hidden<float>(params, cfg, nullptr, prefix);
    auto long_states = forward_hidden<float>(params, cfg, nullptr, longer);
    for (std::size_t layer = 0; layer < short_states.layers.size(); ++layer) {
        const auto& a = short_states.layers[layer].values();
        const auto& b = long_states.layers[layer].values();
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i] == b[i]); // first three rows, exact equality
        }
    }
}

TEST_CASE("padding appended to a masked sequence never reaches the real rows") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    auto params = init_parameters<float>(cfg);

    TokenizedSequence bare = make_sequence({2, 5, 7}, ModelStyle::masked);
    TokenizedSequence padded = bare;
    padded.ids.insert(padded.ids.end(), {0, 0, 0});
    padded.mask.insert(padded.mask.end(), {0, 0, 0});

    auto bare_states = forward_hidden<float>(params, cfg, nullptr, bare);
    auto pad_states = forward_hidden<float>(params, cfg, nullptr, padded);
    for (std::size_t layer = 0; layer < bare_states.layers.size(); ++layer) {
        const auto& a = bare_states.layers[layer].values();
        const auto& b = pad_states.layers[layer].values();
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i] == b[i]);
        }
    }

    auto head = init_head<float>(cfg);
    CHECK(head_logits(bare_states, head).values() == head_logits(pad_states, head).values());
}

TEST_CASE("the selected state is sensitive to content changes") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    auto params = init_parameters<float>(cfg);
    auto head = init_head<float>(cfg);

    TokenizedSequence a = make_sequence({2, 5, 7, 3}, ModelStyle::masked);
    TokenizedSequence b = make_sequence({2, 5, 8, 3}, ModelStyle::masked);
    auto logits_a = sequence_logits<float>(params, cfg, nullptr, head, a);
    auto logits_b = sequence_logits<float>(params, cfg, nullptr, head, b);
    CHECK(logits_a.size() == 2);
    CHECK(logits_a.values() != logits_b.values());
}

TEST_CASE("forward validates ids, lengths and emptiness") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    auto params = init_parameters<float>(cfg);

    TokenizedSequence bad_id = make_sequence({2, 11}, ModelStyle::masked);
    CHECK_THROWS_AS(forward_hidden<float>(params, cfg, nullptr, bad_id), InputError);

    TokenizedSequence negative = make_sequence({2, -1}, ModelStyle::masked);
    CHECK_THROWS_AS(forward_hidden<float>(params, cfg, nullptr, negative), InputError);

    TokenizedSequence too_long = make_sequence(std::vector<int>(17, 3), ModelStyle::masked);
    CHECK_THROWS_AS(forward_hidden<float>(params, cfg, nullptr, too_long), InputError);

    TokenizedSequence empty;
    CHECK_THROWS_AS(forward_hidden<float>(params, cfg, nullptr, empty), InputError);
}

TEST_CASE("forward is deterministic and dropout only acts when a stream is supplied") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    cfg.dropout = 0.5;
    auto params = init_parameters<float>(cfg);
    TokenizedSequence seq = make_sequence({2, 5, 7}, ModelStyle::masked);

    auto eval1 = forward_hidden<float>(params, cfg, nullptr, seq);
    auto eval2 = forward_hidden<float>(params, cfg, nullptr, seq);
    CHECK(eval1.layers.back().values() == eval2.layers.back().values());

    Rng drop_rng(7);
    auto trained = forward_hidden<float>(params, cfg, nullptr, seq, &drop_rng);
    CHECK(trained.layers.back().values() != eval1.layers.back().values());
}

TEST_CASE("anomaly scores are a sigmoid of the logit gap with ties staying normal") {
    CHECK(anomaly_score_from_logits(Tensor<float>({2}, {0.0f, 0.0f})) == 0.5);
    CHECK(predicted_label(0.5) == 0);
    CHECK(predicted_label(0.5000001) == 1);

    const double low = anomaly_score_from_logits(Tensor<float>({2}, {2.0f, 0.0f}));
    const double high = anomaly_score_from_logits(Tensor<float>({2}, {0.0f, 2.0f}));
    CHECK(low < 0.5);
    CHECK(high > 0.5);
    CHECK(low + high == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(anomaly_score_from_logits(Tensor<float>({2}, {0.0f, 30.0f})) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(anomaly_score_from_logits(Tensor<float>({3}, {0, 0, 0})), DimensionError);
}

TEST_CASE("parameter enumeration is stable, complete and ordered") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    auto params = init_parameters<float>(cfg);
    std::vector<std::string> names;
    std::size_t total = 0;
    for_each_base_param<float>(params, [&](const std::string& name, Tensor<float>& t) {
        names.push_back(name);
        total += t.size();
    });
    CHECK(names.front() == "token_embedding");
    CHECK(names[1] == "pos_embedding");
    CHECK(names[2] == "block0.query.weight");
    CHECK(names.back() == "block1.norm_ffn.beta");
    CHECK(names.size() == 2 + 2 * 16);
    // vocab*d + max_len*d + per block: 4 d x d linears + 2 norms + ffn pair
    const std::size_t expected = 11 * 8 + 16 * 8 + 2 * (4 * (64 + 8) + 2 * 16 + (16 * 8 + 16) + (8 * 16 + 8));
    CHECK(total == expected);

    auto head = init_head<float>(cfg);
    std::vector<std::string> head_names;
    for_each_head_param<float>(head, [&](const std::string& name, Tensor<float>&) {
        head_names.push_back(name);
    });
    CHECK(head_names == std::vector<std::string>{"head.weight", "head.bias"});
}

TEST_CASE("activation names parse both ways") {
    CHECK(parse_activation("gelu") == Activation::gelu);
    CHECK(parse_activation("relu") == Activation::relu);
    CHECK_THROWS_AS(parse_activation("tanh"), ConfigError);
    CHECK(activation_name(Activation::relu) == "relu");
}

TEST_CASE("relu and gelu models produce different hidden states") {
    ModelConfig cfg = small_config(ModelStyle::masked);
    auto params = init_parameters<float>(cfg);
    TokenizedSequence seq = make_sequence({2, 5, 7}, ModelStyle::masked);
    auto with_gelu = forward_hidden<float>(params, cfg, nullptr, seq);
    cfg.activation = Activation::relu;
    auto with_relu = forward_hidden<float>(params, cfg, nullptr, seq);
    CHECK(with_gelu.layers.back().values() != with_relu.layers.back().values());
}
