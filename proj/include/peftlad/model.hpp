#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "peftlad/errors.hpp"
#include "peftlad/peft.hpp"
#include "peftlad/rng.hpp"
#include "peftlad/tensor.hpp"
#include "peftlad/tokenizer.hpp"

namespace peftlad {

enum class Activation { gelu, relu };

inline Activation parse_activation(const std::string& name) {
    if (name == "gelu") return Activation::gelu;
    if (name == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + name + "' (expected gelu or relu)");
}

inline std::string activation_name(Activation activation) {
    return activation == Activation::gelu ? "gelu" : "relu";
}

struct ModelConfig {
    ModelStyle style = ModelStyle::masked;
    int layers = 2;
    int hidden = 64;
    int heads = 4;
    int ffn = 256;
    int vocab_size = 0; // filled in once the vocabulary exists
    int max_len = 256;
    Activation activation = Activation::gelu;
    double dropout = 0.0;
    std::uint64_t seed = 42;

    void validate() const {
        if (layers < 1) throw ConfigError("model needs at least 1 layer, got " + std::to_string(layers));
        if (hidden < 1 || heads < 1 || ffn < 1 || max_len < 1) {
            throw ConfigError("model extents must be at least 1");
        }
        if (hidden % heads != 0) {
            throw ConfigError("hidden dimension " + std::to_string(hidden) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        }
        if (vocab_size < 1) throw ConfigError("model vocab_size must be set before use");
        if (dropout < 0.0 || dropout >= 1.0) {
            throw ConfigError("dropout must lie in [0,1), got " + std::to_string(dropout));
        }
    }
};

template <typename T>
struct LinearParams {
    Tensor<T> weight; // out x in
    Tensor<T> bias;   // out
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
struct BlockParams {
    LinearParams<T> query, key, value, output;
    LayerNormParams<T> norm_attn;
    LinearParams<T> ffn_in, ffn_out;
    LayerNormParams<T> norm_ffn;
};

template <typename T>
struct ModelParams {
    Tensor<T> token_embedding; // vocab x d
    Tensor<T> pos_embedding;   // max_len x d
    std::vector<BlockParams<T>> blocks;
};

template <typename T>
struct HeadParams {
    Tensor<T> weight; // 2 x d
    Tensor<T> bias;   // 2
};

// PEFT parameters attached to a model: per (layer, target) low-rank adapters
// or per-layer hidden-state interventions. Only these and the head train.
template <typename T>
struct PeftState {
    PeftKind kind = PeftKind::none;
    LoraConfig lora_cfg;
    ReftConfig reft_cfg;
    std::map<std::pair<int, LoraTarget>, LoraAdapter<T>> lora;
    std::map<int, ReftIntervention<T>> reft;
    ReftPosition reft_position = ReftPosition::prefix;

    const LoraAdapter<T>* lora_for(int layer, LoraTarget target) const {
        auto it = lora.find({layer, target});
        return it == lora.end() ? nullptr : &it->second;
    }
    const ReftIntervention<T>* reft_for(int layer) const {
        auto it = reft.find(layer);
        return it == reft.end() ? nullptr : &it->second;
    }
};

namespace detail {

template <typename T>
LinearParams<T> init_linear(std::size_t out, std::size_t in, Rng& rng) {
    LinearParams<T> linear;
    linear.weight = random_uniform<T>({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    linear.bias = Tensor<T>::zeros({out});
    return linear;
}

template <typename T>
LayerNormParams<T> init_layer_norm(std::size_t width) {
    LayerNormParams<T> norm;
    norm.gamma = Tensor<T>::full({width}, T(1));
    norm.beta = Tensor<T>::zeros({width});
    return norm;
}

} // namespace detail

// Base transformer parameters, deterministic from the config seed. Weights
// draw from uniform(-1/sqrt(fan_in), +), biases start at zero, embeddings
// from normal(0, 0.02). Base parameters stay frozen during fine-tuning.
template <typename T>
ModelParams<T> init_parameters(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "model-init"));
    const auto d = static_cast<std::size_t>(cfg.hidden);
    ModelParams<T> params;
    params.token_embedding = random_normal<T>({static_cast<std::size_t>(cfg.vocab_size), d}, 0.02, rng);
    params.pos_embedding = random_normal<T>({static_cast<std::size_t>(cfg.max_len), d}, 0.02, rng);
    params.blocks.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& block : params.blocks) {
        block.query = detail::init_linear<T>(d, d, rng);
        block.key = detail::init_linear<T>(d, d, rng);
        block.value = detail::init_linear<T>(d, d, rng);
        block.output = detail::init_linear<T>(d, d, rng);
        block.norm_attn = detail::init_layer_norm<T>(d);
        block.ffn_in = detail::init_linear<T>(static_cast<std::size_t>(cfg.ffn), d, rng);
        block.ffn_out = detail::init_linear<T>(d, static_cast<std::size_t>(cfg.ffn), rng);
        block.norm_ffn = detail::init_layer_norm<T>(d);
    }
    return params;
}

template <typename T>
HeadParams<T> init_head(const ModelConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, "head-init"));
    HeadParams<T> head;
    head.weight = random_uniform<T>({2, static_cast<std::size_t>(cfg.hidden)},
                                    1.0 / std::sqrt(static_cast<double>(cfg.hidden)), rng, true);
    head.bias = Tensor<T>::zeros({2}, true);
    return head;
}

template <typename T>
PeftState<T> init_peft(const ModelConfig& cfg, const PeftChoice& choice) {
    PeftState<T> state;
    state.kind = choice.kind;
    Rng rng(derive_seed(cfg.seed, "peft-init"));
    if (choice.kind == PeftKind::lora) {
        choice.lora.validate(cfg.hidden, cfg.layers);
        state.lora_cfg = choice.lora;
        for (int layer : choice.lora.resolved_layers(cfg.layers)) {
            for (LoraTarget target : {LoraTarget::query, LoraTarget::key, LoraTarget::value}) {
                if (!choice.lora.targets.count(target)) continue;
                state.lora.emplace(std::make_pair(layer, target),
                                   LoraAdapter<T>::init(cfg.hidden, choice.lora.rank, choice.lora.alpha, rng));
            }
        }
    } else if (choice.kind == PeftKind::reft) {
        choice.reft.validate(cfg.hidden, cfg.layers);
        state.reft_cfg = choice.reft;
        state.reft_position = choice.reft.resolved_position(cfg.style);
        for (int layer : choice.reft.resolved_layers(cfg.layers)) {
            state.reft.emplace(layer, init_reft_intervention<T>(cfg.hidden, choice.reft.rank, rng));
        }
    }
    return state;
}

// y = x W^T + b for a row-major token matrix x, optionally with a low-rank
// adapter riding on the frozen weight.
template <typename T>
Tensor<T> apply_linear(const Tensor<T>& x, const LinearParams<T>& linear, const LoraAdapter<T>* adapter) {
    Tensor<T> out = add(matmul(x, linear.weight, false, true), linear.bias);
    if (adapter) out = add(out, lora_delta(x, *adapter));
    return out;
}

template <typename T>
struct HiddenStates {
    std::vector<Tensor<T>> layers; // h^(0) .. h^(m), each seq_len x d
    std::size_t selected_index = 0;
};

// Additive attention mask: 0 where key j is visible to query i, -1e30
// otherwise. -1e30 swallows any finite score exactly, and after the row-max
// subtraction the masked exponentials underflow to 0, so masked keys
// contribute nothing at all -- which is what makes the padding-append and
// causality guarantees bitwise rather than approximate.
template <typename T>
Tensor<T> attention_mask(const std::vector<int>& key_mask, ModelStyle style) {
    const std::size_t n = key_mask.size();
    std::vector<T> mask(n * n, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool visible = key_mask[j] != 0 && (style == ModelStyle::masked || j <= i);
            if (!visible) mask[i * n + j] = T(-1e30);
        }
    }
    return Tensor<T>({n, n}, std::move(mask));
}

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, Activation activation) {
    return activation == Activation::gelu ? gelu(x) : relu(x);
}

// Full forward pass for one (possibly padded) sequence, post-norm blocks:
// x -> attention -> add&norm -> feed-forward -> add&norm, with optional
// adapters inside the attention projections and per-layer hidden-state
// interventions at the selected position afterwards.
template <typename T>
HiddenStates<T> forward_hidden(const ModelParams<T>& params, const ModelConfig& cfg,
                               const PeftState<T>* peft, const TokenizedSequence& seq, Rng* dropout_rng = nullptr) {
    const std::size_t n = seq.ids.size();
    if (n == 0) throw InputError("forward on an empty sequence");
    if (n > static_cast<std::size_t>(cfg.max_len)) {
        throw InputError("sequence length " + std::to_string(n) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
    }
    for (int id : seq.ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(cfg.vocab_size));
        }
    }
    const std::size_t d = static_cast<std::size_t>(cfg.hidden);
    const std::size_t heads = static_cast<std::size_t>(cfg.heads);
    const std::size_t head_dim = d / heads;
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

    std::vector<int> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);

    HiddenStates<T> states;
    states.selected_index = seq.selected_index;
    Tensor<T> x = add(embedding_rows(params.token_embedding, seq.ids),
                      embedding_rows(params.pos_embedding, positions));
    states.layers.push_back(x);

    const Tensor<T> mask = attention_mask<T>(seq.mask, cfg.style);
    const bool use_dropout = cfg.dropout > 0.0 && dropout_rng != nullptr;

    for (int layer = 0; layer < cfg.layers; ++layer) {
        const BlockParams<T>& block = params.blocks[static_cast<std::size_t>(layer)];
        const LoraAdapter<T>* aq = peft ? peft->lora_for(layer, LoraTarget::query) : nullptr;
        const LoraAdapter<T>* ak = peft ? peft->lora_for(layer, LoraTarget::key) : nullptr;
        const LoraAdapter<T>* av = peft ? peft->lora_for(layer, LoraTarget::value) : nullptr;

        Tensor<T> q = apply_linear(x, block.query, aq);
        Tensor<T> k = apply_linear(x, block.key, ak);
        Tensor<T> v = apply_linear(x, block.value, av);

        std::vector<Tensor<T>> head_outputs;
        head_outputs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t lo = h * head_dim, hi = lo + head_dim;
            Tensor<T> qh = slice_cols(q, lo, hi);
            Tensor<T> kh = slice_cols(k, lo, hi);
            Tensor<T> vh = slice_cols(v, lo, hi);
            Tensor<T> scores = add(scale(matmul(qh, kh, false, true), inv_sqrt_dh), mask);
            Tensor<T> attn = softmax_rows(scores);
            head_outputs.push_back(matmul(attn, vh));
        }
        Tensor<T> context = heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
        Tensor<T> attn_out = apply_linear<T>(context, block.output, nullptr);
        if (use_dropout) attn_out = dropout(attn_out, cfg.dropout, *dropout_rng);
        Tensor<T> x1 = layer_norm_rows(add(x, attn_out), block.norm_attn.gamma, block.norm_attn.beta);

        Tensor<T> inner = apply_activation(apply_linear<T>(x1, block.ffn_in, nullptr), cfg.activation);
        Tensor<T> ffn_out = apply_linear<T>(inner, block.ffn_out, nullptr);
        if (use_dropout) ffn_out = dropout(ffn_out, cfg.dropout, *dropout_rng);
        Tensor<T> x2 = layer_norm_rows(add(x1, ffn_out), block.norm_ffn.gamma, block.norm_ffn.beta);

        if (peft && peft->kind == PeftKind::reft) {
            if (const ReftIntervention<T>* iv = peft->reft_for(layer)) {
                const std::size_t pos =
                    peft->reft_position == ReftPosition::prefix ? 0 : seq.selected_index;
                x2 = replace_row(x2, pos, reft_forward(select_row(x2, pos), *iv));
            }
        }
        x = x2;
        states.layers.push_back(x);
    }
    return states;
}

// Two logits from the final hidden state at the selected position.
template <typename T>
Tensor<T> head_logits(const HiddenStates<T>& states, const HeadParams<T>& head) {
    Tensor<T> h_t = select_row(states.layers.back(), states.selected_index);
    return add(matvec(head.weight, h_t), head.bias);
}

template <typename T>
Tensor<T> sequence_logits(const ModelParams<T>& params, const ModelConfig& cfg, const PeftState<T>* peft,
                          const HeadParams<T>& head, const TokenizedSequence& seq, Rng* dropout_rng = nullptr) {
    return head_logits(forward_hidden(params, cfg, peft, seq, dropout_rng), head);
}

// Softmax probability of the anomalous class; ties at 0.5 stay normal.
template <typename T>
double anomaly_score_from_logits(const Tensor<T>& logits) {
    if (logits.size() != 2) {
        throw DimensionError("anomaly score needs two logits, got " + shape_str(logits.shape()));
    }
    const double z0 = static_cast<double>(logits.values()[0]);
    const double z1 = static_cast<double>(logits.values()[1]);
    return 1.0 / (1.0 + std::exp(z0 - z1));
}

inline int predicted_label(double score) { return score > 0.5 ? 1 : 0; }

// Stable, ordered traversal of every parameter; the one source of truth for
// the optimizer, checkpointing, and freeze checks. Base parameters come
// first, then adapter parameters, then the head.
template <typename T>
void for_each_base_param(ModelParams<T>& params, const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("token_embedding", params.token_embedding);
    fn("pos_embedding", params.pos_embedding);
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        BlockParams<T>& block = params.blocks[i];
        fn(prefix + "query.weight", block.query.weight);
        fn(prefix + "query.bias", block.query.bias);
        fn(prefix + "key.weight", block.key.weight);
        fn(prefix + "key.bias", block.key.bias);
        fn(prefix + "value.weight", block.value.weight);
        fn(prefix + "value.bias", block.value.bias);
        fn(prefix + "output.weight", block.output.weight);
        fn(prefix + "output.bias", block.output.bias);
        fn(prefix + "norm_attn.gamma", block.norm_attn.gamma);
        fn(prefix + "norm_attn.beta", block.norm_attn.beta);
        fn(prefix + "ffn_in.weight", block.ffn_in.weight);
        fn(prefix + "ffn_in.bias", block.ffn_in.bias);
        fn(prefix + "ffn_out.weight", block.ffn_out.weight);
        fn(prefix + "ffn_out.bias", block.ffn_out.bias);
        fn(prefix + "norm_ffn.gamma", block.norm_ffn.gamma);
        fn(prefix + "norm_ffn.beta", block.norm_ffn.beta);
    }
}

template <typename T>
void for_each_peft_param(PeftState<T>& peft, const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (auto& [key, adapter] : peft.lora) {
        const std::string prefix =
            "lora.layer" + std::to_string(key.first) + "." + lora_target_name(key.second) + ".";
        fn(prefix + "B", adapter.B);
        fn(prefix + "A", adapter.A);
    }
    for (auto& [layer, iv] : peft.reft) {
        const std::string prefix = "reft.layer" + std::to_string(layer) + ".";
        fn(prefix + "R", iv.R);
        fn(prefix + "W", iv.W);
        fn(prefix + "b", iv.b);
    }
}

template <typename T>
void for_each_head_param(HeadParams<T>& head, const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("head.weight", head.weight);
    fn("head.bias", head.bias);
}

} // namespace peftlad
