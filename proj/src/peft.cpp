#include "peftlad/peft.hpp"

#include <algorithm>

namespace peftlad {

PeftKind parse_peft_kind(const std::string& name) {
    if (name == "none") return PeftKind::none;
    if (name == "lora") return PeftKind::lora;
    if (name == "reft") return PeftKind::reft;
    throw ConfigError("unknown peft kind '" + name + "' (expected lora or reft)");
}

std::string peft_kind_name(PeftKind kind) {
    switch (kind) {
    case PeftKind::none: return "none";
    case PeftKind::lora: return "lora";
    default: return "reft";
    }
}

LoraTarget parse_lora_target(const std::string& name) {
    if (name == "query") return LoraTarget::query;
    if (name == "key") return LoraTarget::key;
    if (name == "value") return LoraTarget::value;
    throw ConfigError("unknown adapter target '" + name + "' (expected query, key, or value)");
}

std::string lora_target_name(LoraTarget target) {
    switch (target) {
    case LoraTarget::query: return "query";
    case LoraTarget::key: return "key";
    default: return "value";
    }
}

ReftPosition parse_reft_position(const std::string& name) {
    if (name == "prefix") return ReftPosition::prefix;
    if (name == "suffix") return ReftPosition::suffix;
    throw ConfigError("unknown intervention position '" + name + "' (expected prefix or suffix)");
}

std::string reft_position_name(ReftPosition position) {
    return position == ReftPosition::prefix ? "prefix" : "suffix";
}

namespace {

std::vector<int> resolve_layers(const std::vector<int>& layers, int layer_count, const char* what) {
    std::vector<int> resolved;
    if (layers.empty()) {
        resolved.resize(static_cast<std::size_t>(layer_count));
        for (int i = 0; i < layer_count; ++i) resolved[static_cast<std::size_t>(i)] = i;
        return resolved;
    }
    resolved = layers;
    std::sort(resolved.begin(), resolved.end());
    resolved.erase(std::unique(resolved.begin(), resolved.end()), resolved.end());
    for (int layer : resolved) {
        if (layer < 0 || layer >= layer_count) {
            throw ConfigError(std::string(what) + " layer index " + std::to_string(layer) +
                              " outside the model's " + std::to_string(layer_count) + " layers");
        }
    }
    return resolved;
}

void validate_rank(int rank, int hidden_dim, const char* what) {
    if (rank < 1) throw ConfigError(std::string(what) + " rank must be at least 1, got " + std::to_string(rank));
    if (rank > hidden_dim) {
        throw ConfigError(std::string(what) + " rank " + std::to_string(rank) +
                          " exceeds the hidden dimension " + std::to_string(hidden_dim) +
                          "; lower --rank or raise --hidden");
    }
}

} // namespace

void LoraConfig::validate(int hidden_dim, int layer_count) const {
    validate_rank(rank, hidden_dim, "lora");
    if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive, got " + std::to_string(alpha));
    if (targets.empty()) throw ConfigError("lora needs at least one target of query, key, value");
    resolve_layers(layers, layer_count, "lora");
}

std::vector<int> LoraConfig::resolved_layers(int layer_count) const {
    return resolve_layers(layers, layer_count, "lora");
}

void ReftConfig::validate(int hidden_dim, int layer_count) const {
    validate_rank(rank, hidden_dim, "reft");
    resolve_layers(layers, layer_count, "reft");
}

std::vector<int> ReftConfig::resolved_layers(int layer_count) const {
    return resolve_layers(layers, layer_count, "reft");
}

ReftPosition ReftConfig::resolved_position(ModelStyle style) const {
    if (position) return *position;
    return style == ModelStyle::masked ? ReftPosition::prefix : ReftPosition::suffix;
}

ParamCountBreakdown trainable_param_count(int hidden_dim, int layer_count, const PeftChoice& choice) {
    ParamCountBreakdown breakdown;
    const auto d = static_cast<std::uint64_t>(hidden_dim);
    if (choice.kind == PeftKind::lora) {
        choice.lora.validate(hidden_dim, layer_count);
        const auto r = static_cast<std::uint64_t>(choice.lora.rank);
        const auto matrices = static_cast<std::uint64_t>(choice.lora.targets.size()) *
                              choice.lora.resolved_layers(layer_count).size();
        breakdown.adapter = matrices * 2 * r * d;
    } else if (choice.kind == PeftKind::reft) {
        choice.reft.validate(hidden_dim, layer_count);
        const auto r = static_cast<std::uint64_t>(choice.reft.rank);
        const auto layers = static_cast<std::uint64_t>(choice.reft.resolved_layers(layer_count).size());
        breakdown.adapter = layers * (2 * r * d + r);
    }
    breakdown.head = 2 * d + 2;
    return breakdown;
}

} // namespace peftlad
