#include "peftlad/run_config.hpp"

#include <iomanip>
#include <sstream>

#include "peftlad/errors.hpp"
#include "peftlad/rng.hpp"

namespace peftlad {

namespace {

template <typename T>
T get_or(const nlohmann::json& doc, const char* key, T fallback) {
    if (!doc.contains(key)) return fallback;
    try {
        return doc.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
}

} // namespace

void RunConfig::apply_seed() {
    model.seed = seed;
    train.seed = seed;
}

void RunConfig::validate() const {
    if (dataset.format != "hdfs" && dataset.format != "labeled-lines") {
        throw ConfigError("dataset.format must be hdfs or labeled-lines, got '" + dataset.format + "'");
    }
    if (dataset.grouping != "session" && dataset.grouping != "window") {
        throw ConfigError("dataset.grouping must be session or window, got '" + dataset.grouping + "'");
    }
    if (dataset.grouping == "session" && dataset.format != "hdfs") {
        throw ConfigError("session grouping needs the hdfs format; labeled-lines has no session keys");
    }
    if (dataset.format == "hdfs" && dataset.grouping != "session") {
        throw ConfigError("the hdfs format is session-labeled; use session grouping");
    }
    if (dataset.window < 1) throw ConfigError("dataset.window must be at least 1");
    if (dataset.stride < 0) throw ConfigError("dataset.stride must be non-negative (0 = tumbling)");
    if (!(dataset.train_ratio > 0.0 && dataset.train_ratio < 1.0)) {
        throw ConfigError("dataset.train_ratio must lie in (0,1)");
    }
    // vocab_size is not known before training; validate everything else.
    ModelConfig probe = model;
    probe.vocab_size = probe.vocab_size > 0 ? probe.vocab_size : 3;
    probe.validate();
    train.validate();
    if (peft.kind == PeftKind::lora) peft.lora.validate(model.hidden, model.layers);
    if (peft.kind == PeftKind::reft) peft.reft.validate(model.hidden, model.layers);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json doc;
    doc["dataset"] = {{"path", cfg.dataset.path},       {"format", cfg.dataset.format},
                      {"labels", cfg.dataset.labels},   {"grouping", cfg.dataset.grouping},
                      {"window", cfg.dataset.window},   {"stride", cfg.dataset.stride},
                      {"train_ratio", cfg.dataset.train_ratio}};
    doc["model"] = {{"style", model_style_name(cfg.model.style)},
                    {"layers", cfg.model.layers},
                    {"hidden", cfg.model.hidden},
                    {"heads", cfg.model.heads},
                    {"ffn", cfg.model.ffn},
                    {"max_len", cfg.model.max_len},
                    {"activation", activation_name(cfg.model.activation)},
                    {"dropout", cfg.model.dropout}};
    nlohmann::json peft_doc;
    peft_doc["kind"] = peft_kind_name(cfg.peft.kind);
    if (cfg.peft.kind == PeftKind::lora) {
        peft_doc["rank"] = cfg.peft.lora.rank;
        peft_doc["alpha"] = cfg.peft.lora.alpha;
        nlohmann::json targets = nlohmann::json::array();
        for (LoraTarget target : cfg.peft.lora.targets) targets.push_back(lora_target_name(target));
        peft_doc["targets"] = targets;
        peft_doc["layers"] = cfg.peft.lora.layers;
    } else if (cfg.peft.kind == PeftKind::reft) {
        peft_doc["rank"] = cfg.peft.reft.rank;
        if (cfg.peft.reft.position) peft_doc["position"] = reft_position_name(*cfg.peft.reft.position);
        peft_doc["layers"] = cfg.peft.reft.layers;
    }
    doc["peft"] = peft_doc;
    doc["train"] = {{"learning_rate", cfg.train.learning_rate},
                    {"batch_size", cfg.train.batch_size},
                    {"epochs", cfg.train.epochs},
                    {"weight_decay", cfg.train.weight_decay},
                    {"beta1", cfg.train.beta1},
                    {"beta2", cfg.train.beta2},
                    {"epsilon", cfg.train.epsilon}};
    doc["seed"] = cfg.seed;
    doc["out"] = cfg.out;
    return doc;
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
    RunConfig cfg;
    if (doc.contains("dataset")) {
        const auto& d = doc.at("dataset");
        cfg.dataset.path = get_or<std::string>(d, "path", cfg.dataset.path);
        cfg.dataset.format = get_or<std::string>(d, "format", cfg.dataset.format);
        cfg.dataset.labels = get_or<std::string>(d, "labels", cfg.dataset.labels);
        cfg.dataset.grouping = get_or<std::string>(d, "grouping", cfg.dataset.grouping);
        cfg.dataset.window = get_or<int>(d, "window", cfg.dataset.window);
        cfg.dataset.stride = get_or<int>(d, "stride", cfg.dataset.stride);
        cfg.dataset.train_ratio = get_or<double>(d, "train_ratio", cfg.dataset.train_ratio);
    }
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        cfg.model.style = parse_model_style(get_or<std::string>(m, "style", model_style_name(cfg.model.style)));
        cfg.model.layers = get_or<int>(m, "layers", cfg.model.layers);
        cfg.model.hidden = get_or<int>(m, "hidden", cfg.model.hidden);
        cfg.model.heads = get_or<int>(m, "heads", cfg.model.heads);
        cfg.model.ffn = get_or<int>(m, "ffn", cfg.model.ffn);
        cfg.model.max_len = get_or<int>(m, "max_len", cfg.model.max_len);
        cfg.model.activation =
            parse_activation(get_or<std::string>(m, "activation", activation_name(cfg.model.activation)));
        cfg.model.dropout = get_or<double>(m, "dropout", cfg.model.dropout);
    }
    if (doc.contains("peft")) {
        const auto& p = doc.at("peft");
        cfg.peft.kind = parse_peft_kind(get_or<std::string>(p, "kind", "reft"));
        if (cfg.peft.kind == PeftKind::lora) {
            cfg.peft.lora.rank = get_or<int>(p, "rank", cfg.peft.lora.rank);
            cfg.peft.lora.alpha = get_or<double>(p, "alpha", cfg.peft.lora.alpha);
            if (p.contains("targets")) {
                cfg.peft.lora.targets.clear();
                for (const auto& name : p.at("targets")) {
                    cfg.peft.lora.targets.insert(parse_lora_target(name.get<std::string>()));
                }
            }
            cfg.peft.lora.layers = get_or<std::vector<int>>(p, "layers", cfg.peft.lora.layers);
        } else if (cfg.peft.kind == PeftKind::reft) {
            cfg.peft.reft.rank = get_or<int>(p, "rank", cfg.peft.reft.rank);
            if (p.contains("position")) {
                cfg.peft.reft.position = parse_reft_position(p.at("position").get<std::string>());
            }
            cfg.peft.reft.layers = get_or<std::vector<int>>(p, "layers", cfg.peft.reft.layers);
        }
    }
    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        cfg.train.learning_rate = get_or<double>(t, "learning_rate", cfg.train.learning_rate);
        cfg.train.batch_size = get_or<int>(t, "batch_size", cfg.train.batch_size);
        cfg.train.epochs = get_or<int>(t, "epochs", cfg.train.epochs);
        cfg.train.weight_decay = get_or<double>(t, "weight_decay", cfg.train.weight_decay);
        cfg.train.beta1 = get_or<double>(t, "beta1", cfg.train.beta1);
        cfg.train.beta2 = get_or<double>(t, "beta2", cfg.train.beta2);
        cfg.train.epsilon = get_or<double>(t, "epsilon", cfg.train.epsilon);
    }
    cfg.seed = get_or<std::uint64_t>(doc, "seed", cfg.seed);
    cfg.out = get_or<std::string>(doc, "out", cfg.out);
    cfg.apply_seed();
    return cfg;
}

nlohmann::json model_state_to_json(const ModelConfig& model, const PeftChoice& peft) {
    nlohmann::json doc;
    doc["style"] = model_style_name(model.style);
    doc["layers"] = model.layers;
    doc["hidden"] = model.hidden;
    doc["heads"] = model.heads;
    doc["ffn"] = model.ffn;
    doc["vocab_size"] = model.vocab_size;
    doc["max_len"] = model.max_len;
    doc["activation"] = activation_name(model.activation);
    doc["dropout"] = model.dropout;
    doc["seed"] = model.seed;
    nlohmann::json peft_doc;
    peft_doc["kind"] = peft_kind_name(peft.kind);
    if (peft.kind == PeftKind::lora) {
        peft_doc["rank"] = peft.lora.rank;
        peft_doc["alpha"] = peft.lora.alpha;
        nlohmann::json targets = nlohmann::json::array();
        for (LoraTarget target : peft.lora.targets) targets.push_back(lora_target_name(target));
        peft_doc["targets"] = targets;
        peft_doc["layers"] = peft.lora.layers;
    } else if (peft.kind == PeftKind::reft) {
        peft_doc["rank"] = peft.reft.rank;
        if (peft.reft.position) peft_doc["position"] = reft_position_name(*peft.reft.position);
        peft_doc["layers"] = peft.reft.layers;
    }
    doc["peft"] = peft_doc;
    return doc;
}

void model_state_from_json(const nlohmann::json& doc, ModelConfig& model, PeftChoice& peft) {
    model.style = parse_model_style(doc.at("style").get<std::string>());
    model.layers = doc.at("layers").get<int>();
    model.hidden = doc.at("hidden").get<int>();
    model.heads = doc.at("heads").get<int>();
    model.ffn = doc.at("ffn").get<int>();
    model.vocab_size = doc.at("vocab_size").get<int>();
    model.max_len = doc.at("max_len").get<int>();
    model.activation = parse_activation(doc.at("activation").get<std::string>());
    model.dropout = doc.at("dropout").get<double>();
    model.seed = doc.at("seed").get<std::uint64_t>();
    const auto& p = doc.at("peft");
    peft.kind = parse_peft_kind(p.at("kind").get<std::string>());
    if (peft.kind == PeftKind::lora) {
        peft.lora.rank = p.at("rank").get<int>();
        peft.lora.alpha = p.at("alpha").get<double>();
        peft.lora.targets.clear();
        for (const auto& name : p.at("targets")) peft.lora.targets.insert(parse_lora_target(name.get<std::string>()));
        peft.lora.layers = p.at("layers").get<std::vector<int>>();
    } else if (peft.kind == PeftKind::reft) {
        peft.reft.rank = p.at("rank").get<int>();
        if (p.contains("position")) peft.reft.position = parse_reft_position(p.at("position").get<std::string>());
        peft.reft.layers = p.at("layers").get<std::vector<int>>();
    }
}

std::string config_fingerprint(const RunConfig& cfg) {
    // nlohmann::json keeps object keys sorted, so dump() is canonical.
    const std::string canonical = run_config_to_json(cfg).dump();
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical);
    return out.str();
}

} // namespace peftlad
