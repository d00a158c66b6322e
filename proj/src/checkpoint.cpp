#include "peftlad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "peftlad/errors.hpp"
#include "peftlad/run_config.hpp"

namespace peftlad {

namespace {

constexpr char MANIFEST_NAME[] = "manifest.json";
constexpr char WEIGHTS_NAME[] = "weights.bin";
constexpr char VOCAB_NAME[] = "vocab.json";

static_assert(sizeof(float) == 4, "checkpoint format assumes 32-bit floats");

void to_little_endian(std::vector<float>& values) {
    if constexpr (std::endian::native == std::endian::big) {
        for (float& v : values) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            bits = __builtin_bswap32(bits);
            std::memcpy(&v, &bits, 4);
        }
    }
}

template <typename Fn>
void enumerate_all(TrainedModel& model, Fn&& fn) {
    const std::function<void(const std::string&, Tensor<float>&)> wrapped = fn;
    for_each_base_param<float>(model.params, wrapped);
    for_each_peft_param<float>(model.peft, wrapped);
    for_each_head_param<float>(model.head, wrapped);
}

} // namespace

void save_checkpoint(const std::filesystem::path& dir, TrainedModel& model,
                     const nlohmann::json& run_config_json, const std::string& fingerprint) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    nlohmann::json manifest;
    manifest["format"] = "peftlad-checkpoint";
    manifest["version"] = 1;
    manifest["precision"] = "f32";
    manifest["vocabulary"] = VOCAB_NAME;
    manifest["config_hash"] = fingerprint;
    manifest["run_config"] = run_config_json;
    manifest["model_state"] = model_state_to_json(model.model_cfg, model.peft_choice);

    nlohmann::json parameters = nlohmann::json::array();
    std::ofstream weights(dir / WEIGHTS_NAME, std::ios::binary | std::ios::trunc);
    if (!weights) throw IoError("cannot write " + (dir / WEIGHTS_NAME).string());
    std::size_t offset = 0;
    enumerate_all(model, [&](const std::string& name, Tensor<float>& tensor) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = tensor.shape();
        entry["offset"] = offset;
        entry["count"] = tensor.size();
        parameters.push_back(entry);
        std::vector<float> values = tensor.values();
        to_little_endian(values);
        weights.write(reinterpret_cast<const char*>(values.data()),
                      static_cast<std::streamsize>(values.size() * sizeof(float)));
        offset += values.size() * sizeof(float);
    });
    weights.close();
    if (!weights) throw IoError("failed writing " + (dir / WEIGHTS_NAME).string());
    manifest["parameters"] = parameters;

    std::ofstream vocab_out(dir / VOCAB_NAME);
    if (!vocab_out) throw IoError("cannot write " + (dir / VOCAB_NAME).string());
    model.vocab.save(vocab_out);
    vocab_out.close();
    if (!vocab_out) throw IoError("failed writing " + (dir / VOCAB_NAME).string());

    std::ofstream manifest_out(dir / MANIFEST_NAME);
    if (!manifest_out) throw IoError("cannot write " + (dir / MANIFEST_NAME).string());
    manifest_out << manifest.dump(2) << '\n';
    manifest_out.close();
    if (!manifest_out) throw IoError("failed writing " + (dir / MANIFEST_NAME).string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest_path = dir / MANIFEST_NAME;
    std::ifstream manifest_in(manifest_path);
    if (!manifest_in) throw MissingArtifactError("checkpoint manifest not found: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest_in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "peftlad-checkpoint") {
        throw IoError(manifest_path.string() + " is not a checkpoint manifest");
    }
    if (manifest.value("precision", "") != "f32") {
        throw IoError("unsupported checkpoint precision '" + manifest.value("precision", "") + "'");
    }

    LoadedCheckpoint loaded;
    loaded.run_config = manifest.value("run_config", nlohmann::json::object());
    loaded.fingerprint = manifest.value("config_hash", "");

    ModelConfig model_cfg;
    PeftChoice peft_choice;
    model_state_from_json(manifest.at("model_state"), model_cfg, peft_choice);

    const auto vocab_path = dir / manifest.at("vocabulary").get<std::string>();
    std::ifstream vocab_in(vocab_path);
    if (!vocab_in) throw MissingArtifactError("checkpoint vocabulary not found: " + vocab_path.string());

    TrainedModel& model = loaded.model;
    model.vocab = Vocabulary::load(vocab_in);
    if (static_cast<int>(model.vocab.size()) != model_cfg.vocab_size) {
        throw IoError("checkpoint vocabulary has " + std::to_string(model.vocab.size()) +
                      " tokens but the manifest says " + std::to_string(model_cfg.vocab_size));
    }
    model.model_cfg = model_cfg;
    model.peft_choice = peft_choice;
    model.params = init_parameters<float>(model_cfg);
    model.peft = init_peft<float>(model_cfg, peft_choice);
    model.head = init_head<float>(model_cfg);

    const auto weights_path = dir / WEIGHTS_NAME;
    std::ifstream weights(weights_path, std::ios::binary);
    if (!weights) throw MissingArtifactError("checkpoint weights not found: " + weights_path.string());

    const auto& parameters = manifest.at("parameters");
    std::size_t index = 0;
    enumerate_all(model, [&](const std::string& name, Tensor<float>& tensor) {
        if (index >= parameters.size()) {
            throw IoError("checkpoint manifest lists too few parameters (stopped before '" + name + "')");
        }
        const auto& entry = parameters.at(index++);
        if (entry.at("name").get<std::string>() != name) {
            throw IoError("checkpoint parameter order mismatch: expected '" + name + "', manifest has '" +
                          entry.at("name").get<std::string>() + "'");
        }
        const auto count = entry.at("count").get<std::size_t>();
        if (count != tensor.size()) {
            throw IoError("checkpoint parameter '" + name + "' has " + std::to_string(count) +
                          " values, expected " + std::to_string(tensor.size()));
        }
        weights.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
        std::vector<float> values(count);
        weights.read(reinterpret_cast<char*>(values.data()),
                     static_cast<std::streamsize>(count * sizeof(float)));
        if (!weights) throw IoError("checkpoint weights truncated at parameter '" + name + "'");
        to_little_endian(values); // symmetric swap back on big-endian hosts
        tensor.mutable_values() = std::move(values);
    });
    if (index != parameters.size()) {
        throw IoError("checkpoint manifest lists more parameters than the model has");
    }
    return loaded;
}

} // namespace peftlad
