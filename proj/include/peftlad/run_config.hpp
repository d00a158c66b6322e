#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "peftlad/model.hpp"
#include "peftlad/peft.hpp"
#include "peftlad/trainer.hpp"

namespace peftlad {

struct DatasetConfig {
    std::string path;
    std::string format = "labeled-lines"; // hdfs | labeled-lines
    std::string labels;                   // session label CSV (hdfs only)
    std::string grouping = "window";      // session | window
    int window = 50;
    int stride = 0; // 0 means stride = window
    double train_ratio = 0.8;
};

// The one aggregate every command works from. A single master seed feeds the
// model-init and training streams so (seed, data, config) pin the run.
struct RunConfig {
    DatasetConfig dataset;
    ModelConfig model;
    PeftChoice peft;
    TrainConfig train;
    std::uint64_t seed = 42;
    std::string out = "runs/default";

    void apply_seed(); // pushes the master seed into model and train configs
    void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& doc);

// Model + adapter subset of the config, enough to rebuild a TrainedModel
// from a checkpoint manifest.
nlohmann::json model_state_to_json(const ModelConfig& model, const PeftChoice& peft);
void model_state_from_json(const nlohmann::json& doc, ModelConfig& model, PeftChoice& peft);

// Stable 16-hex-digit digest of the fully resolved config; embedded in every
// artifact a run produces.
std::string config_fingerprint(const RunConfig& cfg);

} // namespace peftlad
