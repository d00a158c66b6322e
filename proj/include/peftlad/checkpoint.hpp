#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "peftlad/trainer.hpp"

namespace peftlad {

// On-disk layout: <dir>/manifest.json (parameter names, shapes, precision,
// byte offsets, config hash, vocabulary file name), <dir>/weights.bin
// (little-endian IEEE-754 32-bit values, row-major, in manifest order) and
// <dir>/vocab.json. Loading reproduces bit-identical predictions.
void save_checkpoint(const std::filesystem::path& dir, TrainedModel& model,
                     const nlohmann::json& run_config_json, const std::string& fingerprint);

struct LoadedCheckpoint {
    TrainedModel model;
    nlohmann::json run_config;
    std::string fingerprint;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace peftlad
