#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "peftlad/log_pipeline.hpp"

namespace peftlad {

// A prepared dataset on disk: manifest.json plus one JSONL file per split,
// each line {"label": 0|1, "order_key": n, "events": ["template", ...]}.
struct DatasetBundle {
    nlohmann::json manifest;
    std::vector<LogSequence> train;
    std::vector<LogSequence> test;
};

void save_bundle(const std::filesystem::path& dir, const LabeledSplit& split, const nlohmann::json& manifest);
DatasetBundle load_bundle(const std::filesystem::path& dir);

// train and test re-joined in chronological order (the exact sequence list
// the split was cut from), for protocols that re-cut their own partitions.
std::vector<LogSequence> combined_sequences(const DatasetBundle& bundle);

// Canonical byte serialization of a sequence list; equal vectors produce
// equal bytes, which backs the digest and byte-identity checks.
std::string serialize_sequences(const std::vector<LogSequence>& sequences);

} // namespace peftlad
