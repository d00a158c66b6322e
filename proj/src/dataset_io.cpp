#include "peftlad/dataset_io.hpp"

#include <fstream>

#include "peftlad/errors.hpp"

namespace peftlad {

namespace {

void write_split(const std::filesystem::path& path, const std::vector<LogSequence>& sequences) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const LogSequence& seq : sequences) {
        nlohmann::json row;
        row["label"] = seq.label;
        row["order_key"] = seq.order_key;
        nlohmann::json events = nlohmann::json::array();
        for (const LogEvent& event : seq.events) events.push_back(event.template_text);
        row["events"] = events;
        out << row.dump() << '\n';
    }
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<LogSequence> read_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("dataset split not found: " + path.string());
    std::vector<LogSequence> sequences;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + " is not valid JSON: " + e.what());
        }
        LogSequence seq;
        seq.label = row.at("label").get<int>();
        seq.order_key = row.at("order_key").get<std::size_t>();
        std::size_t position = 0;
        for (const auto& text : row.at("events")) {
            LogEvent event;
            event.template_text = text.get<std::string>();
            event.line_index = seq.order_key + position++;
            event.label = seq.label; // sequence-level labels only survive the roundtrip
            seq.events.push_back(std::move(event));
        }
        sequences.push_back(std::move(seq));
    }
    return sequences;
}

} // namespace

void save_bundle(const std::filesystem::path& dir, const LabeledSplit& split, const nlohmann::json& manifest) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create bundle directory " + dir.string() + ": " + ec.message());
    std::ofstream manifest_out(dir / "manifest.json");
    if (!manifest_out) throw IoError("cannot write " + (dir / "manifest.json").string());
    manifest_out << manifest.dump(2) << '\n';
    manifest_out.close();
    if (!manifest_out) throw IoError("failed writing " + (dir / "manifest.json").string());
    write_split(dir / "train.jsonl", split.train);
    write_split(dir / "test.jsonl", split.test);
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
    DatasetBundle bundle;
    const auto manifest_path = dir / "manifest.json";
    std::ifstream manifest_in(manifest_path);
    if (!manifest_in) throw MissingArtifactError("dataset manifest not found: " + manifest_path.string());
    try {
        manifest_in >> bundle.manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("dataset manifest is not valid JSON: " + std::string(e.what()));
    }
    bundle.train = read_split(dir / "train.jsonl");
    bundle.test = read_split(dir / "test.jsonl");
    return bundle;
}

std::vector<LogSequence> combined_sequences(const DatasetBundle& bundle) {
    std::vector<LogSequence> all;
    all.reserve(bundle.train.size() + bundle.test.size());
    all.insert(all.end(), bundle.train.begin(), bundle.train.end());
    all.insert(all.end(), bundle.test.begin(), bundle.test.end());
    return all;
}

std::string serialize_sequences(const std::vector<LogSequence>& sequences) {
    std::string out;
    for (const LogSequence& seq : sequences) {
        out += std::to_string(seq.label);
        out += '|';
        out += std::to_string(seq.order_key);
        for (const LogEvent& event : seq.events) {
            out += '|';
            out += event.template_text;
        }
        out += '\n';
    }
    return out;
}

} // namespace peftlad
