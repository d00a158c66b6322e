#include "peftlad/log_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <sstream>

#include "peftlad/errors.hpp"

namespace peftlad {

namespace {

constexpr char WILDCARD[] = "<*>";

std::vector<std::string> split_whitespace(const std::string& line) {
    std::vector<std::string> tokens;
    std::istringstream stream(line);
    std::string token;
    while (stream >> token) tokens.push_back(std::move(token));
    return tokens;
}

// Extracts the first HDFS block id (blk_ + optional minus + digits) from a
// line; plain scan instead of <regex> because this sits on the hot ingest path.
std::optional<std::string> find_block_id(const std::string& line) {
    const std::string needle = "blk_";
    std::size_t pos = line.find(needle);
    while (pos != std::string::npos) {
        std::size_t end = pos + needle.size();
        if (end < line.size() && line[end] == '-') ++end;
        std::size_t digits_end = end;
        while (digits_end < line.size() && std::isdigit(static_cast<unsigned char>(line[digits_end]))) {
            ++digits_end;
        }
        if (digits_end > end) return line.substr(pos, digits_end - pos);
        pos = line.find(needle, pos + 1);
    }
    return std::nullopt;
}

std::string mask_tokens(const std::vector<std::string>& tokens, std::size_t first) {
    std::string out;
    for (std::size_t i = first; i < tokens.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += is_parameter_token(tokens[i]) ? WILDCARD : tokens[i];
    }
    return out;
}

} // namespace

LogFormat parse_log_format(const std::string& name) {
    if (name == "hdfs") return LogFormat::hdfs;
    if (name == "labeled-lines") return LogFormat::labeled_lines;
    throw ConfigError("unknown dataset format '" + name + "' (expected hdfs or labeled-lines)");
}

std::string log_format_name(LogFormat format) {
    return format == LogFormat::hdfs ? "hdfs" : "labeled-lines";
}

std::string sanitize_utf8(const std::string& raw, std::size_t& invalid_bytes) {
    static const char replacement[] = "\xEF\xBF\xBD"; // U+FFFD
    std::string out;
    out.reserve(raw.size());
    std::size_t i = 0;
    while (i < raw.size()) {
        const unsigned char byte = static_cast<unsigned char>(raw[i]);
        std::size_t len;
        if (byte < 0x80)
            len = 1;
        else if ((byte & 0xE0) == 0xC0 && byte >= 0xC2)
            len = 2;
        else if ((byte & 0xF0) == 0xE0)
            len = 3;
        else if ((byte & 0xF8) == 0xF0 && byte <= 0xF4)
            len = 4;
        else {
            ++invalid_bytes;
            out += replacement;
            ++i;
            continue;
        }
        if (i + len > raw.size()) {
            ++invalid_bytes;
            out += replacement;
            ++i;
            continue;
        }
        bool valid = true;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(raw[i + k]) & 0xC0) != 0x80) {
                valid = false;
                break;
            }
        }
        if (!valid) {
            ++invalid_bytes;
            out += replacement;
            ++i;
            continue;
        }
        out.append(raw, i, len);
        i += len;
    }
    return out;
}

bool is_parameter_token(const std::string& token) {
    if (token.rfind("0x", 0) == 0 || token.rfind("0X", 0) == 0) return true;
    for (char c : token) {
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '/') return true;
    }
    return false;
}

std::optional<LogEvent> parse_line(const std::string& raw, LogFormat format, std::size_t line_index) {
    const std::vector<std::string> tokens = split_whitespace(raw);
    if (tokens.empty()) return std::nullopt;

    LogEvent event;
    event.line_index = line_index;
    if (format == LogFormat::labeled_lines) {
        // First field is the alert tag; it is consumed, never part of the
        // template, so the label cannot leak into the features.
        event.label = tokens[0] == "-" ? 0 : 1;
        event.template_text = mask_tokens(tokens, 1);
    } else {
        auto key = find_block_id(raw);
        if (!key) return std::nullopt;
        event.session_key = std::move(*key);
        event.template_text = mask_tokens(tokens, 0);
    }
    if (event.template_text.empty()) return std::nullopt;
    return event;
}

std::vector<LogEvent> parse_lines(std::istream& input, LogFormat format, ParseStats& stats) {
    std::vector<LogEvent> events;
    std::string raw;
    while (std::getline(input, raw)) {
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        ++stats.total_lines;
        const std::string clean = sanitize_utf8(raw, stats.invalid_utf8_bytes);
        auto event = parse_line(clean, format, stats.total_lines - 1);
        if (!event) {
            ++stats.rejected_lines;
            continue;
        }
        events.push_back(std::move(*event));
    }
    return events;
}

std::unordered_map<std::string, int> load_session_labels(std::istream& input) {
    std::unordered_map<std::string, int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(input, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw InputError("session label file line " + std::to_string(line_no) + " has no comma: " + line);
        }
        std::string key = line.substr(0, comma);
        std::string value = line.substr(comma + 1);
        if (line_no == 1 && key == "BlockId") continue; // header
        int label;
        if (value == "Normal")
            label = 0;
        else if (value == "Anomaly")
            label = 1;
        else
            throw InputError("session label file line " + std::to_string(line_no) + ": unknown label '" +
                             value + "' (expected Normal or Anomaly)");
        labels[std::move(key)] = label;
    }
    return labels;
}

std::vector<LogSequence> group_sessions(const std::vector<LogEvent>& events,
                                        const std::unordered_map<std::string, int>* session_labels) {
    std::vector<LogSequence> sequences;
    std::unordered_map<std::string, std::size_t> index_of;
    for (const LogEvent& event : events) {
        if (!event.session_key) {
            throw InputError("event at line " + std::to_string(event.line_index) +
                             " has no session key; session grouping needs one per event");
        }
        auto [it, inserted] = index_of.try_emplace(*event.session_key, sequences.size());
        if (inserted) {
            LogSequence seq;
            seq.order_key = event.line_index;
            sequences.push_back(std::move(seq));
        }
        sequences[it->second].events.push_back(event);
    }
    for (auto& [key, index] : index_of) {
        LogSequence& seq = sequences[index];
        if (session_labels) {
            auto found = session_labels->find(key);
            seq.label = found != session_labels->end() ? found->second : 0;
        } else {
            for (const LogEvent& event : seq.events) {
                if (event.label) {
                    seq.label = 1;
                    break;
                }
            }
        }
    }
    return sequences;
}

std::vector<LogSequence> group_windows(const std::vector<LogEvent>& events, std::size_t window,
                                       std::size_t stride) {
    if (window == 0) throw ConfigError("window size must be at least 1");
    if (stride == 0) stride = window; // tumbling
    std::vector<LogSequence> sequences;
    for (std::size_t start = 0; start < events.size(); start += stride) {
        const std::size_t end = std::min(start + window, events.size());
        LogSequence seq;
        seq.order_key = events[start].line_index;
        seq.events.assign(events.begin() + static_cast<std::ptrdiff_t>(start),
                          events.begin() + static_cast<std::ptrdiff_t>(end));
        for (const LogEvent& event : seq.events) {
            if (event.label) {
                seq.label = 1;
                break;
            }
        }
        sequences.push_back(std::move(seq));
        if (end == events.size()) break;
    }
    return sequences;
}

LabeledSplit chronological_split(std::vector<LogSequence> sequences, double train_ratio) {
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
        throw ConfigError("train ratio must lie in (0,1), got " + std::to_string(train_ratio));
    }
    for (std::size_t i = 1; i < sequences.size(); ++i) {
        if (sequences[i - 1].order_key > sequences[i].order_key) {
            throw InputError("sequences must be ordered by order_key before splitting (violated at index " +
                             std::to_string(i) + ")");
        }
    }
    const std::size_t n = sequences.size();
    const std::size_t n_train = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(n)));
    if (n_train == 0 || n_train == n) {
        throw ConfigError("train ratio " + std::to_string(train_ratio) + " leaves an empty partition for " +
                          std::to_string(n) + " sequences");
    }
    LabeledSplit split;
    split.train.assign(sequences.begin(), sequences.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.assign(sequences.begin() + static_cast<std::ptrdiff_t>(n_train), sequences.end());
    return split;
}

std::string concat_sequence_text(const LogSequence& sequence) {
    std::string out;
    for (const LogEvent& event : sequence.events) {
        if (!out.empty()) out += ' ';
        out += event.template_text;
    }
    return out;
}

} // namespace peftlad
