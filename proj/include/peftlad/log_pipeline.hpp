#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace peftlad {

// One parsed log line: the message reduced to a template with parameter-like
// tokens masked as <*>, plus whatever the format could tell us about it.
struct LogEvent {
    std::string template_text;
    std::size_t line_index = 0;
    int label = 0; // 0 normal, 1 anomalous (line-level formats only)
    std::optional<std::string> session_key;
};

// An ordered group of events carrying one binary label. order_key is the
// smallest member line index and defines chronology for splitting.
struct LogSequence {
    std::vector<LogEvent> events;
    int label = 0;
    std::size_t order_key = 0;
};

struct LabeledSplit {
    std::vector<LogSequence> train;
    std::vector<LogSequence> test;
};

enum class LogFormat { hdfs, labeled_lines };

LogFormat parse_log_format(const std::string& name); // "hdfs" | "labeled-lines"
std::string log_format_name(LogFormat format);

struct ParseStats {
    std::size_t total_lines = 0;
    std::size_t rejected_lines = 0;
    std::size_t invalid_utf8_bytes = 0;
};

// Replaces bytes that do not form valid UTF-8 with U+FFFD, counting them.
std::string sanitize_utf8(const std::string& raw, std::size_t& invalid_bytes);

// True when a whitespace token looks like a parameter (digits, hex, IPs,
// paths) and must be masked in the template.
bool is_parameter_token(const std::string& token);

// Parses one line; returns nothing for lines the format cannot accept
// (empty, no message body, no session key where one is required). Callers
// count such rejections via ParseStats, never drop them silently.
std::optional<LogEvent> parse_line(const std::string& raw, LogFormat format, std::size_t line_index);

// Reads a whole stream, sanitizing encoding and counting rejected lines.
std::vector<LogEvent> parse_lines(std::istream& input, LogFormat format, ParseStats& stats);

// Session label table for session-keyed datasets: CSV "BlockId,Label" with
// Label in {Normal, Anomaly}. A header row is recognized and skipped.
std::unordered_map<std::string, int> load_session_labels(std::istream& input);

// One sequence per distinct session key, ordered by first appearance.
// With a label table, each sequence takes its table entry (absent -> normal);
// without one, any anomalous member marks the sequence anomalous.
std::vector<LogSequence> group_sessions(const std::vector<LogEvent>& events,
                                        const std::unordered_map<std::string, int>* session_labels = nullptr);

// Fixed windows over file order. stride 0 means stride = window (tumbling,
// the default); the final partial window is kept. Label is any-anomalous.
std::vector<LogSequence> group_windows(const std::vector<LogEvent>& events, std::size_t window = 50,
                                       std::size_t stride = 0);

// First floor(ratio * n) sequences train, remainder test. Requires inputs
// already ordered by order_key.
LabeledSplit chronological_split(std::vector<LogSequence> sequences, double train_ratio);

// Templates joined with single spaces, ready for tokenization.
std::string concat_sequence_text(const LogSequence& sequence);

} // namespace peftlad
