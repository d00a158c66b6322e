#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "peftlad/log_pipeline.hpp"

namespace peftlad {

// Deterministic corpus of fixed windows over a small service-log vocabulary.
// Exactly round(anomaly_fraction * windows) windows receive one to three
// planted fault events; everything else cycles through ten routine actions,
// sometimes with a masked numeric argument.
struct SyntheticSpec {
    std::size_t windows = 5000;
    std::size_t window = 50;
    double anomaly_fraction = 0.05;
    std::uint64_t seed = 42;
};

// The ten routine action words, most frequent first.
const std::vector<std::string>& synthetic_action_words();

std::vector<LogSequence> generate_windows(const SyntheticSpec& spec);

// Re-emits the corpus as raw labeled-lines text ("-" or "FAULT" first field,
// wildcard slots filled with digits), so that parsing it back reproduces the
// same templates and labels.
void write_labeled_lines(const std::vector<LogSequence>& sequences, std::ostream& out);

} // namespace peftlad
