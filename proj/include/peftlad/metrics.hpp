#pragma once

#include <cstdint>
#include <vector>

namespace peftlad {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
};

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Anomaly detection scoring: the anomalous class is positive. Zero
// denominators yield zero rather than NaN, so a degenerate predictor that
// never fires scores 0 across the board instead of poisoning downstream CSVs.
Metrics metrics_from_counts(const ConfusionCounts& counts);

// Tallies counts from aligned per-sequence label vectors (true, then
// predicted; nonzero means anomalous) and scores them.
ConfusionCounts count_confusion(const std::vector<int>& truth, const std::vector<int>& predicted);
Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted);

} // namespace peftlad
