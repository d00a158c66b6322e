#include "peftlad/metrics.hpp"

#include "peftlad/errors.hpp"

namespace peftlad {

Metrics metrics_from_counts(const ConfusionCounts& counts) {
    Metrics m;
    const double tp = static_cast<double>(counts.tp);
    const double fp = static_cast<double>(counts.fp);
    const double fn = static_cast<double>(counts.fn);
    m.precision = (counts.tp + counts.fp) ? tp / (tp + fp) : 0.0;
    m.recall = (counts.tp + counts.fn) ? tp / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall > 0.0) ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

ConfusionCounts count_confusion(const std::vector<int>& truth, const std::vector<int>& predicted) {
    if (truth.size() != predicted.size()) {
        throw InputError("count_confusion: " + std::to_string(truth.size()) + " true labels vs " +
                         std::to_string(predicted.size()) + " predictions");
    }
    ConfusionCounts counts;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool pos = truth[i] != 0;
        const bool hit = predicted[i] != 0;
        if (pos && hit)
            ++counts.tp;
        else if (!pos && hit)
            ++counts.fp;
        else if (pos && !hit)
            ++counts.fn;
        else
            ++counts.tn;
    }
    return counts;
}

Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted) {
    return metrics_from_counts(count_confusion(truth, predicted));
}

} // namespace peftlad
