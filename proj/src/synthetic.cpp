#include "peftlad/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "peftlad/errors.hpp"
#include "peftlad/rng.hpp"

namespace peftlad {

const std::vector<std::string>& synthetic_action_words() {
    static const std::vector<std::string> words = {"connect", "disconnect", "open",   "close",  "read",
                                                   "write",   "send",       "receive", "update", "verify"};
    return words;
}

std::vector<LogSequence> generate_windows(const SyntheticSpec& spec) {
    if (spec.windows == 0 || spec.window == 0) {
        throw ConfigError("synthetic corpus needs at least one window of at least one event");
    }
    if (spec.anomaly_fraction < 0.0 || spec.anomaly_fraction > 1.0) {
        throw ConfigError("anomaly fraction must lie in [0,1], got " + std::to_string(spec.anomaly_fraction));
    }
    const auto anomalous_count =
        static_cast<std::size_t>(std::llround(spec.anomaly_fraction * static_cast<double>(spec.windows)));

    // Pick which windows carry faults: partial Fisher-Yates over the window
    // indices, seeded independently of the event stream.
    Rng pick_rng(derive_seed(spec.seed, "synthetic-pick"));
    std::vector<std::size_t> indices(spec.windows);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    for (std::size_t i = 0; i < anomalous_count; ++i) {
        const std::size_t j = i + pick_rng.uniform_index(indices.size() - i);
        std::swap(indices[i], indices[j]);
    }
    std::vector<char> is_anomalous(spec.windows, 0);
    for (std::size_t i = 0; i < anomalous_count; ++i) is_anomalous[indices[i]] = 1;

    Rng event_rng(derive_seed(spec.seed, "synthetic-events"));
    const auto& actions = synthetic_action_words();
    std::vector<LogSequence> sequences;
    sequences.reserve(spec.windows);
    std::size_t line_index = 0;
    for (std::size_t w = 0; w < spec.windows; ++w) {
        LogSequence seq;
        seq.order_key = line_index;
        seq.events.reserve(spec.window);
        for (std::size_t e = 0; e < spec.window; ++e) {
            LogEvent event;
            event.line_index = line_index++;
            // Zipf-flavored action choice keeps the frequency ranking strict.
            const std::size_t first = event_rng.uniform_index(actions.size());
            const std::size_t pick = std::min(first, event_rng.uniform_index(actions.size()));
            event.template_text = actions[pick];
            if (event_rng.uniform() < 0.3) event.template_text += " <*>";
            seq.events.push_back(std::move(event));
        }
        if (is_anomalous[w]) {
            // Faults arrive as a burst: dense enough that a window-level pooled
            // representation separates the classes from the action-mix noise.
            const std::size_t lo = std::max<std::size_t>(1, spec.window / 8);
            const std::size_t hi = std::max<std::size_t>(lo, spec.window / 4);
            const std::size_t faults = lo + event_rng.uniform_index(hi - lo + 1);
            for (std::size_t f = 0; f < faults; ++f) {
                const std::size_t slot = event_rng.uniform_index(spec.window);
                seq.events[slot].template_text = "fault <*>";
                seq.events[slot].label = 1;
            }
            seq.label = 1;
        }
        sequences.push_back(std::move(seq));
    }
    return sequences;
}

void write_labeled_lines(const std::vector<LogSequence>& sequences, std::ostream& out) {
    for (const LogSequence& seq : sequences) {
        for (const LogEvent& event : seq.events) {
            out << (event.label ? "FAULT" : "-");
            // Fill each wildcard with a digit token so re-parsing masks it
            // back to the identical template.
            const std::string& tpl = event.template_text;
            std::size_t pos = 0;
            std::string line;
            while (true) {
                const std::size_t hit = tpl.find("<*>", pos);
                if (hit == std::string::npos) {
                    line += tpl.substr(pos);
                    break;
                }
                line += tpl.substr(pos, hit - pos);
                line += std::to_string(1000 + event.line_index % 9000);
                pos = hit + 3;
            }
            out << ' ' << line << '\n';
        }
    }
}

} // namespace peftlad
