#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "peftlad/log_pipeline.hpp"
#include "peftlad/metrics.hpp"
#include "peftlad/run_config.hpp"

namespace peftlad {

// word -> up to three synonyms, the vocabulary-drift source for the
// unstable-log protocol. Loaded from CSV rows "word,syn1[,syn2[,syn3]]".
struct SynonymLexicon {
    std::map<std::string, std::vector<std::string>> synonyms;
};

SynonymLexicon load_lexicon(std::istream& in);

// The ten most frequent purely-alphabetic tokens outside the stoplist
// (wildcards excluded), ties broken lexicographically.
std::vector<std::string> pick_action_words(const std::vector<std::string>& train_texts,
                                           const std::set<std::string>& stoplist);

// Perturbs exactly round(rate * |test|) sequences, chosen uniformly without
// replacement from the seed; inside each, every occurrence of every action
// word becomes a uniformly drawn synonym. Size and labels are conserved.
std::vector<LogSequence> inject_unstable(const std::vector<LogSequence>& test, const SynonymLexicon& lexicon,
                                         const std::vector<std::string>& action_words, double rate,
                                         std::uint64_t seed);

struct ExperimentRow {
    std::string axis;
    bool ok = true;
    ConfusionCounts counts;
    Metrics metrics;
    double epoch_seconds = 0.0; // mean compute time per training epoch
    std::uint64_t seed = 0;
    bool degenerate = false;
    std::string error;                        // set when ok is false
    std::optional<double> f1_change_pct;      // injection rows: relative change vs rate 0
    std::optional<std::uint64_t> test_digest; // ratio sweep: digest of the test partition
    std::optional<std::uint64_t> init_checksum;
};

struct ExperimentReport {
    std::string protocol;
    std::string fingerprint;
    std::vector<ExperimentRow> rows;
};

// CSV columns: axis,tp,fp,fn,tn,precision,recall,f1,epoch_seconds,seed.
// Failed points keep their axis and seed with the measurement cells empty.
// The JSON mirror carries every row field plus the config fingerprint.
void write_report_csv(const ExperimentReport& report, std::ostream& out);
void write_report_json(const ExperimentReport& report, std::ostream& out);
void save_report(const ExperimentReport& report, const std::filesystem::path& dir, const std::string& stem);

inline const std::vector<int>& default_rank_sweep() {
    static const std::vector<int> ranks = {1, 2, 4, 8, 16, 32, 64, 128};
    return ranks;
}

inline const std::vector<double>& default_ratio_sweep() {
    static const std::vector<double> ratios = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    return ratios;
}

inline const std::vector<double>& default_injection_rates() {
    static const std::vector<double> rates = {0.01, 0.02, 0.03, 0.05, 0.10, 0.20, 0.30};
    return rates;
}

// One fresh train+eval per rank over the configured adapter kind; a failing
// point is recorded and the sweep continues.
ExperimentReport sweep_rank(const RunConfig& base, const std::vector<LogSequence>& ordered,
                            const std::vector<int>& ranks, int jobs = 1);

// Test partition pinned to the final 20% once; the training prefix is re-cut
// from the front per ratio. Ratios above 0.8 would overlap the test set.
ExperimentReport sweep_train_ratio(const RunConfig& base, const std::vector<LogSequence>& ordered,
                                   const std::vector<double>& ratios, int jobs = 1);

// Trains once, then evaluates the unperturbed test set (the rate-0 baseline
// row) followed by each requested injection rate.
ExperimentReport run_injection(const RunConfig& base, const std::vector<LogSequence>& train,
                               const std::vector<LogSequence>& test, const SynonymLexicon& lexicon,
                               const std::vector<std::string>& action_words, const std::vector<double>& rates);

struct NamedDataset {
    std::string name;
    std::vector<LogSequence> ordered; // full chronological sequence list
};

// Trains once on the training dataset's train split, then scores every test
// dataset's test split through the training vocabulary. Constant predictions
// are flagged degenerate.
ExperimentReport cross_eval(const RunConfig& base, const NamedDataset& train_dataset,
                            const std::vector<NamedDataset>& test_datasets);

} // namespace peftlad
