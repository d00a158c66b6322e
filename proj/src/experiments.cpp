#include "peftlad/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "peftlad/dataset_io.hpp"
#include "peftlad/errors.hpp"
#include "peftlad/rng.hpp"
#include "peftlad/trainer.hpp"

namespace peftlad {

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream stream(line);
    while (std::getline(stream, field, ',')) fields.push_back(field);
    return fields;
}

std::string format_double(double value) {
    std::ostringstream out;
    out << value; // defaultfloat, shortest faithful-ish form for axis labels
    return out.str();
}

std::string format_fixed(double value, int digits) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(digits);
    out << value;
    return out.str();
}

double mean_epoch_compute_seconds(const std::vector<EpochRecord>& epochs) {
    if (epochs.empty()) return 0.0;
    double total = 0.0;
    for (const EpochRecord& record : epochs) total += record.compute_seconds;
    return total / static_cast<double>(epochs.size());
}

// Runs fn(i) for every point index, at most `jobs` at a time. Each point is
// an independent training run; results land in preallocated slots so the
// report order never depends on completion order.
void run_points(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (std::thread& t : pool) t.join();
}

// Shared per-point body: train on `train`, evaluate on `test`, fill the row.
void train_eval_point(const RunConfig& cfg, const std::vector<LogSequence>& train,
                      const std::vector<LogSequence>& test, ExperimentRow& row) {
    try {
        cfg.validate();
        TrainOutcome outcome = run_training(cfg.model, cfg.peft, cfg.train, train);
        EvalResult eval = evaluate_model(outcome.model, test);
        row.counts = eval.counts;
        row.metrics = eval.metrics;
        row.degenerate = eval.degenerate;
        row.epoch_seconds = mean_epoch_compute_seconds(outcome.epochs);
        row.init_checksum = outcome.initial_param_checksum;
        row.ok = true;
    } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
    }
}

} // namespace

SynonymLexicon load_lexicon(std::istream& in) {
    SynonymLexicon lexicon;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields = split_csv_row(line);
        if (fields.size() < 2) {
            throw ConfigError("lexicon line " + std::to_string(line_no) +
                              " needs a word and at least one synonym: " + line);
        }
        const std::string& word = fields[0];
        if (word.empty()) throw ConfigError("lexicon line " + std::to_string(line_no) + " has an empty word");
        std::vector<std::string> synonyms;
        for (std::size_t i = 1; i < fields.size() && synonyms.size() < 3; ++i) {
            if (fields[i].empty()) {
                throw ConfigError("lexicon line " + std::to_string(line_no) + " has an empty synonym");
            }
            if (fields[i] == word) {
                throw ConfigError("lexicon line " + std::to_string(line_no) + ": synonym equals the word '" +
                                  word + "'");
            }
            synonyms.push_back(fields[i]);
        }
        lexicon.synonyms[word] = std::move(synonyms);
    }
    return lexicon;
}

std::vector<std::string> pick_action_words(const std::vector<std::string>& train_texts,
                                           const std::set<std::string>& stoplist) {
    std::map<std::string, std::size_t> counts;
    std::istringstream stream;
    std::string token;
    for (const std::string& text : train_texts) {
        stream.clear();
        stream.str(text);
        while (stream >> token) {
            const bool alphabetic = !token.empty() &&
                                    std::all_of(token.begin(), token.end(), [](unsigned char c) {
                                        return std::isalpha(c) != 0;
                                    });
            if (!alphabetic || token == "<*>" || stoplist.count(token)) continue;
            ++counts[token];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() < 10) {
        throw ConfigError("only " + std::to_string(ranked.size()) +
                          " action-word candidates in the corpus; pass an explicit ten-word list");
    }
    std::vector<std::string> words;
    words.reserve(10);
    for (std::size_t i = 0; i < 10; ++i) words.push_back(ranked[i].first);
    return words;
}

std::vector<LogSequence> inject_unstable(const std::vector<LogSequence>& test, const SynonymLexicon& lexicon,
                                         const std::vector<std::string>& action_words, double rate,
                                         std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) {
        throw ConfigError("injection rate must lie in [0,1], got " + std::to_string(rate));
    }
    if (action_words.size() != 10) {
        throw ConfigError("injection needs exactly 10 action words, got " +
                          std::to_string(action_words.size()));
    }
    for (const std::string& word : action_words) {
        if (!lexicon.synonyms.count(word)) {
            throw ConfigError("action word '" + word + "' is missing from the synonym lexicon");
        }
    }

    std::vector<LogSequence> perturbed = test;
    const auto target = static_cast<std::size_t>(std::llround(rate * static_cast<double>(test.size())));
    if (target == 0) return perturbed;

    // Uniform selection without replacement via partial Fisher-Yates.
    Rng select_rng(derive_seed(seed, "inject-select"));
    std::vector<std::size_t> indices(test.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t j = i + select_rng.uniform_index(indices.size() - i);
        std::swap(indices[i], indices[j]);
    }

    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t seq_index = indices[i];
        // Per-sequence substitution stream, so the outcome for a sequence
        // does not depend on which other sequences were selected.
        Rng word_rng(derive_seed(seed, "inject-seq-" + std::to_string(seq_index)));
        for (LogEvent& event : perturbed[seq_index].events) {
            std::istringstream stream(event.template_text);
            std::string token;
            std::string rebuilt;
            bool changed = false;
            while (stream >> token) {
                for (const std::string& word : action_words) {
                    if (token == word) {
                        const auto& synonyms = lexicon.synonyms.at(word);
                        token = synonyms[word_rng.uniform_index(synonyms.size())];
                        changed = true;
                        break;
                    }
                }
                if (!rebuilt.empty()) rebuilt += ' ';
                rebuilt += token;
            }
            if (changed) event.template_text = std::move(rebuilt);
        }
    }
    return perturbed;
}

void write_report_csv(const ExperimentReport& report, std::ostream& out) {
    out << "axis,tp,fp,fn,tn,precision,recall,f1,epoch_seconds,seed\n";
    for (const ExperimentRow& row : report.rows) {
        out << row.axis << ',';
        if (row.ok) {
            out << row.counts.tp << ',' << row.counts.fp << ',' << row.counts.fn << ',' << row.counts.tn
                << ',' << format_fixed(row.metrics.precision, 6) << ',' << format_fixed(row.metrics.recall, 6)
                << ',' << format_fixed(row.metrics.f1, 6) << ',' << format_fixed(row.epoch_seconds, 6);
        } else {
            out << ",,,,,,,";
        }
        out << ',' << row.seed << '\n';
    }
}

void write_report_json(const ExperimentReport& report, std::ostream& out) {
    nlohmann::json doc;
    doc["protocol"] = report.protocol;
    doc["config_fingerprint"] = report.fingerprint;
    nlohmann::json rows = nlohmann::json::array();
    for (const ExperimentRow& row : report.rows) {
        nlohmann::json r;
        r["axis"] = row.axis;
        r["ok"] = row.ok;
        r["seed"] = row.seed;
        if (row.ok) {
            r["tp"] = row.counts.tp;
            r["fp"] = row.counts.fp;
            r["fn"] = row.counts.fn;
            r["tn"] = row.counts.tn;
            r["precision"] = row.metrics.precision;
            r["recall"] = row.metrics.recall;
            r["f1"] = row.metrics.f1;
            r["epoch_seconds"] = row.epoch_seconds;
            r["degenerate"] = row.degenerate;
            if (row.f1_change_pct) r["f1_change_pct"] = *row.f1_change_pct;
            if (row.test_digest) r["test_digest"] = *row.test_digest;
            if (row.init_checksum) r["init_param_checksum"] = *row.init_checksum;
        } else {
            r["error"] = row.error;
        }
        rows.push_back(r);
    }
    doc["rows"] = rows;
    out << doc.dump(2) << '\n';
}

void save_report(const ExperimentReport& report, const std::filesystem::path& dir, const std::string& stem) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    std::ofstream csv(dir / (stem + ".csv"), std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (dir / (stem + ".csv")).string());
    write_report_csv(report, csv);
    csv.close();
    if (!csv) throw IoError("failed writing " + (dir / (stem + ".csv")).string());
    std::ofstream json_out(dir / (stem + ".json"), std::ios::trunc);
    if (!json_out) throw IoError("cannot write " + (dir / (stem + ".json")).string());
    write_report_json(report, json_out);
    json_out.close();
    if (!json_out) throw IoError("failed writing " + (dir / (stem + ".json")).string());
}

ExperimentReport sweep_rank(const RunConfig& base, const std::vector<LogSequence>& ordered,
                            const std::vector<int>& ranks, int jobs) {
    if (ranks.empty()) throw ConfigError("rank sweep needs at least one rank");
    if (!std::is_sorted(ranks.begin(), ranks.end())) {
        throw ConfigError("rank sweep expects ranks in ascending order");
    }
    ExperimentReport report;
    report.protocol = "rank-sweep";
    report.fingerprint = config_fingerprint(base);
    report.rows.resize(ranks.size());

    const LabeledSplit split = chronological_split(ordered, base.dataset.train_ratio);
    run_points(ranks.size(), jobs, [&](std::size_t i) {
        const int rank = ranks[i];
        ExperimentRow& row = report.rows[i];
        row.axis = std::to_string(rank);
        RunConfig cfg = base;
        cfg.seed = derive_seed(base.seed, "rank-" + std::to_string(rank));
        cfg.apply_seed();
        if (cfg.peft.kind == PeftKind::lora) {
            cfg.peft.lora.rank = rank;
        } else if (cfg.peft.kind == PeftKind::reft) {
            cfg.peft.reft.rank = rank;
        } else {
            row.ok = false;
            row.error = "rank sweep needs an adapter kind of lora or reft";
            row.seed = cfg.seed;
            return;
        }
        row.seed = cfg.seed;
        train_eval_point(cfg, split.train, split.test, row);
    });
    return report;
}

ExperimentReport sweep_train_ratio(const RunConfig& base, const std::vector<LogSequence>& ordered,
                                   const std::vector<double>& ratios, int jobs) {
    if (ratios.empty()) throw ConfigError("ratio sweep needs at least one ratio");
    for (double ratio : ratios) {
        if (!(ratio > 0.0) || ratio > 0.8 + 1e-12) {
            throw ConfigError("training ratio " + format_double(ratio) +
                              " outside (0, 0.8]; larger ratios would overlap the fixed test partition");
        }
    }
    const std::size_t n = ordered.size();
    const auto train_80 = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(n)));
    if (train_80 == 0 || train_80 == n) {
        throw ConfigError("corpus of " + std::to_string(n) + " sequences cannot fix a final-20% test split");
    }
    const std::vector<LogSequence> test(ordered.begin() + static_cast<std::ptrdiff_t>(train_80),
                                        ordered.end());
    const std::uint64_t test_digest = fnv1a64(serialize_sequences(test));

    ExperimentReport report;
    report.protocol = "ratio-sweep";
    report.fingerprint = config_fingerprint(base);
    report.rows.resize(ratios.size());
    run_points(ratios.size(), jobs, [&](std::size_t i) {
        const double ratio = ratios[i];
        ExperimentRow& row = report.rows[i];
        row.axis = format_double(ratio);
        RunConfig cfg = base;
        cfg.seed = derive_seed(base.seed, "ratio-" + format_double(ratio));
        cfg.apply_seed();
        row.seed = cfg.seed;
        const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
        if (n_train == 0) {
            row.ok = false;
            row.error = "ratio " + format_double(ratio) + " leaves an empty training prefix";
            return;
        }
        const std::vector<LogSequence> train(ordered.begin(),
                                             ordered.begin() + static_cast<std::ptrdiff_t>(n_train));
        train_eval_point(cfg, train, test, row);
        row.test_digest = test_digest;
    });
    return report;
}

ExperimentReport run_injection(const RunConfig& base, const std::vector<LogSequence>& train,
                               const std::vector<LogSequence>& test, const SynonymLexicon& lexicon,
                               const std::vector<std::string>& action_words,
                               const std::vector<double>& rates) {
    for (double rate : rates) {
        if (rate < 0.0 || rate > 1.0) {
            throw ConfigError("injection rate must lie in [0,1], got " + format_double(rate));
        }
    }
    ExperimentReport report;
    report.protocol = "unstable-injection";
    report.fingerprint = config_fingerprint(base);

    RunConfig cfg = base;
    cfg.seed = derive_seed(base.seed, "inject-train");
    cfg.apply_seed();
    cfg.validate();
    TrainOutcome outcome = run_training(cfg.model, cfg.peft, cfg.train, train);
    const double epoch_seconds = mean_epoch_compute_seconds(outcome.epochs);

    auto eval_row = [&](double rate, const std::vector<LogSequence>& sequences) {
        ExperimentRow row;
        row.axis = format_double(rate);
        row.seed = rate == 0.0 ? cfg.seed : derive_seed(base.seed, "rate-" + format_double(rate));
        EvalResult eval = evaluate_model(outcome.model, sequences);
        row.counts = eval.counts;
        row.metrics = eval.metrics;
        row.degenerate = eval.degenerate;
        row.epoch_seconds = epoch_seconds;
        row.init_checksum = outcome.initial_param_checksum;
        return row;
    };

    // Rate-0 baseline first; the relative-change column hangs off it.
    ExperimentRow baseline = eval_row(0.0, test);
    const double f1_base = baseline.metrics.f1;
    report.rows.push_back(std::move(baseline));
    for (double rate : rates) {
        const std::uint64_t rate_seed = derive_seed(base.seed, "rate-" + format_double(rate));
        std::vector<LogSequence> perturbed = inject_unstable(test, lexicon, action_words, rate, rate_seed);
        ExperimentRow row = eval_row(rate, perturbed);
        if (f1_base > 0.0) row.f1_change_pct = (row.metrics.f1 - f1_base) / f1_base * 100.0;
        report.rows.push_back(std::move(row));
    }
    return report;
}

ExperimentReport cross_eval(const RunConfig& base, const NamedDataset& train_dataset,
                            const std::vector<NamedDataset>& test_datasets) {
    ExperimentReport report;
    report.protocol = "cross-dataset";
    report.fingerprint = config_fingerprint(base);

    RunConfig cfg = base;
    cfg.seed = derive_seed(base.seed, "cross-train-" + train_dataset.name);
    cfg.apply_seed();
    cfg.validate();
    const LabeledSplit train_split = chronological_split(train_dataset.ordered, base.dataset.train_ratio);
    TrainOutcome outcome = run_training(cfg.model, cfg.peft, cfg.train, train_split.train);
    const double epoch_seconds = mean_epoch_compute_seconds(outcome.epochs);

    for (const NamedDataset& dataset : test_datasets) {
        ExperimentRow row;
        row.axis = dataset.name;
        row.seed = cfg.seed;
        try {
            const LabeledSplit split = chronological_split(dataset.ordered, base.dataset.train_ratio);
            EvalResult eval = evaluate_model(outcome.model, split.test);
            row.counts = eval.counts;
            row.metrics = eval.metrics;
            row.degenerate = eval.degenerate;
            row.epoch_seconds = epoch_seconds;
            row.init_checksum = outcome.initial_param_checksum;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

} // namespace peftlad
