#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "peftlad/checkpoint.hpp"
#include "peftlad/dataset_io.hpp"
#include "peftlad/errors.hpp"
#include "peftlad/experiments.hpp"
#include "peftlad/gradcheck_suite.hpp"
#include "peftlad/log_pipeline.hpp"
#include "peftlad/run_config.hpp"
#include "peftlad/synthetic.hpp"
#include "peftlad/trainer.hpp"

namespace {

using namespace peftlad;

constexpr int EXIT_OK = 0;
constexpr int EXIT_USAGE = 2;
constexpr int EXIT_MISSING = 3;
constexpr int EXIT_NUMERIC = 4;

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream stream(csv);
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
    std::vector<int> out;
    for (const std::string& item : split_list(csv)) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": '" + item + "' is not an integer");
        }
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
    std::vector<double> out;
    for (const std::string& item : split_list(csv)) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": '" + item + "' is not a number");
        }
    }
    return out;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
    return doc;
}

// Shared flag set for commands that configure a run. Defaults follow the
// precedence flag > config file > environment seed > built-in default.
struct RunFlags {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    // model
    std::string style, activation;
    int model_layers = 0, hidden = 0, heads = 0, ffn = 0, max_len = 0;
    double dropout = 0.0;
    // peft
    std::string peft_kind, targets, peft_layers, position;
    int rank = 0;
    double alpha = 0.0;
    // train
    double lr = 0.0, weight_decay = 0.0;
    int batch = 0, epochs = 0;
    // dataset
    double ratio = 0.0;

    CLI::App* app = nullptr;

    void attach(CLI::App& command) {
        app = &command;
        command.add_option("--config", config_path, "JSON config file; flags override its values");
        command.add_option("--out", out, "output directory (default runs/default)");
        command.add_option("--seed", seed, "master seed (default 42, or PEFT_LAD_SEED)");
        command.add_option("--style", style, "model style: masked | autoregressive (default masked)");
        command.add_option("--model-layers", model_layers, "transformer layer count (default 2)");
        command.add_option("--hidden", hidden, "hidden width d (default 64)");
        command.add_option("--heads", heads, "attention heads (default 4)");
        command.add_option("--ffn", ffn, "feed-forward width (default 256)");
        command.add_option("--max-len", max_len, "token truncation length (default 256)");
        command.add_option("--activation", activation, "gelu | relu (default gelu)");
        command.add_option("--dropout", dropout, "dropout rate (default 0)");
        command.add_option("--peft", peft_kind, "adapter kind: lora | reft (default reft)");
        command.add_option("--rank", rank, "adapter rank (default 8 for reft, 128 for lora)");
        command.add_option("--alpha", alpha, "lora scaling numerator (default 256)");
        command.add_option("--targets", targets, "lora targets, comma list of query,key,value (default query,value)");
        command.add_option("--peft-layers", peft_layers, "adapter layer indices, comma list (default all)");
        command.add_option("--position", position, "reft position: prefix | suffix (default per style)");
        command.add_option("--lr", lr, "learning rate (default 1e-4)");
        command.add_option("--batch", batch, "batch size (default 32)");
        command.add_option("--epochs", epochs, "training epochs (default 3)");
        command.add_option("--weight-decay", weight_decay, "decoupled weight decay (default 0.01)");
        command.add_option("--ratio", ratio, "chronological train ratio (default 0.8)");
    }

    bool given(const std::string& name) const { return app && app->count(name) > 0; }

    // Builds the effective config: defaults, then PEFT_LAD_SEED, then the
    // config file, then every flag that was actually passed.
    RunConfig resolve(nlohmann::json* file_doc_out = nullptr) const {
        RunConfig cfg;
        if (const char* env = std::getenv("PEFT_LAD_SEED")) {
            try {
                cfg.seed = std::stoull(env);
            } catch (const std::exception&) {
                throw ConfigError("PEFT_LAD_SEED is not an unsigned integer: " + std::string(env));
            }
        }
        nlohmann::json file_doc = nlohmann::json::object();
        if (!config_path.empty()) {
            file_doc = read_json_file(config_path);
            nlohmann::json merged = file_doc;
            if (!merged.contains("seed")) merged["seed"] = cfg.seed;
            cfg = run_config_from_json(merged);
        }
        if (file_doc_out) *file_doc_out = file_doc;

        if (given("--seed")) cfg.seed = seed;
        if (given("--out")) cfg.out = out;
        if (given("--style")) cfg.model.style = parse_model_style(style);
        if (given("--model-layers")) cfg.model.layers = model_layers;
        if (given("--hidden")) cfg.model.hidden = hidden;
        if (given("--heads")) cfg.model.heads = heads;
        if (given("--ffn")) cfg.model.ffn = ffn;
        if (given("--max-len")) cfg.model.max_len = max_len;
        if (given("--activation")) cfg.model.activation = parse_activation(activation);
        if (given("--dropout")) cfg.model.dropout = dropout;
        if (given("--peft")) {
            cfg.peft.kind = parse_peft_kind(peft_kind);
        } else if (cfg.peft.kind == PeftKind::none && !file_doc.contains("peft")) {
            cfg.peft.kind = PeftKind::reft; // the default adapter when nothing was asked for
        }
        if (given("--rank")) {
            cfg.peft.lora.rank = rank;
            cfg.peft.reft.rank = rank;
        }
        if (given("--alpha")) cfg.peft.lora.alpha = alpha;
        if (given("--targets")) {
            cfg.peft.lora.targets.clear();
            for (const std::string& name : split_list(targets)) {
                cfg.peft.lora.targets.insert(parse_lora_target(name));
            }
        }
        if (given("--peft-layers")) {
            const std::vector<int> layers = parse_int_list(peft_layers, "--peft-layers");
            cfg.peft.lora.layers = layers;
            cfg.peft.reft.layers = layers;
        }
        if (given("--position")) cfg.peft.reft.position = parse_reft_position(position);
        if (given("--lr")) cfg.train.learning_rate = lr;
        if (given("--batch")) cfg.train.batch_size = batch;
        if (given("--epochs")) cfg.train.epochs = epochs;
        if (given("--weight-decay")) cfg.train.weight_decay = weight_decay;
        if (given("--ratio")) cfg.dataset.train_ratio = ratio;
        cfg.apply_seed();
        return cfg;
    }
};

void print_parse_summary(const ParseStats& stats, const LabeledSplit& split) {
    auto count_anomalous = [](const std::vector<LogSequence>& seqs) {
        std::size_t n = 0;
        for (const LogSequence& seq : seqs) n += static_cast<std::size_t>(seq.label);
        return n;
    };
    std::cout << "lines: " << stats.total_lines << " (" << stats.rejected_lines << " rejected, "
              << stats.invalid_utf8_bytes << " invalid bytes replaced)\n";
    std::cout << "train: " << split.train.size() << " sequences, " << count_anomalous(split.train)
              << " anomalous\n";
    std::cout << "test:  " << split.test.size() << " sequences, " << count_anomalous(split.test)
              << " anomalous\n";
    if (stats.rejected_lines > 0) {
        std::cerr << "warning: " << stats.rejected_lines << " lines were rejected during parsing\n";
    }
    if (stats.invalid_utf8_bytes > 0) {
        std::cerr << "warning: " << stats.invalid_utf8_bytes << " invalid UTF-8 bytes were replaced\n";
    }
}

int cmd_prepare(const std::string& input, const std::string& format_name, const std::string& labels_path,
                const std::string& grouping, int window, int stride, double ratio, const std::string& out,
                std::uint64_t seed) {
    const LogFormat format = parse_log_format(format_name);
    if (grouping != "session" && grouping != "window") {
        throw ConfigError("grouping must be session or window, got '" + grouping + "'");
    }
    if (format == LogFormat::hdfs && grouping != "session") {
        throw ConfigError("the hdfs format is session-labeled; use --grouping session");
    }
    if (grouping == "session" && format != LogFormat::hdfs) {
        throw ConfigError("session grouping needs the hdfs format; labeled-lines has no session keys");
    }
    if (format == LogFormat::hdfs && labels_path.empty()) {
        throw ConfigError("the hdfs format needs --labels with the BlockId,Label CSV");
    }
    if (window < 1) throw ConfigError("--window must be at least 1");
    if (stride < 0) throw ConfigError("--stride must be non-negative");

    std::ifstream in(input);
    if (!in) throw MissingArtifactError("cannot open log file " + input);
    ParseStats stats;
    const std::vector<LogEvent> events = parse_lines(in, format, stats);

    std::vector<LogSequence> sequences;
    if (grouping == "session") {
        std::ifstream labels_in(labels_path);
        if (!labels_in) throw MissingArtifactError("cannot open label file " + labels_path);
        const auto table = load_session_labels(labels_in);
        sequences = group_sessions(events, &table);
    } else {
        sequences = group_windows(events, static_cast<std::size_t>(window),
                                  static_cast<std::size_t>(stride));
    }
    const LabeledSplit split = chronological_split(std::move(sequences), ratio);

    nlohmann::json manifest;
    manifest["format"] = "peftlad-dataset";
    manifest["version"] = 1;
    manifest["source"] = input;
    manifest["dataset_format"] = format_name;
    manifest["grouping"] = grouping;
    manifest["window"] = window;
    manifest["stride"] = stride;
    manifest["train_ratio"] = ratio;
    manifest["seed"] = seed;
    manifest["total_lines"] = stats.total_lines;
    manifest["rejected_lines"] = stats.rejected_lines;
    manifest["invalid_utf8_bytes"] = stats.invalid_utf8_bytes;
    manifest["train_sequences"] = split.train.size();
    manifest["test_sequences"] = split.test.size();
    save_bundle(out, split, manifest);
    print_parse_summary(stats, split);
    std::cout << "bundle written to " << out << "\n";
    return EXIT_OK;
}

int cmd_train(const RunFlags& flags, const std::string& bundle_dir) {
    RunConfig cfg = flags.resolve();
    cfg.validate();
    const DatasetBundle bundle = load_bundle(bundle_dir);

    TrainOutcome outcome = run_training(cfg.model, cfg.peft, cfg.train, bundle.train);
    for (const std::string& warning : outcome.warnings) std::cerr << "warning: " << warning << "\n";
    for (const EpochRecord& record : outcome.epochs) {
        std::cout << "epoch " << record.epoch << ": loss " << record.mean_loss << ", compute "
                  << record.compute_seconds << "s, wall " << record.wall_seconds << "s\n";
    }

    const std::filesystem::path out_dir(cfg.out);
    const std::string fingerprint = config_fingerprint(cfg);
    save_checkpoint(out_dir / "checkpoint", outcome.model, run_config_to_json(cfg), fingerprint);

    std::ofstream epochs_csv(out_dir / "epochs.csv", std::ios::trunc);
    if (!epochs_csv) throw IoError("cannot write " + (out_dir / "epochs.csv").string());
    epochs_csv << "epoch,mean_loss,compute_seconds,wall_seconds\n";
    for (const EpochRecord& record : outcome.epochs) {
        epochs_csv << record.epoch << ',' << record.mean_loss << ',' << record.compute_seconds << ','
                   << record.wall_seconds << '\n';
    }
    const auto breakdown = trainable_param_count(cfg.model.hidden, cfg.model.layers, cfg.peft);
    std::cout << "trainable parameters: " << breakdown.total() << " (" << breakdown.adapter
              << " adapter + " << breakdown.head << " head)\n";
    std::cout << "checkpoint written to " << (out_dir / "checkpoint").string() << " [config "
              << fingerprint << "]\n";
    return EXIT_OK;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& bundle_dir, const std::string& split_name,
             const std::string& out) {
    if (split_name != "test" && split_name != "train") {
        throw ConfigError("--split must be test or train, got '" + split_name + "'");
    }
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_dir);
    const DatasetBundle bundle = load_bundle(bundle_dir);
    const auto& sequences = split_name == "test" ? bundle.test : bundle.train;
    EvalResult result = evaluate_model(loaded.model, sequences);

    std::cout << "sequences: " << sequences.size() << "\n";
    std::cout << "tp " << result.counts.tp << ", fp " << result.counts.fp << ", fn " << result.counts.fn
              << ", tn " << result.counts.tn << "\n";
    std::cout << "precision " << result.metrics.precision << ", recall " << result.metrics.recall << ", f1 "
              << result.metrics.f1 << "\n";
    if (result.degenerate) std::cerr << "warning: constant predictions across the whole split\n";

    if (!out.empty()) {
        std::filesystem::create_directories(out);
        nlohmann::json doc;
        doc["config_fingerprint"] = loaded.fingerprint;
        doc["split"] = split_name;
        doc["tp"] = result.counts.tp;
        doc["fp"] = result.counts.fp;
        doc["fn"] = result.counts.fn;
        doc["tn"] = result.counts.tn;
        doc["precision"] = result.metrics.precision;
        doc["recall"] = result.metrics.recall;
        doc["f1"] = result.metrics.f1;
        doc["degenerate"] = result.degenerate;
        doc["eval_seconds"] = result.eval_seconds;
        std::ofstream json_out(std::filesystem::path(out) / "eval.json", std::ios::trunc);
        if (!json_out) throw IoError("cannot write eval.json under " + out);
        json_out << doc.dump(2) << '\n';
    }
    return EXIT_OK;
}

int cmd_sweep_rank(const RunFlags& flags, const std::string& bundle_dir, const std::string& ranks_csv,
                   int jobs) {
    RunConfig cfg = flags.resolve();
    // Every sweep point substitutes its own rank (over-large ranks become
    // failed rows, not a refusal to start), so validate everything but it.
    RunConfig probe = cfg;
    probe.peft.lora.rank = 1;
    probe.peft.reft.rank = 1;
    probe.validate();
    const DatasetBundle bundle = load_bundle(bundle_dir);
    const std::vector<int> ranks =
        ranks_csv.empty() ? default_rank_sweep() : parse_int_list(ranks_csv, "--ranks");
    ExperimentReport report = sweep_rank(cfg, combined_sequences(bundle), ranks, jobs);
    save_report(report, cfg.out, "rank_sweep");
    std::size_t failures = 0;
    for (const ExperimentRow& row : report.rows) {
        if (!row.ok) {
            ++failures;
            std::cerr << "warning: rank " << row.axis << " failed: " << row.error << "\n";
        }
    }
    std::cout << "rank sweep: " << report.rows.size() << " rows (" << failures << " failed) -> " << cfg.out
              << "/rank_sweep.{csv,json}\n";
    return EXIT_OK;
}

int cmd_sweep_data(const RunFlags& flags, const std::string& bundle_dir, const std::string& ratios_csv,
                   int jobs) {
    RunConfig cfg = flags.resolve();
    cfg.validate();
    const DatasetBundle bundle = load_bundle(bundle_dir);
    const std::vector<double> ratios =
        ratios_csv.empty() ? default_ratio_sweep() : parse_double_list(ratios_csv, "--ratios");
    ExperimentReport report = sweep_train_ratio(cfg, combined_sequences(bundle), ratios, jobs);
    save_report(report, cfg.out, "ratio_sweep");
    std::size_t failures = 0;
    for (const ExperimentRow& row : report.rows) {
        if (!row.ok) {
            ++failures;
            std::cerr << "warning: ratio " << row.axis << " failed: " << row.error << "\n";
        }
    }
    std::cout << "ratio sweep: " << report.rows.size() << " rows (" << failures << " failed) -> " << cfg.out
              << "/ratio_sweep.{csv,json}\n";
    return EXIT_OK;
}

int cmd_inject(const RunFlags& flags, const std::string& bundle_dir, const std::string& lexicon_path,
               const std::string& action_words_csv, const std::string& stoplist_path,
               const std::string& rates_csv) {
    nlohmann::json file_doc;
    RunConfig cfg = flags.resolve(&file_doc);
    // This protocol trains for one epoch unless the user said otherwise.
    const bool epochs_from_file = file_doc.contains("train") && file_doc["train"].contains("epochs");
    if (!flags.given("--epochs") && !epochs_from_file) cfg.train.epochs = 1;
    cfg.validate();

    const DatasetBundle bundle = load_bundle(bundle_dir);
    std::ifstream lexicon_in(lexicon_path);
    if (!lexicon_in) throw MissingArtifactError("cannot open synonym lexicon " + lexicon_path);
    const SynonymLexicon lexicon = load_lexicon(lexicon_in);

    std::vector<std::string> action_words;
    if (!action_words_csv.empty()) {
        action_words = split_list(action_words_csv);
        if (action_words.size() != 10) {
            throw ConfigError("--action-words needs exactly 10 comma-separated words, got " +
                              std::to_string(action_words.size()));
        }
    } else {
        std::set<std::string> stoplist;
        if (!stoplist_path.empty()) {
            std::ifstream stop_in(stoplist_path);
            if (!stop_in) throw MissingArtifactError("cannot open stoplist " + stoplist_path);
            std::string word;
            while (stop_in >> word) stoplist.insert(word);
        }
        std::vector<std::string> texts;
        texts.reserve(bundle.train.size());
        for (const LogSequence& seq : bundle.train) texts.push_back(concat_sequence_text(seq));
        action_words = pick_action_words(texts, stoplist);
    }

    const std::vector<double> rates =
        rates_csv.empty() ? default_injection_rates() : parse_double_list(rates_csv, "--rates");
    ExperimentReport report =
        run_injection(cfg, bundle.train, bundle.test, lexicon, action_words, rates);
    save_report(report, cfg.out, "injection");
    std::cout << "injection: " << report.rows.size() << " rows (incl. rate-0 baseline) -> " << cfg.out
              << "/injection.{csv,json}\n";
    return EXIT_OK;
}

int cmd_cross(const RunFlags& flags, const std::string& train_bundle,
              const std::vector<std::string>& test_bundles) {
    RunConfig cfg = flags.resolve();
    cfg.validate();
    if (test_bundles.empty()) throw ConfigError("cross evaluation needs at least one --test-bundle");

    auto load_named = [](const std::string& dir) {
        NamedDataset dataset;
        dataset.name = std::filesystem::path(dir).filename().string();
        if (dataset.name.empty()) dataset.name = dir;
        dataset.ordered = combined_sequences(load_bundle(dir));
        return dataset;
    };
    const NamedDataset train_dataset = load_named(train_bundle);
    std::vector<NamedDataset> test_datasets;
    test_datasets.reserve(test_bundles.size());
    for (const std::string& dir : test_bundles) test_datasets.push_back(load_named(dir));

    ExperimentReport report = cross_eval(cfg, train_dataset, test_datasets);
    save_report(report, cfg.out, "cross_eval");
    for (const ExperimentRow& row : report.rows) {
        if (row.ok && row.degenerate) {
            std::cerr << "warning: constant predictions on dataset " << row.axis << "\n";
        }
    }
    std::cout << "cross evaluation: " << report.rows.size() << " rows -> " << cfg.out
              << "/cross_eval.{csv,json}\n";
    return EXIT_OK;
}

int cmd_gradcheck() {
    const std::vector<GradCheckCase> cases = run_gradcheck_suite();
    bool all_passed = true;
    for (const GradCheckCase& c : cases) {
        std::cout << (c.passed ? "pass" : "FAIL") << "  " << c.name << "  max rel err " << c.max_rel_error
                  << " (tolerance " << c.tolerance << ")\n";
        all_passed = all_passed && c.passed;
    }
    if (!all_passed) {
        std::cerr << "gradient check failed\n";
        return EXIT_NUMERIC;
    }
    return EXIT_OK;
}

int cmd_synth(std::size_t windows, std::size_t window, double fraction, std::uint64_t seed,
              const std::string& out) {
    SyntheticSpec spec;
    spec.windows = windows;
    spec.window = window;
    spec.anomaly_fraction = fraction;
    spec.seed = seed;
    const std::vector<LogSequence> sequences = generate_windows(spec);
    std::ofstream out_stream(out, std::ios::trunc);
    if (!out_stream) throw IoError("cannot write " + out);
    write_labeled_lines(sequences, out_stream);
    out_stream.close();
    if (!out_stream) throw IoError("failed writing " + out);
    std::size_t anomalous = 0;
    for (const LogSequence& seq : sequences) anomalous += static_cast<std::size_t>(seq.label);
    std::cout << "wrote " << sequences.size() << " windows (" << anomalous << " anomalous) as "
              << log_format_name(LogFormat::labeled_lines) << " text to " << out << "\n";
    return EXIT_OK;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"parameter-efficient fine-tuning for log anomaly detection"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "parse a raw log into a labeled, split dataset bundle");
    std::string prep_input, prep_format = "labeled-lines", prep_labels, prep_grouping = "window";
    std::string prep_out = "runs/dataset";
    int prep_window = 50, prep_stride = 0;
    double prep_ratio = 0.8;
    std::uint64_t prep_seed = 42;
    prepare->add_option("--input", prep_input, "raw log file")->required();
    prepare->add_option("--format", prep_format, "hdfs | labeled-lines (default labeled-lines)");
    prepare->add_option("--labels", prep_labels, "session label CSV (hdfs format)");
    prepare->add_option("--grouping", prep_grouping, "session | window (default window)");
    prepare->add_option("--window", prep_window, "window size in events (default 50)");
    prepare->add_option("--stride", prep_stride, "window stride; 0 = tumbling (default 0)");
    prepare->add_option("--ratio", prep_ratio, "chronological train ratio (default 0.8)");
    prepare->add_option("--out", prep_out, "bundle output directory");
    prepare->add_option("--seed", prep_seed, "recorded in the bundle manifest");

    // train
    auto* train = app.add_subcommand("train", "fine-tune adapters and the head on a prepared bundle");
    std::string train_bundle;
    train->add_option("--bundle", train_bundle, "prepared dataset bundle directory")->required();
    RunFlags train_flags;
    train_flags.attach(*train);

    // eval
    auto* eval = app.add_subcommand("eval", "score a bundle split with a saved checkpoint");
    std::string eval_checkpoint, eval_bundle, eval_split = "test", eval_out;
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")->required();
    eval->add_option("--bundle", eval_bundle, "prepared dataset bundle directory")->required();
    eval->add_option("--split", eval_split, "test | train (default test)");
    eval->add_option("--out", eval_out, "directory for eval.json (optional)");

    // sweep-rank
    auto* sweep_rank_cmd = app.add_subcommand("sweep-rank", "train and evaluate across adapter ranks");
    std::string sr_bundle, sr_ranks;
    int sr_jobs = 1;
    sweep_rank_cmd->add_option("--bundle", sr_bundle, "prepared dataset bundle directory")->required();
    sweep_rank_cmd->add_option("--ranks", sr_ranks, "comma list (default 1,2,4,8,16,32,64,128)");
    sweep_rank_cmd->add_option("--jobs", sr_jobs, "concurrent sweep points (default 1)");
    RunFlags sr_flags;
    sr_flags.attach(*sweep_rank_cmd);

    // sweep-data
    auto* sweep_data_cmd =
        app.add_subcommand("sweep-data", "train across training-prefix sizes with a fixed test partition");
    std::string sd_bundle, sd_ratios;
    int sd_jobs = 1;
    sweep_data_cmd->add_option("--bundle", sd_bundle, "prepared dataset bundle directory")->required();
    sweep_data_cmd->add_option("--ratios", sd_ratios, "comma list in (0,0.8] (default 0.1..0.8)");
    sweep_data_cmd->add_option("--jobs", sd_jobs, "concurrent sweep points (default 1)");
    RunFlags sd_flags;
    sd_flags.attach(*sweep_data_cmd);

    // inject
    auto* inject = app.add_subcommand("inject", "evaluate robustness against synonym-perturbed test logs");
    std::string inj_bundle, inj_lexicon, inj_words, inj_stoplist, inj_rates;
    inject->add_option("--bundle", inj_bundle, "prepared dataset bundle directory")->required();
    inject->add_option("--lexicon", inj_lexicon, "synonym CSV: word,syn1[,syn2[,syn3]]")->required();
    inject->add_option("--action-words", inj_words, "explicit 10-word comma list (default: top-10 by frequency)");
    inject->add_option("--stoplist", inj_stoplist, "file of words to skip when ranking action words");
    inject->add_option("--rates", inj_rates, "comma list (default 0.01,0.02,0.03,0.05,0.10,0.20,0.30)");
    RunFlags inj_flags;
    inj_flags.attach(*inject);

    // cross
    auto* cross = app.add_subcommand("cross", "train on one dataset, evaluate on several");
    std::string cross_train;
    std::vector<std::string> cross_tests;
    cross->add_option("--train-bundle", cross_train, "bundle to fine-tune on")->required();
    cross->add_option("--test-bundle", cross_tests, "bundle to evaluate (repeatable)")->required();
    RunFlags cross_flags;
    cross_flags.attach(*cross);

    // gradcheck
    app.add_subcommand("gradcheck", "run the finite-difference gradient suite");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled-lines log corpus");
    std::size_t synth_windows = 5000, synth_window = 50;
    double synth_fraction = 0.05;
    std::uint64_t synth_seed = 42;
    std::string synth_out = "synthetic.log";
    synth->add_option("--windows", synth_windows, "number of windows (default 5000)");
    synth->add_option("--window", synth_window, "events per window (default 50)");
    synth->add_option("--anomaly-fraction", synth_fraction, "fraction of anomalous windows (default 0.05)");
    synth->add_option("--seed", synth_seed, "generator seed (default 42)");
    synth->add_option("--out", synth_out, "output log file (default synthetic.log)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return EXIT_USAGE;
    }

    try {
        if (app.got_subcommand("prepare")) {
            return cmd_prepare(prep_input, prep_format, prep_labels, prep_grouping, prep_window, prep_stride,
                               prep_ratio, prep_out, prep_seed);
        }
        if (app.got_subcommand("train")) return cmd_train(train_flags, train_bundle);
        if (app.got_subcommand("eval")) return cmd_eval(eval_checkpoint, eval_bundle, eval_split, eval_out);
        if (app.got_subcommand("sweep-rank")) return cmd_sweep_rank(sr_flags, sr_bundle, sr_ranks, sr_jobs);
        if (app.got_subcommand("sweep-data")) return cmd_sweep_data(sd_flags, sd_bundle, sd_ratios, sd_jobs);
        if (app.got_subcommand("inject")) {
            return cmd_inject(inj_flags, inj_bundle, inj_lexicon, inj_words, inj_stoplist, inj_rates);
        }
        if (app.got_subcommand("cross")) return cmd_cross(cross_flags, cross_train, cross_tests);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
        if (app.got_subcommand("synth")) {
            return cmd_synth(synth_windows, synth_window, synth_fraction, synth_seed, synth_out);
        }
        std::cerr << "no subcommand given\n";
        return EXIT_USAGE;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return EXIT_USAGE;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return EXIT_USAGE;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return EXIT_USAGE;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return EXIT_MISSING;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return EXIT_MISSING;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return EXIT_NUMERIC;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
