#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "peftlad/log_pipeline.hpp"
#include "peftlad/metrics.hpp"
#include "peftlad/model.hpp"
#include "peftlad/optimizer.hpp"
#include "peftlad/peft.hpp"
#include "peftlad/tokenizer.hpp"

namespace peftlad {

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
    int batch_size = 32;
    int epochs = 3;
    std::uint64_t seed = 42;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double compute_seconds = 0.0; // forward + backward + optimizer step only
    double wall_seconds = 0.0;    // the whole epoch
};

// Everything needed to score a sequence: the frozen base, the adapters, the
// head, and the vocabulary they were trained against. Tensors are shared
// handles, so copies alias the same parameters.
struct TrainedModel {
    ModelConfig model_cfg;
    PeftChoice peft_choice;
    Vocabulary vocab;
    ModelParams<float> params;
    PeftState<float> peft;
    HeadParams<float> head;
};

struct TrainOutcome {
    TrainedModel model;
    std::vector<EpochRecord> epochs;
    std::uint64_t initial_param_checksum = 0; // over every parameter byte at init
    std::vector<std::string> warnings;
};

// Observation points for tests and diagnostics; after_step fires once per
// optimizer step with the live model.
struct TrainHooks {
    std::function<void(int step, TrainedModel& model)> after_step;
};

// Builds the vocabulary from the training split only, initializes the frozen
// base plus adapters and head from the model seed, and runs the optimizer
// over adapter+head parameters. Intervention projections are re-orthonormalized
// after every step.
TrainOutcome run_training(ModelConfig model_cfg, const PeftChoice& peft_choice, const TrainConfig& train_cfg,
                          const std::vector<LogSequence>& train_seqs, const TrainHooks* hooks = nullptr);

struct EvalResult {
    ConfusionCounts counts;
    Metrics metrics;
    std::vector<int> predictions;
    std::vector<double> scores;
    bool degenerate = false; // constant all-0 or all-1 predictions
    double eval_seconds = 0.0;
};

EvalResult evaluate_model(const TrainedModel& model, const std::vector<LogSequence>& sequences);

// (label, anomaly score) for one sequence.
std::pair<int, double> predict_sequence(const TrainedModel& model, const LogSequence& sequence);

// Checksum over the byte patterns of every parameter (base, adapters, head)
// in enumeration order; bitwise-sensitive.
std::uint64_t parameter_checksum(TrainedModel& model);

} // namespace peftlad
