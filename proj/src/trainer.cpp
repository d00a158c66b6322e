#include "peftlad/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>

#include "peftlad/errors.hpp"

namespace peftlad {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t checksum_bytes(std::uint64_t hash, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        hash ^= p[i];
        hash *= 0x100000001b3ull;
    }
    return hash;
}

} // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (epochs < 1) throw ConfigError("epoch count must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0,1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

std::uint64_t parameter_checksum(TrainedModel& model) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    auto absorb = [&hash](const std::string&, Tensor<float>& t) {
        hash = checksum_bytes(hash, t.values().data(), t.values().size() * sizeof(float));
    };
    for_each_base_param<float>(model.params, absorb);
    for_each_peft_param<float>(model.peft, absorb);
    for_each_head_param<float>(model.head, absorb);
    return hash;
}

TrainOutcome run_training(ModelConfig model_cfg, const PeftChoice& peft_choice, const TrainConfig& train_cfg,
                          const std::vector<LogSequence>& train_seqs, const TrainHooks* hooks) {
    train_cfg.validate();
    if (train_seqs.empty()) throw ConfigError("training split is empty");

    TrainOutcome outcome;

    std::size_t positives = 0;
    std::vector<std::string> texts;
    std::vector<int> labels;
    texts.reserve(train_seqs.size());
    labels.reserve(train_seqs.size());
    for (const LogSequence& seq : train_seqs) {
        if (seq.label != 0 && seq.label != 1) {
            throw InputError("sequence label " + std::to_string(seq.label) + " outside {0,1}");
        }
        texts.push_back(concat_sequence_text(seq));
        labels.push_back(seq.label);
        positives += static_cast<std::size_t>(seq.label);
    }
    if (positives == 0 || positives == train_seqs.size()) {
        outcome.warnings.push_back("training split contains a single class (" +
                                   std::to_string(positives) + " of " + std::to_string(train_seqs.size()) +
                                   " anomalous); the classifier may degenerate");
    }

    TrainedModel& model = outcome.model;
    model.vocab = Vocabulary::build(texts, 1, static_cast<std::size_t>(model_cfg.max_len));
    model_cfg.vocab_size = static_cast<int>(model.vocab.size());
    model_cfg.validate();
    model.model_cfg = model_cfg;
    model.peft_choice = peft_choice;
    model.params = init_parameters<float>(model_cfg);
    model.peft = init_peft<float>(model_cfg, peft_choice);
    model.head = init_head<float>(model_cfg);
    outcome.initial_param_checksum = parameter_checksum(model);

    // Tokenization happens once, outside the per-epoch timing boundary.
    std::vector<TokenizedSequence> encoded;
    encoded.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        encoded.push_back(encode(texts[i], model.vocab, model_cfg.style));
        encoded.back().label = labels[i];
    }

    AdamW<float> optimizer({train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.epsilon,
                            train_cfg.weight_decay});
    for_each_peft_param<float>(model.peft, [&optimizer](const std::string& name, Tensor<float>& t) {
        optimizer.add_parameter(name, t);
    });
    for_each_head_param<float>(model.head, [&optimizer](const std::string& name, Tensor<float>& t) {
        optimizer.add_parameter(name, t);
    });

    Rng shuffle_rng(derive_seed(train_cfg.seed, "train-shuffle"));
    Rng dropout_rng(derive_seed(train_cfg.seed, "dropout"));
    Rng* dropout_ptr = model_cfg.dropout > 0.0 ? &dropout_rng : nullptr;

    std::vector<std::size_t> order(encoded.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::size_t batch_size = static_cast<std::size_t>(train_cfg.batch_size);
    int step = 0;
    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        const auto epoch_start = Clock::now();
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        double compute_seconds = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(begin + batch_size, order.size());
            std::size_t longest = 0;
            for (std::size_t i = begin; i < end; ++i) {
                longest = std::max(longest, encoded[order[i]].ids.size());
            }
            std::vector<TokenizedSequence> batch;
            std::vector<int> batch_labels;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                batch.push_back(encoded[order[i]]);
                pad_to(batch.back(), longest);
                batch_labels.push_back(batch.back().label);
            }

            const auto compute_start = Clock::now();
            std::vector<Tensor<float>> logits;
            logits.reserve(batch.size());
            for (const TokenizedSequence& seq : batch) {
                logits.push_back(sequence_logits(model.params, model.model_cfg, &model.peft, model.head, seq,
                                                 dropout_ptr));
            }
            Tensor<float> loss = cross_entropy_mean(rows_stack(logits), batch_labels);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
            loss.backward();
            optimizer.step();
            if (model.peft.kind == PeftKind::reft) {
                for (auto& [layer, iv] : model.peft.reft) {
                    iv.R.mutable_values() = reorthonormalize(iv.R).values();
                }
            }
            compute_seconds += seconds_since(compute_start);
            ++step;
            if (hooks && hooks->after_step) hooks->after_step(step, model);
        }

        EpochRecord record;
        record.epoch = epoch + 1;
        record.mean_loss = loss_sum / static_cast<double>(encoded.size());
        record.compute_seconds = compute_seconds;
        record.wall_seconds = seconds_since(epoch_start);
        outcome.epochs.push_back(record);
    }
    return outcome;
}

EvalResult evaluate_model(const TrainedModel& model, const std::vector<LogSequence>& sequences) {
    const auto start = std::chrono::steady_clock::now();
    EvalResult result;
    result.predictions.reserve(sequences.size());
    result.scores.reserve(sequences.size());
    std::vector<int> truth;
    truth.reserve(sequences.size());
    NoGradGuard guard;
    for (const LogSequence& seq : sequences) {
        if (seq.label != 0 && seq.label != 1) {
            throw InputError("sequence label " + std::to_string(seq.label) + " outside {0,1}");
        }
        const TokenizedSequence encoded_seq =
            encode(concat_sequence_text(seq), model.vocab, model.model_cfg.style);
        const Tensor<float> logits =
            sequence_logits(model.params, model.model_cfg, &model.peft, model.head, encoded_seq);
        const double score = anomaly_score_from_logits(logits);
        result.scores.push_back(score);
        result.predictions.push_back(predicted_label(score));
        truth.push_back(seq.label);
    }
    result.counts = count_confusion(truth, result.predictions);
    result.metrics = metrics_from_counts(result.counts);
    if (!result.predictions.empty()) {
        const int first = result.predictions.front();
        result.degenerate = std::all_of(result.predictions.begin(), result.predictions.end(),
                                        [first](int p) { return p == first; });
    }
    result.eval_seconds = seconds_since(start);
    return result;
}

std::pair<int, double> predict_sequence(const TrainedModel& model, const LogSequence& sequence) {
    NoGradGuard guard;
    const TokenizedSequence encoded_seq =
        encode(concat_sequence_text(sequence), model.vocab, model.model_cfg.style);
    const Tensor<float> logits =
        sequence_logits(model.params, model.model_cfg, &model.peft, model.head, encoded_seq);
    const double score = anomaly_score_from_logits(logits);
    return {predicted_label(score), score};
}

} // namespace peftlad
