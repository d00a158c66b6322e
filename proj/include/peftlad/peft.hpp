#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "peftlad/errors.hpp"
#include "peftlad/tensor.hpp"
#include "peftlad/tokenizer.hpp"

namespace peftlad {

enum class PeftKind { none, lora, reft };

PeftKind parse_peft_kind(const std::string& name);
std::string peft_kind_name(PeftKind kind);

enum class LoraTarget { query, key, value };

LoraTarget parse_lora_target(const std::string& name);
std::string lora_target_name(LoraTarget target);

enum class ReftPosition { prefix, suffix };

ReftPosition parse_reft_position(const std::string& name);
std::string reft_position_name(ReftPosition position);

// Scaling for the rank-stabilized low-rank update: alpha / sqrt(r).
inline double lora_scale(int rank, double alpha) {
    if (rank < 1) throw ConfigError("adapter rank must be at least 1, got " + std::to_string(rank));
    if (!(alpha > 0.0)) throw ConfigError("adapter alpha must be positive, got " + std::to_string(alpha));
    return rank == 1 ? alpha : alpha / std::sqrt(static_cast<double>(rank));
}

struct LoraConfig {
    int rank = 128;
    double alpha = 256.0;
    std::set<LoraTarget> targets = {LoraTarget::query, LoraTarget::value};
    std::vector<int> layers; // empty means every layer

    void validate(int hidden_dim, int layer_count) const;
    std::vector<int> resolved_layers(int layer_count) const;
};

struct ReftConfig {
    int rank = 8;
    // unset position falls back to the style default: prefix for masked,
    // suffix for autoregressive
    std::optional<ReftPosition> position;
    std::vector<int> layers; // empty means every layer

    void validate(int hidden_dim, int layer_count) const;
    std::vector<int> resolved_layers(int layer_count) const;
    ReftPosition resolved_position(ModelStyle style) const;
};

// Low-rank additive update to a frozen weight matrix: W + gamma * B * A,
// with B zero at init so training starts from the base behavior.
template <typename T>
struct LoraAdapter {
    Tensor<T> B; // d x r, zero-initialized
    Tensor<T> A; // r x d, normal(0, 0.02)
    T gamma = T(1);

    static LoraAdapter init(int hidden_dim, int rank, double alpha, Rng& rng) {
        LoraAdapter adapter;
        adapter.B = Tensor<T>::zeros({static_cast<std::size_t>(hidden_dim), static_cast<std::size_t>(rank)},
                                     true);
        adapter.A = random_normal<T>({static_cast<std::size_t>(rank), static_cast<std::size_t>(hidden_dim)},
                                     0.02, rng, true);
        adapter.gamma = static_cast<T>(lora_scale(rank, alpha));
        return adapter;
    }
};

// Applies the adapted transformation to a row-major token matrix x
// (tokens x d): base plus gamma * ((x A^T) B^T), which is the row form of
// (W + gamma B A) h. Gradients reach only A and B; the base stays frozen.
template <typename T>
Tensor<T> lora_delta(const Tensor<T>& x, const LoraAdapter<T>& adapter) {
    Tensor<T> down = matmul(x, adapter.A, false, true); // tokens x r
    Tensor<T> up = matmul(down, adapter.B, false, true); // tokens x d
    return scale(up, adapter.gamma);
}

// Learned low-rank edit of a hidden representation (a length-d row):
// h + R^T (W h + b - R h), with R keeping r orthonormal rows.
template <typename T>
struct ReftIntervention {
    Tensor<T> R; // r x d, orthonormal rows
    Tensor<T> W; // r x d
    Tensor<T> b; // r
};

template <typename T>
Tensor<T> reft_forward(const Tensor<T>& h, const ReftIntervention<T>& iv) {
    if (h.rank() != 1 || h.dim(0) != iv.R.dim(1)) {
        throw DimensionError("reft_forward: hidden row " + shape_str(h.shape()) + " vs projection " +
                             shape_str(iv.R.shape()));
    }
    Tensor<T> projected = add(matvec(iv.W, h), iv.b); // W h + b
    Tensor<T> inner = sub(projected, matvec(iv.R, h)); // W h + b - R h
    return add(h, matvec(iv.R, inner, /*transpose_a=*/true));
}

// Modified Gram-Schmidt over the rows; preserves the row span. Rank
// deficiency (a row collapsing to near zero) is an error naming the row.
template <typename T>
Tensor<T> reorthonormalize(const Tensor<T>& R) {
    if (R.rank() != 2) throw DimensionError("reorthonormalize: expected a matrix, got " + shape_str(R.shape()));
    const std::size_t rows = R.dim(0), cols = R.dim(1);
    if (rows > cols) {
        throw DimensionError("reorthonormalize: " + std::to_string(rows) + " rows cannot be orthonormal in " +
                             std::to_string(cols) + " dimensions");
    }
    std::vector<T> q(R.values());
    for (std::size_t i = 0; i < rows; ++i) {
        T* row = q.data() + i * cols;
        for (std::size_t j = 0; j < i; ++j) {
            const T* prev = q.data() + j * cols;
            T dot = T(0);
            for (std::size_t c = 0; c < cols; ++c) dot += row[c] * prev[c];
            for (std::size_t c = 0; c < cols; ++c) row[c] -= dot * prev[c];
        }
        T norm_sq = T(0);
        for (std::size_t c = 0; c < cols; ++c) norm_sq += row[c] * row[c];
        const T norm = std::sqrt(norm_sq);
        if (!(norm > T(1e-10))) {
            throw NumericError("reorthonormalize: row " + std::to_string(i) +
                               " is linearly dependent on earlier rows");
        }
        const T inv = T(1) / norm;
        for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
    }
    return Tensor<T>({rows, cols}, std::move(q), R.requires_grad());
}

// max |R R^T - I| over all entries; the orthonormality drift measure.
template <typename T>
double orthonormality_defect(const Tensor<T>& R) {
    const std::size_t rows = R.dim(0), cols = R.dim(1);
    double worst = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < rows; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                dot += static_cast<double>(R.values()[i * cols + c]) *
                       static_cast<double>(R.values()[j * cols + c]);
            }
            const double target = i == j ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(dot - target));
        }
    }
    return worst;
}

template <typename T>
ReftIntervention<T> init_reft_intervention(int hidden_dim, int rank, Rng& rng) {
    ReftIntervention<T> iv;
    const auto d = static_cast<std::size_t>(hidden_dim);
    const auto r = static_cast<std::size_t>(rank);
    iv.R = reorthonormalize(random_normal<T>({r, d}, 1.0, rng, true));
    iv.W = random_uniform<T>({r, d}, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng, true);
    iv.b = Tensor<T>::zeros({r}, true);
    return iv;
}

struct PeftChoice {
    PeftKind kind = PeftKind::none;
    LoraConfig lora;
    ReftConfig reft;
};

// Closed-form trainable parameter totals: LoRA owns 2rd per adapted matrix,
// ReFT owns 2rd + r per intervened layer, the classifier head owns 2d + 2,
// and the frozen base contributes nothing.
struct ParamCountBreakdown {
    std::uint64_t adapter = 0;
    std::uint64_t head = 0;
    std::uint64_t total() const { return adapter + head; }
};

ParamCountBreakdown trainable_param_count(int hidden_dim, int layer_count, const PeftChoice& choice);

} // namespace peftlad
