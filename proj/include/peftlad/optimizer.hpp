#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "peftlad/errors.hpp"
#include "peftlad/tensor.hpp"

namespace peftlad {

// Decoupled-weight-decay Adam. Moments are bias-corrected and the decay term
// is applied directly to the parameter, outside the adaptive update:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
template <typename T>
class AdamW {
public:
    struct Params {
        double learning_rate = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        double weight_decay = 0.01;
    };

    struct Slot {
        std::string name;
        Tensor<T> param;
        std::vector<T> m;
        std::vector<T> v;
    };

    explicit AdamW(Params params) : params_(params) {
        if (!(params_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(params_.beta1 >= 0.0 && params_.beta1 < 1.0) || !(params_.beta2 >= 0.0 && params_.beta2 < 1.0)) {
            throw ConfigError("adam betas must lie in [0,1)");
        }
        if (!(params_.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
        if (params_.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    }

    void add_parameter(const std::string& name, const Tensor<T>& param) {
        Slot slot;
        slot.name = name;
        slot.param = param;
        slot.m.assign(param.size(), T(0));
        slot.v.assign(param.size(), T(0));
        slots_.push_back(std::move(slot));
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Slot& slot : slots_) n += slot.param.size();
        return n;
    }

    // Applies one update from the gradients currently on the parameters and
    // clears them. Parameters with no gradient this step are left alone.
    void step() {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(params_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(params_.beta2, static_cast<double>(step_count_));
        for (Slot& slot : slots_) {
            if (!slot.param.has_grad()) continue;
            const std::vector<T>& grad = slot.param.grad();
            std::vector<T>& theta = slot.param.mutable_values();
            for (std::size_t i = 0; i < grad.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                if (!std::isfinite(g)) {
                    throw NumericError("non-finite gradient in parameter '" + slot.name + "' at element " +
                                       std::to_string(i) + "; step aborted");
                }
                const double m = params_.beta1 * static_cast<double>(slot.m[i]) + (1.0 - params_.beta1) * g;
                const double v =
                    params_.beta2 * static_cast<double>(slot.v[i]) + (1.0 - params_.beta2) * g * g;
                slot.m[i] = static_cast<T>(m);
                slot.v[i] = static_cast<T>(v);
                const double m_hat = m / bc1;
                const double v_hat = v / bc2;
                const double update = params_.learning_rate * m_hat / (std::sqrt(v_hat) + params_.epsilon) +
                                      params_.learning_rate * params_.weight_decay *
                                          static_cast<double>(theta[i]);
                theta[i] = static_cast<T>(static_cast<double>(theta[i]) - update);
            }
            slot.param.zero_grad();
        }
    }

    void zero_grad() {
        for (Slot& slot : slots_) slot.param.zero_grad();
    }

    std::uint64_t steps_taken() const { return step_count_; }

private:
    Params params_;
    std::vector<Slot> slots_;
    std::uint64_t step_count_ = 0;
};

} // namespace peftlad
