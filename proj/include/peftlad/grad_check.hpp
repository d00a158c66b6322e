#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "peftlad/tensor.hpp"

namespace peftlad {

struct GradCheckResult {
    double max_rel_error = 0.0; // infinity when a non-finite gradient was seen
    std::size_t checked = 0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
};

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences, perturbing every element of every input. Relative error
// uses a floor so that near-zero pairs do not blow up. A non-finite analytic
// or numeric gradient is reported as an infinite error, never masked.
inline GradCheckResult grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                  std::vector<Tensor<double>> inputs, double eps = 1e-6) {
    for (auto& input : inputs) {
        input.set_requires_grad(true);
        input.zero_grad(); // stale gradients would contaminate the analytic pass
    }

    auto loss = f(inputs);
    loss.backward();
    std::vector<std::vector<double>> analytic(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        analytic[i] = inputs[i].has_grad() ? inputs[i].grad() : std::vector<double>(inputs[i].size(), 0.0);
        inputs[i].zero_grad();
    }

    GradCheckResult result;
    NoGradGuard guard; // finite differences only need forward values
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& values = inputs[i].mutable_values();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + eps;
            const double up = f(inputs).item();
            values[j] = saved - eps;
            const double down = f(inputs).item();
            values[j] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double exact = analytic[i][j];
            double rel;
            if (!std::isfinite(exact) || !std::isfinite(numeric)) {
                rel = std::numeric_limits<double>::infinity();
            } else {
                const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
                rel = std::abs(exact - numeric) / denom;
            }
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_input = i;
                result.worst_index = j;
            }
        }
    }
    return result;
}

} // namespace peftlad
