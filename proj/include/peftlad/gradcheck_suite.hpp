#pragma once

#include <string>
#include <vector>

namespace peftlad {

struct GradCheckCase {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 1e-4;
    bool passed = false;
};

// The double-precision finite-difference suite covering every parameterized
// operation: core tensor ops, attention, feed-forward, layer norm, both
// adapter kinds, and the classifier head with its loss, all on a 2-layer
// width-8 model.
std::vector<GradCheckCase> run_gradcheck_suite();

} // namespace peftlad
