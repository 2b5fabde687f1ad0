#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maskclu/layers.hpp"

namespace maskclu {

struct GradCheckOptions {
    double step = 1e-5;        // central-difference step h
    double tolerance = 1e-4;   // max relative error
    double abs_floor = 1e-6;   // denominator floor for near-zero gradients
    std::size_t max_entries = 64;  // inputs up to this size are checked entry by entry
    std::size_t directions = 3;    // random directions for larger inputs
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    std::string name;
    double max_error = 0.0;
    std::string worst_input;
    std::size_t evaluations = 0;
    bool passed = false;
};

/// Compares tape gradients of the scalar `loss` against central finite
/// differences. Small inputs are checked per entry (relative error of the whole
/// gradient vector), larger ones along random directions. Every stop_gradient
/// value is recorded on the first evaluation and replayed during the
/// perturbed ones, so detached branches stay fixed as their contract requires.
GradCheckReport check_gradients(const std::string& name, const std::function<Tensor()>& loss,
                                const NamedParameters& inputs, const GradCheckOptions& options = {});

/// The full differentiable-operation suite on randomized toy shapes, ending
/// with the complete pretraining objective on a small model.
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed = 0, const GradCheckOptions& options = {});

}  // namespace maskclu
