#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

/// Scalar-valued map of a list of double tensors (e.g. a loss after a layer).
using ScalarMap = std::function<double(const std::vector<TensorD>&)>;

struct GradCheckInput {
    std::string name;
    TensorD value;
    TensorD analytic;  // gradient claimed by the backward pass
};

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    bool passed = false;
};

struct GradCheckReport {
    double tolerance = 0.0;
    std::vector<GradCheckEntry> entries;

    bool passed() const;
    double worst() const;
};

/// Compares analytic gradients with central differences, step
/// h = 1e-4 * max(1, |x|). The error of a tensor is
/// max_i |analytic_i - numeric_i| / max(max_j |analytic_j|, max_j |numeric_j|),
/// i.e. relative to the gradient's own scale, so entries that are zero by
/// structure do not blow up the ratio. Throws NumericError if f is not finite.
GradCheckReport gradient_check(const ScalarMap& f, const std::vector<GradCheckInput>& inputs, double tolerance);

/// Per-layer outcome of the randomized finite-difference suite.
struct LayerCheckSummary {
    std::string layer;
    std::size_t trials = 0;
    std::size_t failures = 0;
    double worst_error = 0.0;
};

/// Runs `trials` randomized checks for each of conv3d, conv_transpose3d,
/// batchnorm3d, relu, sigmoid, maxpool3d (inputs kept away from ties) and
/// dice_loss, plus the conv3d + relu + sigmoid + dice composite.
std::vector<LayerCheckSummary> run_layer_gradient_suite(std::uint64_t seed, std::size_t trials, double tolerance);

}  // namespace cardioseg
