#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "maskclu/config.hpp"
#include "maskclu/model.hpp"

namespace maskclu {

struct ProbeOptions {
    std::size_t epochs = 300;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    bool shuffle_labels = false;  // permutation control
};

struct ProbeResult {
    double accuracy = 0.0;  // on the held-out split
    double train_accuracy = 0.0;
    std::size_t train_count = 0;
    std::size_t test_count = 0;
    std::size_t classes = 0;
};

/// Frozen-encoder descriptors, one row of width 2d per cloud. Runs without a
/// tape, so no gradient can reach the model.
std::vector<std::vector<double>> extract_descriptors(const Model& model, const TrainConfig& cfg,
                                                     std::span<const PointCloud> clouds);

/// Softmax-regression probe on precomputed descriptors. Every fifth sample
/// (index % 5 == 4) is held out; features are standardized with training-split
/// statistics. Needs at least two distinct labels.
ProbeResult fit_linear_probe(const std::vector<std::vector<double>>& features, std::span<const int> labels,
                             const ProbeOptions& options);

/// extract_descriptors + fit_linear_probe on clouds carrying labels.
ProbeResult linear_probe(const Model& model, const TrainConfig& cfg, std::span<const PointCloud> clouds,
                         const ProbeOptions& options);

}  // namespace maskclu
