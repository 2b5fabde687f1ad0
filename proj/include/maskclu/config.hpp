#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "maskclu/clustering.hpp"
#include "maskclu/tensor.hpp"

namespace maskclu {

/// Every hyperparameter of a pretraining run. JSON keys are the field names.
///
/// Defaults are the desk-scale configuration. Full-scale reference values:
/// 1024 points, width 384, 12 encoder / 4 decoder blocks, 6 heads, K = 24,
/// eps = 5e-4, lr 5e-4, weight decay 0.05, batch 128, 300 epochs.
struct TrainConfig {
    std::size_t points_per_cloud = 1024;
    std::size_t patches = 64;
    std::size_t k_patch = 32;
    std::size_t k_graph = 4;
    std::size_t embed_dim = 96;
    std::size_t encoder_depth = 3;
    std::size_t decoder_depth = 2;
    std::size_t heads = 6;
    std::size_t clusters = 24;
    double temperature = 1.0;
    double mask_ratio = 0.6;
    double epsilon = 5e-4;
    std::size_t sinkhorn_iters = 200;
    double marginal_tol = 1e-6;
    bool sinkhorn_scaling = true;
    double learning_rate = 5e-4;
    double weight_decay = 0.05;
    std::size_t batch_size = 8;
    std::size_t epochs = 1;
    std::size_t max_steps = 500;  // 0: run `epochs` full passes
    std::uint64_t seed = 0;
    Precision precision = Precision::f64;
    // Synthetic pretraining data, used when no data directory is given.
    std::size_t clouds_per_class = 16;
    double noise = 0.01;

    /// Throws ParameterError on out-of-range values.
    void validate() const;
    SinkhornConfig sinkhorn() const { return {epsilon, sinkhorn_iters, marginal_tol, sinkhorn_scaling}; }
    /// Optimizer steps for a dataset of `dataset_size` clouds.
    std::size_t total_steps(std::size_t dataset_size) const;
};

std::string to_json(const TrainConfig& cfg);
/// Unknown keys and wrongly typed values are a ConfigError.
TrainConfig config_from_json(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const TrainConfig& cfg);

}  // namespace maskclu
