#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "maskclu/config.hpp"
#include "maskclu/model.hpp"
#include "maskclu/optim.hpp"

namespace maskclu {

struct MetricsRecord {
    std::size_t step = 0;
    double l_ass = 0.0;
    double l_cts = 0.0;
    double l_contras = 0.0;
    double l_total = 0.0;
    std::size_t sinkhorn_iters = 0;       // max over the batch's Sinkhorn calls
    double sinkhorn_marginal_err = 0.0;   // max over the batch's Sinkhorn calls
    double grad_norm = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;

    /// Same values in every field except wall_ms.
    bool same_values(const MetricsRecord& other) const;
};

/// One JSON object, no trailing newline.
std::string metrics_json(const MetricsRecord& m);

/// Seeds for the patch sampler and masks of one cloud at one step.
std::uint64_t patch_seed(const TrainConfig& cfg, std::size_t cloud_id);
std::uint64_t mask_seed(const TrainConfig& cfg, std::size_t step, std::size_t cloud_id);

/// Runs the full pipeline on every cloud in the batch, back-propagates the mean
/// total loss, and takes one AdamW step at the cosine-scheduled learning rate.
/// `cloud_ids` identify the clouds for seeding (same length as `batch`).
/// A non-finite intermediate aborts the step with a NumericError before any
/// parameter changes.
MetricsRecord train_step(std::span<const PointCloud> batch, std::span<const std::size_t> cloud_ids, Model& model,
                         AdamW& optimizer, const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

/// Patchification is deterministic per cloud, so it is computed once.
class Trainer {
  public:
    Trainer(TrainConfig cfg, std::vector<PointCloud> dataset);

    /// Trains for cfg.total_steps(dataset size) steps. Each record is passed to
    /// `on_step` as soon as it is produced.
    std::vector<MetricsRecord> run(const std::function<void(const MetricsRecord&)>& on_step = {});

    Model& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }

  private:
    TrainConfig cfg_;
    std::vector<PointCloud> dataset_;
    Model model_;
    AdamW optimizer_;
};

/// Writes metrics.jsonl (one record per line) and summary.csv.
void write_metrics(const std::filesystem::path& dir, const std::vector<MetricsRecord>& records);

}  // namespace maskclu
