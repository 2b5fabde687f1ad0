#include "maskclu/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "maskclu/errors.hpp"

namespace maskclu {

bool MetricsRecord::same_values(const MetricsRecord& o) const {
    return step == o.step && l_ass == o.l_ass && l_cts == o.l_cts && l_contras == o.l_contras &&
           l_total == o.l_total && sinkhorn_iters == o.sinkhorn_iters &&
           sinkhorn_marginal_err == o.sinkhorn_marginal_err && grad_norm == o.grad_norm && lr == o.lr;
}

std::string metrics_json(const MetricsRecord& m) {
    return nlohmann::json{{"step", m.step},
                          {"l_ass", m.l_ass},
                          {"l_cts", m.l_cts},
                          {"l_contras", m.l_contras},
                          {"l_total", m.l_total},
                          {"sinkhorn_iters", m.sinkhorn_iters},
                          {"sinkhorn_marginal_err", m.sinkhorn_marginal_err},
                          {"grad_norm", m.grad_norm},
                          {"lr", m.lr},
                          {"wall_ms", m.wall_ms}}
        .dump();
}

std::uint64_t patch_seed(const TrainConfig& cfg, std::size_t cloud_id) {
    return mix_seed(cfg.seed, cloud_id, 0x7061746368ULL);
}

std::uint64_t mask_seed(const TrainConfig& cfg, std::size_t step, std::size_t cloud_id) {
    return mix_seed(cfg.seed ^ 0x6d61736bULL, step, cloud_id);
}

namespace {

MetricsRecord step_on_patches(std::span<const PatchSet> patches, std::span<const std::size_t> cloud_ids, Model& model,
                              AdamW& optimizer, const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (patches.empty()) {
        throw ContractError("train_step: empty batch");
    }
    const auto start = std::chrono::steady_clock::now();
    set_matmul_precision(cfg.precision);
    optimizer.zero_grad();
    MetricsRecord rec;
    rec.step = step;
    const double inv_batch = 1.0 / static_cast<double>(patches.size());
    for (std::size_t c = 0; c < patches.size(); ++c) {
        const MaskPair masks = sample_masks(cfg.patches, cfg.mask_ratio, mask_seed(cfg, step, cloud_ids[c]));
        CloudForward fwd;
        try {
            fwd = forward_cloud(model, cfg, patches[c], masks);
        } catch (const NumericError& e) {
            optimizer.zero_grad();
            throw NumericError("train_step " + std::to_string(step) + ", cloud " + std::to_string(cloud_ids[c]) +
                               ": " + e.what());
        }
        if (const std::string bad = fwd.first_non_finite(); !bad.empty()) {
            optimizer.zero_grad();
            throw NumericError("train_step " + std::to_string(step) + ": non-finite value in '" + bad +
                               "' for cloud " + std::to_string(cloud_ids[c]));
        }
        rec.l_ass += fwd.l_ass.item() * inv_batch;
        rec.l_cts += fwd.l_cts.item() * inv_batch;
        rec.l_contras += fwd.l_contras.item() * inv_batch;
        rec.l_total += fwd.total.item() * inv_batch;
        for (const SinkhornResult* r : {&fwd.plan_ab, &fwd.plan_ba}) {
            rec.sinkhorn_iters = std::max(rec.sinkhorn_iters, r->iterations);
            rec.sinkhorn_marginal_err = std::max(rec.sinkhorn_marginal_err, r->marginal_error);
        }
        scale(fwd.total, inv_batch).backward();
    }
    rec.grad_norm = optimizer.grad_norm();
    if (!std::isfinite(rec.grad_norm)) {
        for (const auto& [name, p] : optimizer.parameters()) {
            const auto g = p.grad();
            if (std::any_of(g.begin(), g.end(), [](double v) { return !std::isfinite(v); })) {
                optimizer.zero_grad();
                throw NumericError("train_step " + std::to_string(step) + ": non-finite gradient in '" + name + "'");
            }
        }
    }
    rec.lr = cosine_lr(step, total_steps, cfg.learning_rate);
    optimizer.step(rec.lr);
    optimizer.zero_grad();
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

}  // namespace

MetricsRecord train_step(std::span<const PointCloud> batch, std::span<const std::size_t> cloud_ids, Model& model,
                         AdamW& optimizer, const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (batch.size() != cloud_ids.size()) {
        throw ContractError("train_step: one cloud id per batch entry is required");
    }
    std::vector<PatchSet> patches;
    patches.reserve(batch.size());
    for (std::size_t c = 0; c < batch.size(); ++c) {
        patches.push_back(build_patches(batch[c], cfg.patches, cfg.k_patch, patch_seed(cfg, cloud_ids[c])));
    }
    return step_on_patches(patches, cloud_ids, model, optimizer, cfg, step, total_steps);
}

Trainer::Trainer(TrainConfig cfg, std::vector<PointCloud> dataset)
    : cfg_(std::move(cfg)),
      dataset_(std::move(dataset)),
      model_(cfg_),
      optimizer_(model_.parameters(), AdamW::Options{0.9, 0.999, 1e-8, cfg_.weight_decay}) {
    if (dataset_.empty()) {
        throw ContractError("Trainer: dataset is empty");
    }
}

std::vector<MetricsRecord> Trainer::run(const std::function<void(const MetricsRecord&)>& on_step) {
    const std::size_t n = dataset_.size();
    const std::size_t total = cfg_.total_steps(n);
    std::vector<PatchSet> patches;
    patches.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        patches.push_back(build_patches(dataset_[i], cfg_.patches, cfg_.k_patch, patch_seed(cfg_, i)));
    }
    std::vector<MetricsRecord> records;
    records.reserve(total);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(cfg_.seed, 0x73687566ULL));
    std::size_t cursor = n;  // forces a shuffle before the first batch
    for (std::size_t step = 0; step < total; ++step) {
        std::vector<std::size_t> ids;
        std::vector<PatchSet> batch;
        const std::size_t size = std::min(cfg_.batch_size, n);
        while (ids.size() < size) {
            if (cursor == n) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            ids.push_back(order[cursor]);
            batch.push_back(patches[order[cursor]]);
            ++cursor;
        }
        records.push_back(step_on_patches(batch, ids, model_, optimizer_, cfg_, step, total));
        if (on_step) {
            on_step(records.back());
        }
    }
    return records;
}

void write_metrics(const std::filesystem::path& dir, const std::vector<MetricsRecord>& records) {
    std::filesystem::create_directories(dir);
    std::ofstream jsonl(dir / "metrics.jsonl");
    for (const auto& r : records) {
        jsonl << metrics_json(r) << '\n';
    }
    // Summary: mean of each loss over the first and last ten steps, and its range.
    std::ofstream csv(dir / "summary.csv");
    csv.precision(17);
    csv << "metric,first10_mean,last10_mean,min,max\n";
    const std::size_t window = std::min<std::size_t>(10, records.size());
    auto emit = [&](const char* name, double MetricsRecord::*field) {
        if (records.empty()) {
            return;
        }
        double first = 0.0, last = 0.0;
        double lo = records.front().*field, hi = lo;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const double v = records[i].*field;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            if (i < window) first += v;
            if (i + window >= records.size()) last += v;
        }
        csv << name << ',' << first / static_cast<double>(window) << ',' << last / static_cast<double>(window) << ','
            << lo << ',' << hi << '\n';
    };
    emit("l_ass", &MetricsRecord::l_ass);
    emit("l_cts", &MetricsRecord::l_cts);
    emit("l_contras", &MetricsRecord::l_contras);
    emit("l_total", &MetricsRecord::l_total);
    emit("sinkhorn_marginal_err", &MetricsRecord::sinkhorn_marginal_err);
    emit("grad_norm", &MetricsRecord::grad_norm);
    emit("wall_ms", &MetricsRecord::wall_ms);
}

}  // namespace maskclu
