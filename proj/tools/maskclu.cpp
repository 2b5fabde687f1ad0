// maskclu command-line tool: pretraining, probing, clustering, data generation
// and the gradient check suite.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "maskclu/checkpoint.hpp"
#include "maskclu/config.hpp"
#include "maskclu/dataset.hpp"
#include "maskclu/errors.hpp"
#include "maskclu/gradcheck.hpp"
#include "maskclu/model.hpp"
#include "maskclu/probe.hpp"
#include "maskclu/trainer.hpp"

namespace fs = std::filesystem;
using namespace maskclu;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Dense row-major CSV with 17 significant digits.
void write_matrix_csv(const fs::path& path, const Tensor& m) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    char buf[32];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m.at(i, j));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

/// config.json beside the checkpoint unless given explicitly.
TrainConfig checkpoint_config(const fs::path& checkpoint, const std::string& explicit_config) {
    const fs::path path = explicit_config.empty() ? checkpoint.parent_path() / "config.json" : fs::path(explicit_config);
    return load_config(path);
}

int run_pretrain(const std::string& config_path, const std::string& out_dir, const std::string& data_dir) {
    const TrainConfig cfg = load_config(config_path);
    std::vector<PointCloud> data = data_dir.empty()
                                       ? clouds_of(four_class_dataset(cfg.clouds_per_class, cfg.noise, cfg.seed,
                                                                      cfg.points_per_cloud))
                                       : read_dataset(data_dir);
    const fs::path out(out_dir);
    fs::create_directories(out);
    save_config(out / "config.json", cfg);

    Trainer trainer(cfg, std::move(data));
    std::ofstream jsonl(out / "metrics.jsonl");
    const auto records = trainer.run([&](const MetricsRecord& r) {
        jsonl << metrics_json(r) << '\n' << std::flush;
        std::fprintf(stderr, "step %zu  total %.6f  ass %.6f  cts %.6f  contras %.6f\n", r.step, r.l_total, r.l_ass,
                     r.l_cts, r.l_contras);
    });
    jsonl.close();
    write_metrics(out, records);
    save_checkpoint(out / "model.ckpt", trainer.model().parameters());
    std::printf("wrote %zu steps to %s\n", records.size(), out.string().c_str());
    return 0;
}

int run_probe(const std::string& checkpoint, const std::string& data_dir, const std::string& config_path,
              ProbeOptions options) {
    const TrainConfig cfg = checkpoint_config(checkpoint, config_path);
    const Model model(cfg);
    load_checkpoint(checkpoint, model.parameters());
    const std::vector<PointCloud> data = read_dataset(data_dir);
    const ProbeResult r = linear_probe(model, cfg, data, options);
    std::printf("{\"accuracy\": %.17g, \"train_accuracy\": %.17g, \"train_count\": %zu, \"test_count\": %zu, "
                "\"classes\": %zu}\n",
                r.accuracy, r.train_accuracy, r.train_count, r.test_count, r.classes);
    return 0;
}

struct ClusterDebug {
    std::string scores_csv;
    std::string plan_csv;
    std::string affinity_csv;
};

int run_cluster(const std::string& checkpoint, const std::string& input, std::size_t k, const std::string& labels_out,
                const std::string& config_path, std::uint64_t seed, const ClusterDebug& debug) {
    TrainConfig cfg = checkpoint_config(checkpoint, config_path);
    if (k != cfg.clusters) {
        throw ConfigError("--k " + std::to_string(k) + " does not match the checkpoint's " +
                          std::to_string(cfg.clusters) + " clusters");
    }
    const Model model(cfg);
    load_checkpoint(checkpoint, model.parameters());
    PointCloud cloud;
    cloud.points = read_xyz(input).points;
    validate_cloud(cloud);

    NoGradGuard no_grad;
    const PatchSet patches = build_patches(cloud, cfg.patches, cfg.k_patch, seed);
    const Tensor tokens = embed_patches(patches, model.point_encoder);
    const std::vector<bool> none(patches.count(), false);
    const EncodedView view = encode(tokens, patches.centers, none, model.encoder);
    const ReconstructedFeatures recon = decode(view, patches.centers, none, model.decoder, model.mask_token);
    const AffinityGraph graph = build_graph(patches.centers, recon.features, cfg.k_graph);
    const Tensor scores = cluster_scores(message_pass(graph, recon.features, model.head), model.head);
    const std::vector<std::size_t> patch_labels = hard_labels(scores);

    // Each point takes the cluster of its nearest patch center.
    const std::vector<std::size_t> nearest = knn(cloud.points, patches.centers, 1);
    std::vector<long> labels(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        labels[i] = static_cast<long>(patch_labels[nearest[i]]);
    }
    write_xyz(labels_out, cloud.points, labels);

    if (!debug.scores_csv.empty()) {
        write_matrix_csv(debug.scores_csv, scores);
    }
    if (!debug.affinity_csv.empty()) {
        write_matrix_csv(debug.affinity_csv, graph.weights);
    }
    if (!debug.plan_csv.empty()) {
        const Tensor pooled = pool_centers(scores, patches.centers);
        std::vector<Vec3> targets(pooled.rows());
        for (std::size_t c = 0; c < pooled.rows(); ++c) {
            targets[c] = {pooled.at(c, 0), pooled.at(c, 1), pooled.at(c, 2)};
        }
        const SinkhornResult plan = sinkhorn_assign(patches.centers, targets, cfg.sinkhorn());
        write_matrix_csv(debug.plan_csv, plan.plan);
        std::fprintf(stderr, "sinkhorn: %s after %zu iterations, marginal error %.3g\n",
                     plan.converged ? "converged" : "not converged", plan.iterations, plan.marginal_error);
    }
    std::printf("labeled %zu points into %zu clusters: %s\n", cloud.size(), k, labels_out.c_str());
    return 0;
}

int run_gen_data(const std::string& spec_path, const std::string& out_dir) {
    const DatasetSpec spec = dataset_spec_from_json(read_text(spec_path));
    const auto shapes = generate_dataset(spec.requests, spec.noise, spec.seed, spec.points);
    fs::create_directories(out_dir);
    write_dataset(out_dir, shapes);
    std::printf("wrote %zu clouds to %s\n", shapes.size(), out_dir.c_str());
    return 0;
}

int run_gradcheck(std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    const auto reports = run_gradcheck_suite(seed);
    bool ok = true;
    for (const auto& r : reports) {
        std::printf("%-18s %s  max_rel_err %.3e  (%s, %zu evals)\n", r.name.c_str(), r.passed ? "ok  " : "FAIL",
                    r.max_error, r.worst_input.c_str(), r.evaluations);
        ok = ok && r.passed;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s: %zu checks in %.2f s\n", ok ? "passed" : "FAILED", reports.size(), secs);
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"maskclu: masked point-cloud pretraining with cluster-guided objectives"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, checkpoint, input, labels_out, spec_path;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    ProbeOptions probe_options;
    ClusterDebug debug;

    auto* pretrain = app.add_subcommand("pretrain", "Pretrain a model and write checkpoint and metrics");
    pretrain->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    pretrain->add_option("--out", out_dir, "Output directory")->required();
    pretrain->add_option("--data", data_dir, "Directory of XYZ clouds (default: synthetic four-class set)")
        ->check(CLI::ExistingDirectory);

    auto* probe = app.add_subcommand("probe", "Linear probe on a frozen encoder");
    probe->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    probe->add_option("--data", data_dir, "Directory of labeled XYZ clouds")->required()->check(CLI::ExistingDirectory);
    probe->add_option("--config", config_path, "Config (default: config.json beside the checkpoint)");
    probe->add_option("--epochs", probe_options.epochs, "Probe training epochs");
    probe->add_option("--lr", probe_options.learning_rate, "Probe learning rate");
    probe->add_option("--seed", probe_options.seed, "Probe seed");
    probe->add_flag("--shuffle-labels", probe_options.shuffle_labels, "Permute labels (control run)");

    auto* cluster = app.add_subcommand("cluster", "Cluster the patches of one cloud");
    cluster->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    cluster->add_option("--input", input, "Input XYZ file")->required()->check(CLI::ExistingFile);
    cluster->add_option("--k", k, "Number of clusters")->required();
    cluster->add_option("--labels-out", labels_out, "Output XYZ with a cluster label column")->required();
    cluster->add_option("--config", config_path, "Config (default: config.json beside the checkpoint)");
    cluster->add_option("--seed", seed, "Patch sampling seed");
    cluster->add_option("--scores-csv", debug.scores_csv, "Write the score matrix S as CSV");
    cluster->add_option("--plan-csv", debug.plan_csv, "Write the transport plan as CSV");
    cluster->add_option("--affinity-csv", debug.affinity_csv, "Write the affinity matrix as CSV");

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
    gen->add_option("--spec", spec_path, "JSON dataset spec")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "Output directory")->required();

    auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    grad->add_option("--seed", seed, "Seed for the random toy inputs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pretrain) {
            return run_pretrain(config_path, out_dir, data_dir);
        }
        if (*probe) {
            return run_probe(checkpoint, data_dir, config_path, probe_options);
        }
        if (*cluster) {
            return run_cluster(checkpoint, input, k, labels_out, config_path, seed, debug);
        }
        if (*gen) {
            return run_gen_data(spec_path, out_dir);
        }
        if (*grad) {
            return run_gradcheck(seed);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
