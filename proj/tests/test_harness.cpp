#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "maskclu/checkpoint.hpp"
#include "maskclu/config.hpp"
#include "maskclu/dataset.hpp"
#include "maskclu/errors.hpp"
#include "maskclu/optim.hpp"
#include "maskclu/probe.hpp"
#include "maskclu/trainer.hpp"

using namespace maskclu;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.points_per_cloud = 64;
    cfg.patches = 8;
    cfg.k_patch = 8;
    cfg.embed_dim = 16;
    cfg.encoder_depth = 1;
    cfg.decoder_depth = 1;
    cfg.heads = 2;
    cfg.clusters = 3;
    cfg.batch_size = 2;
    cfg.max_steps = 4;
    cfg.seed = 5;
    return cfg;
}

std::vector<PointCloud> tiny_dataset(const TrainConfig& cfg, std::size_t per_class = 2) {
    return clouds_of(four_class_dataset(per_class, 0.01, cfg.seed, cfg.points_per_cloud));
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("maskclu_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(CosineLr, Endpoints) {
    EXPECT_EQ(cosine_lr(0, 100, 5e-4), 5e-4);
    EXPECT_NEAR(cosine_lr(100, 100, 5e-4), 0.0, 1e-20);
    EXPECT_NEAR(cosine_lr(50, 100, 5e-4), 2.5e-4, 1e-19);
    EXPECT_THROW(cosine_lr(101, 100, 1.0), ParameterError);
    EXPECT_THROW(cosine_lr(0, 0, 1.0), ParameterError);
}

TEST(CosineLr, MonotoneNonIncreasing) {
    for (std::size_t s = 1; s <= 37; ++s) {
        EXPECT_LE(cosine_lr(s, 37, 1.0), cosine_lr(s - 1, 37, 1.0));
    }
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParam) {
    std::vector<double> p{1.5, -2.0};
    const std::vector<double> g{0.0, 0.0};
    AdamState st;
    for (int i = 0; i < 3; ++i) {
        adamw_update(p, g, st, 0.1, 0.9, 0.999, 1e-8, 0.0);
    }
    EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
}

TEST(AdamW, DecayOnlyScalesParam) {
    std::vector<double> p{2.0};
    const std::vector<double> g{0.0};
    AdamState st;
    double expected = 2.0;
    for (int i = 0; i < 4; ++i) {
        adamw_update(p, g, st, 0.1, 0.9, 0.999, 1e-8, 0.05);
        expected *= 1.0 - 0.1 * 0.05;
        EXPECT_DOUBLE_EQ(p[0], expected);
    }
}

TEST(AdamW, ThreeStepHandTrajectory) {
    std::vector<double> p{1.0};
    AdamState st;
    const double grads[] = {0.5, -0.3, 0.2};
    const double expected[] = {0.899000002, 0.8789511989397751, 0.8433294795899422};
    for (int t = 0; t < 3; ++t) {
        const std::vector<double> g{grads[t]};
        adamw_update(p, g, st, 0.1, 0.9, 0.999, 1e-8, 0.01);
        EXPECT_NEAR(p[0], expected[t], 1e-15) << "step " << t + 1;
    }
}

TEST(Config, JsonRoundTripIsExact) {
    TrainConfig cfg;
    cfg.temperature = 0.1 + 0.2;
    cfg.learning_rate = 1.0 / 3.0;
    cfg.seed = 0xdeadbeefcafeULL;
    cfg.precision = Precision::f32;
    cfg.sinkhorn_scaling = false;
    const TrainConfig back = config_from_json(to_json(cfg));
    EXPECT_EQ(to_json(back), to_json(cfg));
    EXPECT_EQ(back.temperature, cfg.temperature);
    EXPECT_EQ(back.learning_rate, cfg.learning_rate);
    EXPECT_EQ(back.seed, cfg.seed);
    EXPECT_EQ(back.precision, Precision::f32);
    EXPECT_FALSE(back.sinkhorn_scaling);
}

TEST(Config, UnknownKeyIsHardError) {
    EXPECT_THROW(config_from_json(R"({"patches": 32, "pathces": 16})"), ConfigError);
}

TEST(Config, WrongTypesAndRangesRejected) {
    EXPECT_THROW(config_from_json(R"({"patches": "many"})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"patches": -3})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"precision": "f16"})"), ConfigError);
    EXPECT_THROW(config_from_json("[1, 2]"), ConfigError);
    EXPECT_THROW(config_from_json("{not json"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"mask_ratio": 1.0})"), ParameterError);
    EXPECT_THROW(config_from_json(R"({"k_graph": 64})"), ParameterError);
    EXPECT_THROW(config_from_json(R"({"heads": 5})"), ParameterError);
}

TEST(Config, PartialObjectKeepsDefaults) {
    const TrainConfig cfg = config_from_json(R"({"clusters": 8})");
    EXPECT_EQ(cfg.clusters, 8u);
    EXPECT_EQ(cfg.patches, TrainConfig{}.patches);
}

TEST(Dataset, NoiseFreeSphereOnUnitRadius) {
    const auto shapes = generate_dataset({{"sphere", 3}}, 0.0, 1, 1024);
    for (const auto& s : shapes) {
        Vec3 mean{0, 0, 0};
        for (const Vec3& p : s.cloud.points) {
            EXPECT_NEAR(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]), 1.0, 1e-12);
            for (int a = 0; a < 3; ++a) {
                mean[a] += p[a];
            }
        }
        for (double m : mean) {
            EXPECT_NEAR(m / 1024.0, 0.0, 1e-15);
        }
    }
}

TEST(Dataset, NormalizedToZeroMeanUnitMaxRadius) {
    for (const auto& s : four_class_dataset(3, 0.02, 9, 256)) {
        Vec3 mean{0, 0, 0};
        double radius = 0.0;
        for (const Vec3& p : s.cloud.points) {
            radius = std::max(radius, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
            for (int a = 0; a < 3; ++a) {
                mean[a] += p[a] / 256.0;
            }
        }
        EXPECT_NEAR(radius, 1.0, 1e-12);
        for (double m : mean) {
            EXPECT_NEAR(m, 0.0, 1e-12);
        }
    }
}

TEST(Dataset, SameSeedSameBytes) {
    const auto a = four_class_dataset(2, 0.01, 4, 128);
    const auto b = four_class_dataset(2, 0.01, 4, 128);
    const auto c = four_class_dataset(2, 0.01, 5, 128);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(format_xyz(a[i].cloud.points), format_xyz(b[i].cloud.points));
    }
    EXPECT_NE(format_xyz(a[0].cloud.points), format_xyz(c[0].cloud.points));
}

TEST(Dataset, FourClassesBalanced) {
    const auto shapes = four_class_dataset(64, 0.01, 0, 32);
    ASSERT_EQ(shapes.size(), 256u);
    std::array<int, 4> counts{};
    for (const auto& s : shapes) {
        counts[s.label] += 1;
        EXPECT_EQ(s.cloud.label, s.label);
        EXPECT_EQ(s.label, static_cast<int>(s.kind));
    }
    EXPECT_EQ(counts, (std::array<int, 4>{64, 64, 64, 64}));
}

TEST(Dataset, PlaneIsFlat) {
    for (const auto& s : generate_dataset({{"plane", 2}}, 0.0, 3, 200)) {
        // All points are coplanar with the origin: the 3x3 scatter is singular.
        double m[3][3] = {};
        for (const Vec3& p : s.cloud.points) {
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    m[i][j] += p[i] * p[j];
                }
            }
        }
        const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        EXPECT_NEAR(det, 0.0, 1e-6);
    }
}

TEST(Dataset, UnknownGeneratorIsConfigError) {
    EXPECT_THROW(generate_dataset({{"torus", 2}}, 0.0, 0), ConfigError);
    EXPECT_THROW(generate_dataset({{"sphere", 0}}, 0.0, 0), ParameterError);
}

TEST(Dataset, SpecParsingAndFiles) {
    const DatasetSpec spec = dataset_spec_from_json(
        R"({"shapes": [{"generator": "box", "count": 2}, {"generator": "cylinder", "count": 1}], "noise": 0.0,
            "seed": 3, "points": 50})");
    EXPECT_EQ(spec.requests.size(), 2u);
    EXPECT_EQ(spec.points, 50u);
    EXPECT_THROW(dataset_spec_from_json(R"({"shapes": [], "colour": 1})"), ConfigError);
    const auto shapes = generate_dataset(spec.requests, spec.noise, spec.seed, spec.points);
    const auto dir = scratch_dir("dataset");
    write_dataset(dir, shapes);
    const auto back = read_dataset(dir);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].points, shapes[i].cloud.points);
        EXPECT_EQ(back[i].label, shapes[i].label);
    }
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RoundTripGivesBitIdenticalForward) {
    const TrainConfig cfg = tiny_config();
    const auto data = tiny_dataset(cfg);
    Trainer trainer(cfg, data);
    trainer.run();
    const auto dir = scratch_dir("ckpt");
    save_checkpoint(dir / "model.ckpt", trainer.model().parameters());

    TrainConfig other = cfg;
    other.seed = 99;
    Model fresh(other);
    load_checkpoint(dir / "model.ckpt", fresh.parameters());
    const PatchSet patches = build_patches(data[0], cfg.patches, cfg.k_patch, 1);
    const MaskPair masks = sample_masks(cfg.patches, cfg.mask_ratio, 2);
    NoGradGuard no_grad;
    const CloudForward a = forward_cloud(trainer.model(), cfg, patches, masks);
    const CloudForward b = forward_cloud(fresh, cfg, patches, masks);
    EXPECT_EQ(a.total.item(), b.total.item());
    EXPECT_EQ(a.scores_a.values(), b.scores_a.values());
    EXPECT_EQ(global_descriptor(trainer.model(), patches).values(), global_descriptor(fresh, patches).values());
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ArchitectureMismatchIsConfigError) {
    TrainConfig cfg = tiny_config();
    const std::string bytes = serialize_parameters(Model(cfg).parameters());
    cfg.embed_dim = 8;
    EXPECT_THROW(deserialize_parameters(bytes, Model(cfg).parameters()), ConfigError);
    cfg = tiny_config();
    cfg.encoder_depth = 2;
    EXPECT_THROW(deserialize_parameters(bytes, Model(cfg).parameters()), ConfigError);
}

TEST(Checkpoint, CorruptBytesAreFormatErrors) {
    const TrainConfig cfg = tiny_config();
    const Model model(cfg);
    const std::string bytes = serialize_parameters(model.parameters());
    EXPECT_THROW(deserialize_parameters(bytes.substr(0, bytes.size() - 3), model.parameters()), FormatError);
    EXPECT_THROW(deserialize_parameters("NOTACKPT" + bytes.substr(8), model.parameters()), FormatError);
    EXPECT_THROW(deserialize_parameters(bytes + "x", model.parameters()), FormatError);
}

TEST(Checkpoint, FailedLoadLeavesParametersUntouched) {
    const TrainConfig cfg = tiny_config();
    const Model model(cfg);
    const auto before = model.parameters().front().second.values();
    TrainConfig other = cfg;
    other.seed = 1;
    std::string bytes = serialize_parameters(Model(other).parameters());
    bytes.resize(bytes.size() - 8);
    EXPECT_THROW(deserialize_parameters(bytes, model.parameters()), FormatError);
    EXPECT_EQ(model.parameters().front().second.values(), before);
}

TEST(TrainStep, TotalIsSumOfTerms) {
    const TrainConfig cfg = tiny_config();
    Trainer trainer(cfg, tiny_dataset(cfg));
    for (const MetricsRecord& r : trainer.run()) {
        EXPECT_NEAR(r.l_total, r.l_ass + r.l_cts + r.l_contras, 1e-9);
        EXPECT_GT(r.grad_norm, 0.0);
        EXPECT_GE(r.sinkhorn_iters, 1u);
    }
}

TEST(TrainStep, ZeroLearningRateKeepsParametersBitIdentical) {
    TrainConfig cfg = tiny_config();
    cfg.learning_rate = 0.0;
    const auto data = tiny_dataset(cfg);
    Model model(cfg);
    AdamW opt(model.parameters(), {0.9, 0.999, 1e-8, cfg.weight_decay});
    std::vector<std::vector<double>> before;
    for (const auto& [n, p] : model.parameters()) {
        before.push_back(p.values());
    }
    const std::vector<std::size_t> ids{0, 1};
    train_step(std::span(data).first(2), ids, model, opt, cfg, 0, 10);
    std::size_t i = 0;
    for (const auto& [n, p] : model.parameters()) {
        EXPECT_EQ(p.values(), before[i++]) << n;
    }
}

TEST(TrainStep, DeterministicMetricsStream) {
    const TrainConfig cfg = tiny_config();
    const auto data = tiny_dataset(cfg);
    Trainer a(cfg, data);
    Trainer b(cfg, data);
    const auto ra = a.run();
    const auto rb = b.run();
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        EXPECT_TRUE(ra[i].same_values(rb[i])) << "step " << i;
    }
}

TEST(TrainStep, NonFiniteInputNamesTensor) {
    TrainConfig cfg = tiny_config();
    auto data = tiny_dataset(cfg);
    Model model(cfg);
    AdamW opt(model.parameters(), {});
    for (double& v : Tensor(model.mask_token).mutable_data()) {
        v = std::numeric_limits<double>::infinity();
    }
    const std::vector<std::size_t> ids{0};
    try {
        train_step(std::span(data).first(1), ids, model, opt, cfg, 0, 1);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("recon_a"), std::string::npos) << e.what();
    }
}

TEST(TrainStep, EmptyBatchIsContractError) {
    const TrainConfig cfg = tiny_config();
    Model model(cfg);
    AdamW opt(model.parameters(), {});
    EXPECT_THROW(train_step({}, {}, model, opt, cfg, 0, 1), ContractError);
}

TEST(Metrics, FilesWritten) {
    const TrainConfig cfg = tiny_config();
    Trainer trainer(cfg, tiny_dataset(cfg));
    const auto records = trainer.run();
    const auto dir = scratch_dir("metrics");
    write_metrics(dir, records);
    std::istringstream jsonl(slurp(dir / "metrics.jsonl"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(jsonl, line)) {
        EXPECT_NE(line.find("\"l_total\""), std::string::npos);
        ++lines;
    }
    EXPECT_EQ(lines, records.size());
    const std::string csv = slurp(dir / "summary.csv");
    EXPECT_EQ(csv.rfind("metric,first10_mean,last10_mean,min,max\n", 0), 0u);
    EXPECT_NE(csv.find("\nl_total,"), std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST(Probe, SingleClassIsContractError) {
    const std::vector<std::vector<double>> f(10, std::vector<double>{1.0, 2.0});
    const std::vector<int> labels(10, 3);
    EXPECT_THROW(fit_linear_probe(f, labels, {}), ContractError);
}

TEST(Probe, SeparableFeaturesAreLearned) {
    Rng rng(3);
    std::vector<std::vector<double>> f;
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) {
        const int l = i % 4;
        f.push_back({l + 0.1 * rng.normal(), rng.normal(), -l + 0.1 * rng.normal()});
        labels.push_back(l * 10);
    }
    const ProbeResult r = fit_linear_probe(f, labels, {});
    EXPECT_EQ(r.classes, 4u);
    EXPECT_EQ(r.test_count, 20u);
    EXPECT_EQ(r.train_count, 80u);
    EXPECT_GE(r.accuracy, 0.95);
}

TEST(Probe, LeavesBackboneBitIdentical) {
    const TrainConfig cfg = tiny_config();
    const auto data = tiny_dataset(cfg, 3);
    const Model model(cfg);
    std::vector<std::vector<double>> before;
    for (const auto& [n, p] : model.parameters()) {
        before.push_back(p.values());
    }
    const ProbeResult r = linear_probe(model, cfg, data, {50, 0.01, 0, false});
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
    std::size_t i = 0;
    for (const auto& [n, p] : model.parameters()) {
        EXPECT_EQ(p.values(), before[i++]) << n;
        EXPECT_FALSE(p.has_grad()) << n;
    }
}
