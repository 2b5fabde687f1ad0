#include "maskclu/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "maskclu/backbone.hpp"
#include "maskclu/clustering.hpp"
#include "maskclu/contrastive.hpp"
#include "maskclu/dataset.hpp"
#include "maskclu/geo_graph.hpp"
#include "maskclu/model.hpp"
#include "maskclu/rng.hpp"
#include "maskclu/tensor.hpp"

namespace maskclu {

namespace {

double evaluate(const std::function<Tensor()>& loss, StopGradientTrace& trace) {
    trace.set_mode(StopGradientTrace::Mode::replay);
    StopGradientTraceScope scope(trace);
    NoGradGuard no_grad;
    return loss().item();
}

double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

GradCheckReport check_gradients(const std::string& name, const std::function<Tensor()>& loss,
                                const NamedParameters& inputs, const GradCheckOptions& options) {
    GradCheckReport report;
    report.name = name;
    for (const auto& [n, t] : inputs) {
        Tensor(t).zero_grad();
    }
    StopGradientTrace trace(StopGradientTrace::Mode::record);
    {
        StopGradientTraceScope scope(trace);
        loss().backward();
    }
    report.evaluations = 1;

    Rng rng(options.seed ^ 0x67726164ULL);
    const double h = options.step;
    for (const auto& [input_name, input] : inputs) {
        Tensor t = input;
        const std::vector<double> analytic = t.grad();
        auto data = t.mutable_data();
        double err = 0.0;
        if (t.numel() <= options.max_entries) {
            double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double saved = data[i];
                data[i] = saved + h;
                const double up = evaluate(loss, trace);
                data[i] = saved - h;
                const double down = evaluate(loss, trace);
                data[i] = saved;
                report.evaluations += 2;
                const double numeric = (up - down) / (2.0 * h);
                diff_sq += (numeric - analytic[i]) * (numeric - analytic[i]);
                a_sq += analytic[i] * analytic[i];
                n_sq += numeric * numeric;
            }
            err = std::sqrt(diff_sq) / std::max({std::sqrt(a_sq), std::sqrt(n_sq), options.abs_floor});
        } else {
            const std::vector<double> saved(data.begin(), data.end());
            for (std::size_t d = 0; d < options.directions; ++d) {
                std::vector<double> dir(data.size());
                double projected = 0.0;
                for (std::size_t i = 0; i < dir.size(); ++i) {
                    dir[i] = rng.normal();
                    projected += dir[i] * analytic[i];
                }
                for (std::size_t i = 0; i < dir.size(); ++i) {
                    data[i] = saved[i] + h * dir[i];
                }
                const double up = evaluate(loss, trace);
                for (std::size_t i = 0; i < dir.size(); ++i) {
                    data[i] = saved[i] - h * dir[i];
                }
                const double down = evaluate(loss, trace);
                std::copy(saved.begin(), saved.end(), data.begin());
                report.evaluations += 2;
                err = std::max(err, relative_error((up - down) / (2.0 * h), projected, options.abs_floor));
            }
        }
        if (report.worst_input.empty() || err > report.max_error) {
            report.max_error = err;
            report.worst_input = input_name;
        }
        t.zero_grad();
    }
    report.passed = report.max_error <= options.tolerance;
    return report;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero by `margin`, for ops with a kink at 0.
Tensor away_from_zero(Shape shape, Rng& rng, double margin) {
    Tensor t = random_tensor(std::move(shape), rng);
    for (double& x : t.mutable_data()) {
        if (std::abs(x) < margin) {
            x = x < 0.0 ? x - margin : x + margin;
        }
    }
    return t;
}

Tensor weighted(const Tensor& out, Rng& rng) {
    return sum(mul(out, random_tensor(out.shape(), rng, -1.0, 1.0, false)));
}

std::vector<Vec3> random_points(std::size_t n, Rng& rng) {
    std::vector<Vec3> p(n);
    for (auto& v : p) {
        v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    }
    return p;
}

// Zero biases put the patch-center point (relative coordinate 0) exactly on a
// relu kink, so the toy model gets small random biases instead.
void jitter_biases(const NamedParameters& params, Rng& rng) {
    for (const auto& [name, t] : params) {
        if (name.ends_with("bias")) {
            for (double& x : Tensor(t).mutable_data()) {
                x += rng.uniform(-0.1, 0.1);
            }
        }
    }
}

// Desk-sized toy configuration used for the block and pipeline checks.
TrainConfig toy_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.points_per_cloud = 16;
    cfg.patches = 8;
    cfg.k_patch = 4;
    cfg.k_graph = 4;
    cfg.embed_dim = 16;
    cfg.encoder_depth = 2;
    cfg.decoder_depth = 1;
    cfg.heads = 2;
    cfg.clusters = 3;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
    const Precision saved_precision = matmul_precision();
    set_matmul_precision(Precision::f64);
    std::vector<GradCheckReport> reports;
    Rng rng(mix_seed(seed, 0x7375697465ULL));
    auto run = [&](const std::string& name, const std::function<Tensor()>& f, const NamedParameters& in) {
        GradCheckOptions o = options;
        o.seed = mix_seed(seed, reports.size());
        reports.push_back(check_gradients(name, f, in, o));
    };

    {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
        run("matmul", [=, &rng, r = random_tensor({3, 2}, rng, -1, 1, false)] { return sum(mul(matmul(a, b), r)); },
            {{"a", a}, {"b", b}});
    }
    {
        Tensor a = random_tensor({3, 4}, rng), row = random_tensor({4}, rng), col = random_tensor({3, 1}, rng);
        Tensor pos = random_tensor({3, 4}, rng, 0.5, 2.0);
        Tensor r = random_tensor({3, 4}, rng, -1, 1, false);
        run("elementwise",
            [=] {
                Tensor x = add(mul(a, row), sub(pos, col));
                x = add(x, div(a, pos));
                x = add(x, add(exp(scale(a, 0.5)), log(pos)));
                x = add(x, add(sqrt(pos), neg(square(a))));
                return sum(mul(add_scalar(x, 0.25), r));
            },
            {{"a", a}, {"row", row}, {"col", col}, {"pos", pos}});
    }
    {
        Tensor x = away_from_zero({4, 5}, rng, 1e-3);
        Tensor r = random_tensor({4, 5}, rng, -1, 1, false);
        run("relu", [=] { return sum(mul(relu(x), r)); }, {{"x", x}});
    }
    {
        Tensor x = random_tensor({4, 5}, rng, -2.0, 2.0);
        Tensor r = random_tensor({4, 5}, rng, -1, 1, false);
        run("softmax", [=] { return sum(mul(softmax(x, 0.7), r)); }, {{"x", x}});
    }
    {
        Tensor x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng, 0.5, 1.5), b = random_tensor({6}, rng);
        Tensor r = random_tensor({4, 6}, rng, -1, 1, false);
        run("layer_norm", [=] { return sum(mul(layer_norm(x, g, b), r)); }, {{"x", x}, {"gain", g}, {"bias", b}});
    }
    {
        Tensor x = random_tensor({6, 3}, rng), y = random_tensor({6, 2}, rng);
        const std::vector<std::size_t> idx{4, 0, 4, 2};
        Tensor r1 = random_tensor({1, 3}, rng, -1, 1, false), r2 = random_tensor({3, 3}, rng, -1, 1, false);
        Tensor r3 = random_tensor({4, 5}, rng, -1, 1, false), r4 = random_tensor({12, 2}, rng, -1, 1, false);
        run("structural",
            [=] {
                Tensor total = sum(mul(max_rows(x), r1));
                total = add(total, sum(mul(segment_max_rows(x, 2), r2)));
                total = add(total, sum(mul(gather_rows(concat_cols({x, y}), idx), r3)));
                total = add(total, sum(mul(repeat_rows(slice_cols(y, 0, 2), 2), r4)));
                total = add(total, sum(mul(sum_axis(transpose(x), 1), transpose(sum_axis(square(x), 0)))));
                return add(total, sum(concat_rows({x, scale(x, 2.0)})));
            },
            {{"x", x}, {"y", y}});
    }

    {
        const std::size_t n = 6, dim = 8;
        ClusterHead head(dim, dim, 3, 1.0, rng);
        const auto centers = random_points(n, rng);
        Tensor feats = random_tensor({n, dim}, rng);
        const AffinityGraph graph = build_graph(centers, feats.detach(), 3);
        Tensor r = random_tensor({n, dim}, rng, -1, 1, false);
        run("message_pass", [=] { return sum(mul(message_pass(graph, feats, head), r)); },
            {{"features", feats}, {"W_m", head.mix}, {"W_s", head.skip}});
    }
    {
        const std::size_t n = 6, dim = 8;
        ClusterHead head(dim, dim, 4, 0.8, rng);
        Tensor hidden = random_tensor({n, dim}, rng);
        Tensor r = random_tensor({n, 4}, rng, -1, 1, false);
        run("cluster_scores", [=] { return sum(mul(cluster_scores(hidden, head), r)); },
            {{"hidden", hidden}, {"W_1", head.hidden}, {"W_2", head.out}});
    }
    {
        const auto centers = random_points(8, rng);
        Tensor logits = random_tensor({8, 3}, rng);
        Tensor r = random_tensor({3, 3}, rng, -1, 1, false);
        run("pool_centers", [=] { return sum(mul(pool_centers(softmax(logits), centers), r)); },
            {{"logits", logits}});
    }
    {
        const auto ca = random_points(8, rng), cb = random_points(8, rng);
        Tensor pa = random_tensor({3, 3}, rng), pb = random_tensor({3, 3}, rng);
        run("center_loss", [=] { return center_loss(ca, cb, pa, pb); }, {{"pooled_a", pa}, {"pooled_b", pb}});
    }
    {
        const auto centers = random_points(8, rng);
        Tensor la = random_tensor({8, 3}, rng), lb = random_tensor({8, 3}, rng);
        const SinkhornConfig sk{0.05, 500, 1e-9};
        const Tensor gab = sinkhorn_assign(centers, random_points(3, rng), sk).plan;
        const Tensor gba = sinkhorn_assign(centers, random_points(3, rng), sk).plan;
        run("assignment_loss", [=] { return assignment_loss(softmax(la), gab, softmax(lb), gba); },
            {{"logits_ab", la}, {"logits_ba", lb}});
    }
    {
        Tensor f = random_tensor({1, 8}, rng), z = random_tensor({1, 8}, rng);
        run("siamese_distance", [=] { return siamese_distance(f, z); }, {{"f", f}, {"z", z}});
        Tensor fa = random_tensor({1, 8}, rng), zb = random_tensor({1, 8}, rng);
        Tensor fb = random_tensor({1, 8}, rng), za = random_tensor({1, 8}, rng);
        run("contrastive_loss", [=] { return contrastive_loss(fa, zb, fb, za); },
            {{"f_a", fa}, {"z_b", zb}, {"f_b", fb}, {"z_a", za}});
    }
    {
        const auto centers = random_points(10, rng);
        Tensor feats = random_tensor({10, 6}, rng);
        Tensor r = random_tensor({10, 10}, rng, -1, 1, false);
        run("build_graph", [=] { return sum(mul(build_graph(centers, feats, 4).weights, r)); },
            {{"features", feats}});
    }

    const TrainConfig cfg = toy_config(seed);
    Model model(cfg);
    jitter_biases(model.parameters(), rng);
    PointCloud cloud{random_points(cfg.points_per_cloud, rng), std::nullopt};
    const PatchSet patches = build_patches(cloud, cfg.patches, cfg.k_patch, mix_seed(seed, 1));
    const MaskPair masks = sample_masks(cfg.patches, cfg.mask_ratio, mix_seed(seed, 2));
    {
        Tensor r = random_tensor({cfg.patches, cfg.embed_dim}, rng, -1, 1, false);
        run("embed_patches", [&, r] { return sum(mul(embed_patches(patches, model.point_encoder), r)); },
            model.point_encoder.parameters());
    }
    {
        Tensor tokens = random_tensor({cfg.patches, cfg.embed_dim}, rng);
        const std::size_t visible = cfg.patches - masked_count(cfg.patches, cfg.mask_ratio);
        Tensor r1 = random_tensor({1, cfg.embed_dim}, rng, -1, 1, false);
        Tensor r2 = random_tensor({visible, cfg.embed_dim}, rng, -1, 1, false);
        NamedParameters in = model.encoder.parameters();
        in.emplace_back("tokens", tokens);
        run("encoder_blocks",
            [&, tokens, r1, r2] {
                const EncodedView v = encode(tokens, patches.centers, masks.mask_a, model.encoder);
                return add(sum(mul(v.f_cls, r1)), sum(mul(v.visible_features, r2)));
            },
            in);

        Tensor rd = random_tensor({cfg.patches, cfg.embed_dim}, rng, -1, 1, false);
        NamedParameters dec = model.decoder.parameters();
        dec.emplace_back("mask_token", model.mask_token);
        run("decoder_blocks",
            [&, tokens, rd] {
                const EncodedView v = encode(tokens, patches.centers, masks.mask_a, model.encoder);
                return sum(mul(decode(v, patches.centers, masks.mask_a, model.decoder, model.mask_token).features, rd));
            },
            dec);
    }
    run("full_pipeline", [&] { return forward_cloud(model, cfg, patches, masks).total; }, model.parameters());
    set_matmul_precision(saved_precision);
    return reports;
}

}  // namespace maskclu
