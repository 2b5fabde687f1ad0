#include "maskclu/model.hpp"

#include <cmath>

#include "maskclu/contrastive.hpp"
#include "maskclu/errors.hpp"

namespace maskclu {

namespace {

Rng seeded_rng(const TrainConfig& cfg) {
    cfg.validate();
    return Rng(mix_seed(cfg.seed, 0x6d6f64656cULL));
}

}  // namespace

Model::Model(const TrainConfig& cfg) {
    Rng rng = seeded_rng(cfg);
    point_encoder = MiniPointNet(cfg.embed_dim, rng);
    encoder = ViTStack(cfg.embed_dim, cfg.encoder_depth, cfg.heads, true, rng);
    decoder = ViTStack(cfg.embed_dim, cfg.decoder_depth, cfg.heads, false, rng);
    mask_token = normal_init({1, cfg.embed_dim}, 0.02, rng);
    head = ClusterHead(cfg.embed_dim, cfg.embed_dim, cfg.clusters, cfg.temperature, rng);
}

NamedParameters Model::parameters() const {
    NamedParameters p;
    append_prefixed(p, "point_encoder", point_encoder.parameters());
    append_prefixed(p, "encoder", encoder.parameters());
    append_prefixed(p, "decoder", decoder.parameters());
    p.emplace_back("mask_token", mask_token);
    append_prefixed(p, "head", head.parameters());
    return p;
}

std::string CloudForward::first_non_finite() const {
    const std::pair<const char*, const Tensor*> named[] = {
        {"tokens", &tokens},
        {"view_a.f_cls", &view_a.f_cls},
        {"view_a.visible_features", &view_a.visible_features},
        {"view_b.f_cls", &view_b.f_cls},
        {"view_b.visible_features", &view_b.visible_features},
        {"recon_a.features", &recon_a.features},
        {"recon_b.features", &recon_b.features},
        {"graph_a.weights", &graph_a.weights},
        {"graph_b.weights", &graph_b.weights},
        {"scores_a", &scores_a},
        {"scores_b", &scores_b},
        {"pooled_a", &pooled_a},
        {"pooled_b", &pooled_b},
        {"plan_ab", &plan_ab.plan},
        {"plan_ba", &plan_ba.plan},
        {"l_ass", &l_ass},
        {"l_cts", &l_cts},
        {"l_contras", &l_contras},
        {"l_total", &total},
    };
    for (const auto& [name, t] : named) {
        for (double v : t->data()) {
            if (!std::isfinite(v)) {
                return name;
            }
        }
    }
    return {};
}

namespace {

std::vector<Vec3> rows_to_points(const Tensor& t) {
    std::vector<Vec3> out(t.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = {t.at(i, 0), t.at(i, 1), t.at(i, 2)};
    }
    return out;
}

void require_finite(const char* name, const Tensor& t) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value in '") + name + "'");
        }
    }
}

}  // namespace

CloudForward forward_cloud(const Model& model, const TrainConfig& cfg, const PatchSet& patches,
                           const MaskPair& masks) {
    CloudForward out;
    const auto& centers = patches.centers;
    out.tokens = embed_patches(patches, model.point_encoder);
    require_finite("tokens", out.tokens);

    out.view_a = encode(out.tokens, centers, masks.mask_a, model.encoder);
    out.view_b = encode(out.tokens, centers, masks.mask_b, model.encoder);
    out.recon_a = decode(out.view_a, centers, masks.mask_a, model.decoder, model.mask_token);
    out.recon_b = decode(out.view_b, centers, masks.mask_b, model.decoder, model.mask_token);
    require_finite("view_a.f_cls", out.view_a.f_cls);
    require_finite("view_a.visible_features", out.view_a.visible_features);
    require_finite("view_b.f_cls", out.view_b.f_cls);
    require_finite("view_b.visible_features", out.view_b.visible_features);
    require_finite("recon_a.features", out.recon_a.features);
    require_finite("recon_b.features", out.recon_b.features);

    out.graph_a = build_graph(centers, out.recon_a.features, cfg.k_graph);
    out.graph_b = build_graph(centers, out.recon_b.features, cfg.k_graph);
    out.scores_a = cluster_scores(message_pass(out.graph_a, out.recon_a.features, model.head), model.head);
    out.scores_b = cluster_scores(message_pass(out.graph_b, out.recon_b.features, model.head), model.head);
    out.pooled_a = pool_centers(out.scores_a, centers);
    out.pooled_b = pool_centers(out.scores_b, centers);
    require_finite("scores_a", out.scores_a);
    require_finite("scores_b", out.scores_b);

    const SinkhornConfig sk = cfg.sinkhorn();
    out.plan_ab = sinkhorn_assign(centers, rows_to_points(out.pooled_b), sk);
    out.plan_ba = sinkhorn_assign(centers, rows_to_points(out.pooled_a), sk);

    out.l_ass = assignment_loss(out.scores_a, out.plan_ab.plan, out.scores_b, out.plan_ba.plan);
    out.l_cts = center_loss(centers, centers, out.pooled_a, out.pooled_b);
    out.l_contras = contrastive_loss(out.view_a.f_cls, global_pool(out.view_b.visible_features), out.view_b.f_cls,
                                     global_pool(out.view_a.visible_features));
    out.total = add(add(out.l_ass, out.l_cts), out.l_contras);
    return out;
}

Tensor global_descriptor(const Model& model, const PatchSet& patches) {
    const Tensor tokens = embed_patches(patches, model.point_encoder);
    const std::vector<bool> none(patches.count(), false);
    const EncodedView view = encode(tokens, patches.centers, none, model.encoder);
    return concat_cols({view.f_cls, global_pool(view.visible_features)});
}

Tensor cluster_cloud(const Model& model, const TrainConfig& cfg, const PatchSet& patches) {
    const Tensor tokens = embed_patches(patches, model.point_encoder);
    const std::vector<bool> none(patches.count(), false);
    const EncodedView view = encode(tokens, patches.centers, none, model.encoder);
    const ReconstructedFeatures recon = decode(view, patches.centers, none, model.decoder, model.mask_token);
    const AffinityGraph graph = build_graph(patches.centers, recon.features, cfg.k_graph);
    return cluster_scores(message_pass(graph, recon.features, model.head), model.head);
}

}  // namespace maskclu
