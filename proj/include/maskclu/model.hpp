#pragma once

#include <string>
#include <vector>

#include "maskclu/backbone.hpp"
#include "maskclu/clustering.hpp"
#include "maskclu/config.hpp"
#include "maskclu/geo_graph.hpp"
#include "maskclu/pointcloud.hpp"

namespace maskclu {

/// All learnable parts of the dual-mask Siamese autoencoder with its clustering
/// head. Both views run through the same encoder and decoder.
struct Model {
    MiniPointNet point_encoder;
    ViTStack encoder;
    ViTStack decoder;
    Tensor mask_token;  // [1, d]
    ClusterHead head;

    /// Parameters drawn from a generator seeded with cfg.seed.
    explicit Model(const TrainConfig& cfg);

    NamedParameters parameters() const;
};

/// Everything one cloud contributes to a training step.
struct CloudForward {
    Tensor tokens;
    EncodedView view_a;
    EncodedView view_b;
    ReconstructedFeatures recon_a;
    ReconstructedFeatures recon_b;
    AffinityGraph graph_a;
    AffinityGraph graph_b;
    Tensor scores_a;
    Tensor scores_b;
    Tensor pooled_a;
    Tensor pooled_b;
    SinkhornResult plan_ab;  // centers vs pooled_b, paired with scores_a
    SinkhornResult plan_ba;  // centers vs pooled_a, paired with scores_b
    Tensor l_ass;
    Tensor l_cts;
    Tensor l_contras;
    Tensor total;

    /// Name of the first intermediate holding a non-finite value, or empty.
    std::string first_non_finite() const;
};

/// Full pipeline for one patchified cloud and one mask pair:
/// embed, encode/decode both views, graph, clustering head, cross-view
/// Sinkhorn targets, and the three loss terms. A non-finite intermediate is a
/// NumericError naming it.
CloudForward forward_cloud(const Model& model, const TrainConfig& cfg, const PatchSet& patches, const MaskPair& masks);

/// Global descriptor used by the linear probe: concat(f_cls, max-pool of patch
/// features) from the encoder on the unmasked token sequence, [1, 2d].
Tensor global_descriptor(const Model& model, const PatchSet& patches);

/// Per-patch cluster scores with every patch visible.
Tensor cluster_cloud(const Model& model, const TrainConfig& cfg, const PatchSet& patches);

}  // namespace maskclu
