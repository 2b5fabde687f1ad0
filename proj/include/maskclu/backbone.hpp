#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "maskclu/layers.hpp"
#include "maskclu/pointcloud.hpp"
#include "maskclu/tensor.hpp"

namespace maskclu {

/// Two independent random masks over N patches (true = masked).
struct MaskPair {
    std::vector<bool> mask_a;
    std::vector<bool> mask_b;
    double ratio = 0.0;
};

/// round(r * n) with ties to even.
std::size_t masked_count(std::size_t n, double ratio);

/// Exactly masked_count(n, r) entries set per view, drawn without replacement.
MaskPair sample_masks(std::size_t n, double ratio, std::uint64_t seed);

/// Attention probability matrices observed during a forward pass, one per
/// (block, head), in execution order. Values only.
struct AttentionTrace {
    std::vector<Tensor> weights;
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)) with a
/// 4x hidden expansion.
struct TransformerBlock {
    LayerNorm attn_norm;
    Linear qkv;
    Linear proj;
    LayerNorm mlp_norm;
    Linear fc1;
    Linear fc2;
    std::size_t heads = 1;

    TransformerBlock() = default;
    TransformerBlock(std::size_t dim, std::size_t heads, Rng& rng);

    Tensor operator()(const Tensor& x, AttentionTrace* trace = nullptr) const;
    NamedParameters parameters() const;
};

/// A stack of transformer blocks with a final norm, a positional MLP on patch
/// centers (3 -> d -> d) and, for the encoder, a learnable class token.
struct ViTStack {
    std::vector<TransformerBlock> blocks;
    LayerNorm final_norm;
    Linear pos_in;
    Linear pos_out;
    Tensor class_token;  // [1, d]; empty for stacks without one

    ViTStack() = default;
    ViTStack(std::size_t dim, std::size_t depth, std::size_t heads, bool with_class_token, Rng& rng);

    std::size_t dim() const { return final_norm.gain.numel(); }
    bool has_class_token() const { return class_token.numel() > 0; }

    /// Positional embeddings [rows, d] for the given center coordinates.
    Tensor positional(std::span<const Vec3> centers) const;
    /// Runs all blocks and the final norm; output shape equals input shape.
    Tensor run(const Tensor& sequence, AttentionTrace* trace = nullptr) const;
    NamedParameters parameters() const;
};

struct EncodedView {
    Tensor f_cls;             // [1, d]
    Tensor visible_features;  // [visible, d], ascending patch index
    std::vector<std::size_t> visible_indices;
};

struct ReconstructedFeatures {
    Tensor features;  // [N, d], original patch order
};

/// Runs the encoder on [class token; visible tokens + positional(centers)].
EncodedView encode(const Tensor& tokens, std::span<const Vec3> centers, const std::vector<bool>& mask,
                   const ViTStack& encoder, AttentionTrace* trace = nullptr);

/// Decoder input is the visible features followed by one mask token per masked
/// patch, each row plus the positional embedding of its center. The output is
/// scattered back to original patch order.
ReconstructedFeatures decode(const EncodedView& view, std::span<const Vec3> centers, const std::vector<bool>& mask,
                             const ViTStack& decoder, const Tensor& mask_token, AttentionTrace* trace = nullptr);

/// The decoder's input sequence in visible-then-masked order (exposed for tests).
Tensor decoder_input(const EncodedView& view, std::span<const Vec3> centers, const std::vector<bool>& mask,
                     const ViTStack& decoder, const Tensor& mask_token);

}  // namespace maskclu
