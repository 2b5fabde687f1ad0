#include "maskclu/backbone.hpp"

#include <cmath>
#include <numeric>

#include "maskclu/errors.hpp"

namespace maskclu {

std::size_t masked_count(std::size_t n, double ratio) {
    // nearbyint under the default rounding mode rounds half to even.
    return static_cast<std::size_t>(std::nearbyint(ratio * static_cast<double>(n)));
}

MaskPair sample_masks(std::size_t n, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ParameterError("sample_masks: mask ratio must lie in (0, 1)");
    }
    const std::size_t count = masked_count(n, ratio);
    if (count == 0 || count >= n) {
        throw ParameterError("sample_masks: ratio " + std::to_string(ratio) + " masks " + std::to_string(count) +
                             " of " + std::to_string(n) + " patches; need between 1 and n-1");
    }
    Rng rng(seed);
    auto draw = [&] {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        std::vector<bool> mask(n, false);
        for (std::size_t i = 0; i < count; ++i) {
            mask[order[i]] = true;
        }
        return mask;
    };
    MaskPair pair;
    pair.ratio = ratio;
    pair.mask_a = draw();
    pair.mask_b = draw();
    return pair;
}

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads_, Rng& rng)
    : attn_norm(dim),
      qkv(dim, 3 * dim, rng),
      proj(dim, dim, rng),
      mlp_norm(dim),
      fc1(dim, 4 * dim, rng),
      fc2(4 * dim, dim, rng),
      heads(heads_) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("TransformerBlock: embedding width " + std::to_string(dim) +
                          " is not divisible by " + std::to_string(heads) + " heads");
    }
}

Tensor TransformerBlock::operator()(const Tensor& x, AttentionTrace* trace) const {
    const std::size_t dim = x.cols();
    const std::size_t head_dim = dim / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Tensor packed = qkv(attn_norm(x));
    std::vector<Tensor> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor q = slice_cols(packed, h * head_dim, head_dim);
        Tensor k = slice_cols(packed, dim + h * head_dim, head_dim);
        Tensor v = slice_cols(packed, 2 * dim + h * head_dim, head_dim);
        Tensor attn = softmax(scale(matmul(q, transpose(k)), scale_factor));
        if (trace) {
            trace->weights.push_back(attn.detach());
        }
        outputs.push_back(matmul(attn, v));
    }
    Tensor y = add(x, proj(heads == 1 ? outputs.front() : concat_cols(outputs)));
    return add(y, fc2(relu(fc1(mlp_norm(y)))));
}

NamedParameters TransformerBlock::parameters() const {
    NamedParameters p;
    append_prefixed(p, "attn_norm", attn_norm.parameters());
    append_prefixed(p, "qkv", qkv.parameters());
    append_prefixed(p, "proj", proj.parameters());
    append_prefixed(p, "mlp_norm", mlp_norm.parameters());
    append_prefixed(p, "fc1", fc1.parameters());
    append_prefixed(p, "fc2", fc2.parameters());
    return p;
}

ViTStack::ViTStack(std::size_t dim, std::size_t depth, std::size_t heads, bool with_class_token, Rng& rng)
    : final_norm(dim), pos_in(3, dim, rng), pos_out(dim, dim, rng) {
    blocks.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i) {
        blocks.emplace_back(dim, heads, rng);
    }
    if (with_class_token) {
        class_token = normal_init({1, dim}, 0.02, rng);
    }
}

Tensor ViTStack::positional(std::span<const Vec3> centers) const {
    std::vector<double> v;
    v.reserve(centers.size() * 3);
    for (const Vec3& c : centers) {
        v.insert(v.end(), c.begin(), c.end());
    }
    return pos_out(relu(pos_in(Tensor::from({centers.size(), 3}, std::move(v)))));
}

Tensor ViTStack::run(const Tensor& sequence, AttentionTrace* trace) const {
    if (sequence.rank() != 2 || sequence.cols() != dim()) {
        throw DimensionError("ViTStack: expected [L, " + std::to_string(dim()) + "] input, got " +
                             shape_str(sequence.shape()));
    }
    Tensor x = sequence;
    for (const TransformerBlock& block : blocks) {
        x = block(x, trace);
    }
    return final_norm(x);
}

NamedParameters ViTStack::parameters() const {
    NamedParameters p;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        append_prefixed(p, "blocks." + std::to_string(i), blocks[i].parameters());
    }
    append_prefixed(p, "final_norm", final_norm.parameters());
    append_prefixed(p, "pos_in", pos_in.parameters());
    append_prefixed(p, "pos_out", pos_out.parameters());
    if (has_class_token()) {
        p.emplace_back("class_token", class_token);
    }
    return p;
}

namespace {

void split_mask(const std::vector<bool>& mask, std::vector<std::size_t>& visible, std::vector<std::size_t>& masked) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
        (mask[i] ? masked : visible).push_back(i);
    }
}

std::vector<Vec3> select(std::span<const Vec3> centers, const std::vector<std::size_t>& idx) {
    std::vector<Vec3> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        out.push_back(centers[i]);
    }
    return out;
}

}  // namespace

EncodedView encode(const Tensor& tokens, std::span<const Vec3> centers, const std::vector<bool>& mask,
                   const ViTStack& encoder, AttentionTrace* trace) {
    const std::size_t n = centers.size();
    if (tokens.rank() != 2 || tokens.rows() != n || mask.size() != n || tokens.cols() != encoder.dim()) {
        throw DimensionError("encode: tokens " + shape_str(tokens.shape()) + ", " + std::to_string(n) +
                             " centers and mask of length " + std::to_string(mask.size()) + " are inconsistent");
    }
    if (!encoder.has_class_token()) {
        throw ConfigError("encode: encoder stack has no class token");
    }
    EncodedView view;
    std::vector<std::size_t> masked;
    split_mask(mask, view.visible_indices, masked);
    if (view.visible_indices.empty()) {
        throw ParameterError("encode: every patch is masked");
    }
    const Tensor visible = add(gather_rows(tokens, view.visible_indices),
                               encoder.positional(select(centers, view.visible_indices)));
    const Tensor out = encoder.run(concat_rows({encoder.class_token, visible}), trace);
    const std::size_t rows = out.rows();
    std::vector<std::size_t> body(rows - 1);
    std::iota(body.begin(), body.end(), std::size_t{1});
    const std::size_t first = 0;
    view.f_cls = gather_rows(out, std::span<const std::size_t>(&first, 1));
    view.visible_features = gather_rows(out, body);
    return view;
}

Tensor decoder_input(const EncodedView& view, std::span<const Vec3> centers, const std::vector<bool>& mask,
                     const ViTStack& decoder, const Tensor& mask_token) {
    const std::size_t n = centers.size();
    if (mask.size() != n || mask_token.numel() != decoder.dim()) {
        throw DimensionError("decode: mask, centers and mask token do not match the decoder width");
    }
    std::vector<std::size_t> visible;
    std::vector<std::size_t> masked;
    split_mask(mask, visible, masked);
    if (visible != view.visible_indices || view.visible_features.rows() != visible.size()) {
        throw DimensionError("decode: encoded view does not correspond to the given mask");
    }
    std::vector<Tensor> parts{add(view.visible_features, decoder.positional(select(centers, visible)))};
    if (!masked.empty()) {
        parts.push_back(add(decoder.positional(select(centers, masked)), mask_token));
    }
    return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

ReconstructedFeatures decode(const EncodedView& view, std::span<const Vec3> centers, const std::vector<bool>& mask,
                             const ViTStack& decoder, const Tensor& mask_token, AttentionTrace* trace) {
    const Tensor out = decoder.run(decoder_input(view, centers, mask, decoder, mask_token), trace);
    // Sequence position of each original patch: visible ones first, then masked.
    std::vector<std::size_t> position(mask.size());
    std::size_t next = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) {
            position[i] = next++;
        }
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            position[i] = next++;
        }
    }
    return {gather_rows(out, position)};
}

}  // namespace maskclu
