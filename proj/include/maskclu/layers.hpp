#pragma once

#include <string>
#include <utility>
#include <vector>

#include "maskclu/rng.hpp"
#include "maskclu/tensor.hpp"

namespace maskclu {

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

/// Appends `src` to `dst`, prefixing every name with `prefix + "."`.
void append_prefixed(NamedParameters& dst, const std::string& prefix, const NamedParameters& src);

/// Weight [in, out] drawn from U(-a, a) with a = sqrt(6 / (in + out)).
Tensor xavier_uniform(std::size_t in, std::size_t out, Rng& rng);

/// Tensor of the given shape with N(0, stddev^2) entries.
Tensor normal_init(Shape shape, double stddev, Rng& rng);

/// y = x W + b, x is [rows, in].
struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

    Tensor operator()(const Tensor& x) const;
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    NamedParameters parameters() const;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
    NamedParameters parameters() const { return {{"gain", gain}, {"bias", bias}}; }
};

}  // namespace maskclu
