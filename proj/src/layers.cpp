#include "maskclu/layers.hpp"

#include <cmath>

namespace maskclu {

void append_prefixed(NamedParameters& dst, const std::string& prefix, const NamedParameters& src) {
    for (const auto& [name, t] : src) {
        dst.emplace_back(prefix + "." + name, t);
    }
}

Tensor xavier_uniform(std::size_t in, std::size_t out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> v(in * out);
    for (double& x : v) {
        x = rng.uniform(-a, a);
    }
    return Tensor::from({in, out}, std::move(v), true);
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.normal(0.0, stddev);
    }
    return Tensor::from(std::move(shape), std::move(v), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(xavier_uniform(in, out, rng)) {
    if (with_bias) {
        bias = Tensor::zeros({out}, true);
    }
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.numel() > 0 ? add(y, bias) : y;
}

NamedParameters Linear::parameters() const {
    NamedParameters p{{"weight", weight}};
    if (bias.numel() > 0) {
        p.emplace_back("bias", bias);
    }
    return p;
}

LayerNorm::LayerNorm(std::size_t width)
    : gain(Tensor::full({width}, 1.0, true)), bias(Tensor::zeros({width}, true)) {}

}  // namespace maskclu
