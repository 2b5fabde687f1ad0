#include "maskclu/contrastive.hpp"

#include "maskclu/errors.hpp"

namespace maskclu {

Tensor global_pool(const Tensor& features) {
    if (features.rank() != 2 || features.rows() == 0) {
        throw ContractError("global_pool: need at least one feature row");
    }
    return max_rows(features);
}

Tensor cosine_rows(const Tensor& f, const Tensor& z) {
    if (f.rank() != 2 || f.shape() != z.shape()) {
        throw DimensionError("cosine: shapes " + shape_str(f.shape()) + " and " + shape_str(z.shape()) + " differ");
    }
    const Tensor f_sq = sum_axis(square(f), 1);
    const Tensor z_sq = sum_axis(square(z), 1);
    for (std::size_t i = 0; i < f_sq.numel(); ++i) {
        if (!(f_sq.data()[i] > 0.0) || !(z_sq.data()[i] > 0.0)) {
            throw DomainError("cosine: zero-norm vector");
        }
    }
    return div(sum_axis(mul(f, z), 1), sqrt(mul(f_sq, z_sq)));
}

Tensor siamese_distance(const Tensor& f, const Tensor& z) {
    const Tensor s1 = cosine_rows(f, stop_gradient(z));
    const Tensor s2 = cosine_rows(stop_gradient(f), z);
    return mean(add_scalar(neg(add(s1, s2)), 2.0));
}

Tensor contrastive_loss(const Tensor& f_a, const Tensor& z_b, const Tensor& f_b, const Tensor& z_a) {
    return add(siamese_distance(f_a, z_b), siamese_distance(f_b, z_a));
}

}  // namespace maskclu
