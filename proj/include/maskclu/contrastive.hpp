#pragma once

#include "maskclu/tensor.hpp"

namespace maskclu {

/// Column-wise max over rows, [M, d] -> [1, d].
Tensor global_pool(const Tensor& features);

/// Row-wise cosine similarity of two [B, d] tensors -> [B, 1].
Tensor cosine_rows(const Tensor& f, const Tensor& z);

/// 2 - cos(f, stop(z)) - cos(stop(f), z), averaged over rows. Each argument
/// receives gradient only through the term in which it is not detached.
Tensor siamese_distance(const Tensor& f, const Tensor& z);

/// Batch mean of D(f_a, z_b) + D(f_b, z_a).
Tensor contrastive_loss(const Tensor& f_a, const Tensor& z_b, const Tensor& f_b, const Tensor& z_a);

}  // namespace maskclu
