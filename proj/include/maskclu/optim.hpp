#pragma once

#include <span>
#include <vector>

#include "maskclu/layers.hpp"

namespace maskclu {

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::size_t steps = 0;
};

/// One AdamW step: param *= (1 - lr * weight_decay), then the bias-corrected
/// Adam update from the gradient.
void adamw_update(std::span<double> param, std::span<const double> grad, AdamState& state, double lr, double beta1,
                  double beta2, double eps, double weight_decay);

class AdamW {
  public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.05;
    };

    AdamW(NamedParameters params, Options options);

    /// Applies one update to every parameter using its accumulated gradient.
    void step(double lr);
    void zero_grad();
    /// L2 norm of all accumulated gradients.
    double grad_norm() const;
    const NamedParameters& parameters() const { return params_; }

  private:
    NamedParameters params_;
    Options options_;
    std::vector<AdamState> states_;
};

}  // namespace maskclu
