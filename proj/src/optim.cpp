#include "maskclu/optim.hpp"

#include <cmath>
#include <numbers>

#include "maskclu/errors.hpp"

namespace maskclu {

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
    if (total_steps == 0 || step > total_steps) {
        throw ParameterError("cosine_lr: need 0 <= step <= total_steps with total_steps > 0");
    }
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_update(std::span<double> param, std::span<const double> grad, AdamState& state, double lr, double beta1,
                  double beta2, double eps, double weight_decay) {
    if (grad.size() != param.size()) {
        throw DimensionError("adamw_update: gradient and parameter sizes differ");
    }
    if (state.first_moment.empty()) {
        state.first_moment.assign(param.size(), 0.0);
        state.second_moment.assign(param.size(), 0.0);
    }
    state.steps += 1;
    const double t = static_cast<double>(state.steps);
    const double correction1 = 1.0 - std::pow(beta1, t);
    const double correction2 = 1.0 - std::pow(beta2, t);
    const double decay = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = beta1 * m + (1.0 - beta1) * grad[i];
        v = beta2 * v + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        param[i] = param[i] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

AdamW::AdamW(NamedParameters params, Options options)
    : params_(std::move(params)), options_(options), states_(params_.size()) {}

void AdamW::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        const std::vector<double> g = p.grad();
        adamw_update(p.mutable_data(), g, states_[i], lr, options_.beta1, options_.beta2, options_.eps,
                     options_.weight_decay);
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) {
        p.zero_grad();
    }
}

double AdamW::grad_norm() const {
    double total = 0.0;
    for (const auto& [name, p] : params_) {
        if (!p.has_grad()) {
            continue;
        }
        for (double g : p.grad()) {
            total += g * g;
        }
    }
    return std::sqrt(total);
}

}  // namespace maskclu
