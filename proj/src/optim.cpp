#include "bmc/optim.hpp"

#include "bmc/error.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bmc {

void adam_step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads, AdamState& state, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k) {
        if (grads[k].size() != params[k].size()) throw std::invalid_argument("adam_step: gradient shape mismatch");
        for (double g : grads[k].data)
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter tensor " + std::to_string(k));
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(ad::Tensor::zeros(p.shape));
            state.v.push_back(ad::Tensor::zeros(p.shape));
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].data;
        auto& m = state.m[k].data;
        auto& v = state.v[k].data;
        const auto& g = grads[k].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double cosine_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak) {
    if (total_steps == 0 || step >= total_steps) throw std::out_of_range("cosine_lr: step outside [0, total_steps)");
    if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const std::size_t decay = total_steps - warmup_steps;
    const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_norm(const std::vector<ad::Tensor>& grads) {
    double s = 0.0;
    for (const auto& g : grads)
        for (double x : g.data) s += x * x;
    return std::sqrt(s);
}

double clip_by_global_norm(std::vector<ad::Tensor>& grads, double max_norm) {
    const double n = global_norm(grads);
    if (n > max_norm && n > 0.0) {
        const double f = max_norm / n;
        for (auto& g : grads)
            for (double& x : g.data) x *= f;
    }
    return n;
}

}  // namespace bmc
