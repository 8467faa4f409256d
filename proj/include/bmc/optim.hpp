#pragma once

#include "bmc/autodiff.hpp"

#include <cstddef>
#include <vector>

namespace bmc {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    std::vector<ad::Tensor> m;
    std::vector<ad::Tensor> v;
};

/// Bias-corrected Adam update in place. Throws NumericError on a non-finite gradient.
void adam_step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads, AdamState& state, double lr);

/// Linear warmup 0 -> peak over `warmup_steps`, then half-cosine decay to 0.
double cosine_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak);

double global_norm(const std::vector<ad::Tensor>& grads);
/// Rescales so the global norm is at most max_norm; returns the norm before clipping.
double clip_by_global_norm(std::vector<ad::Tensor>& grads, double max_norm);

}  // namespace bmc
