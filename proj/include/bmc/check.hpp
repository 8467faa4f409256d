#pragma once

// Self-check suites comparing the production code with the reference
// implementations in oracle.hpp. Used by `prefbmc check` and the tests.

#include "bmc/losses.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bmc::check {

struct Result {
    std::string name;
    bool passed = false;
    /// Deterministic summary (no timings), safe to compare across runs.
    std::string detail;
};

/// The thirteen objectives: nine base methods plus four wrapped ones.
std::vector<LossSpec> all_objectives();

/// Autodiff vs central differences (sg frozen) for every objective on a tiny
/// model; also cross-checks each loss value against the plain oracle.
Result gradients(const std::vector<std::uint64_t>& seeds = {11, 22, 33}, double h = 1e-4, double tol = 1e-5);
/// Empty masks make every weighted objective equal its base; π_θ = π_ref gives ln 2.
Result reductions(std::size_t trials = 20, double tol = 1e-12);
/// Four-term assembly of the weighted DPO gradient vs the full autodiff gradient.
Result decomposition(std::size_t trials = 10, double tol = 1e-8);
/// Every pair of sequences up to `max_len` over `alphabet` symbols.
Result diff_exhaustive(std::size_t max_len = 6, int alphabet = 3);
Result diff_random(std::size_t pairs = 10000, std::size_t max_len = 30, std::uint64_t seed = 7);
/// Bounds, off-mask value, the δ = 1 case, and zero gradient through λ.
Result lambda_semantics(std::size_t trials = 2000);
/// Hand-computable objective values.
Result loss_values();

std::vector<Result> run_all();

}  // namespace bmc::check
