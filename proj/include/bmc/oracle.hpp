#pragma once

// Reference implementations used to validate the production code. They share
// no code with it and favor directness over speed.

#include "bmc/losses.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace bmc::oracle {

struct BruteDiff {
    std::size_t distance = 0;
    std::vector<bool> target_flags;  // SUBST or INSERT
    std::vector<bool> source_flags;  // SUBST or DELETE
};

/// Depth-first search over edit scripts built from the end of both sequences,
/// trying diagonal, delete, insert in that order, with branch-and-bound. The
/// first minimal script found is the preferred one.
BruteDiff brute_force_diff(std::span<const int> source, std::span<const int> target);

/// Diagonal-furthest-reaching edit distance, O((n + m) · d).
std::size_t furthest_reaching_distance(std::span<const int> a, std::span<const int> b);

/// One pair in plain numbers. Distributions are row-major [R, V] log-probs.
struct PlainPair {
    std::vector<double> logp_w, logp_l;
    std::vector<double> ref_w, ref_l;
    std::vector<bool> mask_w, mask_l;
    std::vector<std::vector<double>> dist_w, dist_l, ref_dist_w, ref_dist_l;
};

double lambda(double prob, bool flagged, double delta);

/// Batch-mean objective computed directly from its formula.
double loss(const LossSpec& spec, std::span<const PlainPair> batch);

}  // namespace bmc::oracle
