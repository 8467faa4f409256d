#pragma once

// Diagnostics of a trained policy against its reference: token rewards,
// sequence reward margins, KL to the reference, log-prob profiles inside diff
// spans, and gradient norms grouped by edit distance. Plus report emission.

#include "bmc/dataset.hpp"
#include "bmc/model.hpp"
#include "bmc/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace bmc {

struct TokenRewardTrace {
    std::vector<std::string> tokens;
    std::vector<double> rewards;  // β (log π_θ - log π_ref) per token
    std::vector<bool> flags;      // diff mask, all false when unknown
};

struct PairRewardTraces {
    TokenRewardTrace chosen;
    TokenRewardTrace rejected;
};

PairRewardTraces token_rewards(const Policy& policy, const PolicySnapshot& ref, const TrainExample& ex, double beta);

struct SeqRewardReport {
    std::vector<double> margins;  // r(x, y_w) - r(x, y_l), each a sum of token rewards
    double mean_margin = 0.0;
    /// Fraction of strictly positive margins; ties count as failures.
    double accuracy = 0.0;
};

/// Throws DataError on an empty set.
SeqRewardReport seq_reward_report(const Policy& policy, const PolicySnapshot& ref, const std::vector<TrainExample>& data,
                                  double beta);

/// Σ_t KL(π_θ(·|s_t) ‖ π_ref(·|s_t)) over the response, exact over the vocabulary.
double seq_kl_to_ref(const Policy& policy, const PolicySnapshot& ref, const TokenSeq& prompt, const TokenSeq& response);

struct KlPoint {
    std::size_t step;
    double kl;  // mean over held-out winners
};

std::vector<KlPoint> kl_track(const std::vector<PolicyCheckpoint>& checkpoints, const PolicySnapshot& ref,
                              const std::vector<TrainExample>& heldout);

struct SpanProfile {
    std::vector<std::size_t> positions;  // 1-based within-span positions with members
    std::vector<double> mean_nll;
    std::vector<std::size_t> counts;
};

/// Mean -log π_θ at each within-span position of the rejected-side diff
/// spans, averaged per token over all spans long enough to have that
/// position. Throws DataError when no example carries a span.
SpanProfile span_logp_profile(const Policy& policy, const std::vector<TrainExample>& data);

/// Spearman rank correlation with average ranks for ties. Returns nullopt
/// when either input is constant.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

struct BucketSummary {
    std::vector<double> mean_grad_norm;
    std::vector<double> mean_edit_distance;
    std::vector<std::size_t> counts;
    double spearman = 0.0;          // bucket index vs mean norm; 0 when undefined
    bool spearman_defined = false;
    double coefficient_of_variation = 0.0;  // population std / mean of bucket means
};

/// Steps are ordered by their batch's mean edit distance (ties by step) and
/// split into `n_buckets` near-equal groups. Throws DataError when there are
/// fewer steps than buckets.
BucketSummary grad_norm_buckets(const std::vector<StepLog>& logs, std::size_t n_buckets);

/// One training run per bucket, ordered by increasing edit distance.
BucketSummary grad_norm_buckets(const std::vector<std::vector<StepLog>>& runs);

// ---- reports ----------------------------------------------------------------

inline constexpr int kReportSchemaVersion = 1;

struct ReportData {
    std::vector<PairRewardTraces> traces;
    std::optional<SeqRewardReport> seq;
    std::vector<KlPoint> kl;
    std::optional<SpanProfile> span;
    std::optional<BucketSummary> buckets;
};

/// Writes token_rewards.json, seq_rewards.json, kl.csv, span_profile.csv and
/// buckets.csv (each only when present) and manifest.json listing every file
/// with its SHA-256. Output bytes depend only on `data`. Returns the files written.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir, const ReportData& data);

/// Reads back whatever emit_report wrote in `dir`.
ReportData load_report(const std::filesystem::path& dir);

std::string sha256_hex(const std::string& bytes);

}  // namespace bmc
