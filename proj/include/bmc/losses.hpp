#pragma once

// Offline preference objectives over per-token log-probabilities of the
// policy and the reference model, including the confidence-weighted
// token-level objective and its wrappers around other objectives.

#include "bmc/autodiff.hpp"
#include "bmc/diff.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace bmc {

enum class Method { DPO, DPO_BMC, IPO, KTO, ORPO, TDPO, R_DPO, SIMPO, FIGA };

std::string_view method_name(Method m);
/// Accepts the exact names DPO, DPO_BMC, IPO, KTO, ORPO, TDPO, R_DPO, SIMPO, FIGA.
Method parse_method(std::string_view name);

struct LossSpec {
    Method method = Method::DPO;
    /// Confidence-weighted wrapper; valid for DPO, IPO, ORPO, R_DPO, SIMPO.
    bool bmc_wrap = false;
    double beta = 0.05;
    double delta = 2.5;
    double tau = 0.1;
    double gamma = 0.5;
    double alpha = 0.5;
    double lambda_orpo = 0.5;
    double lambda_w = 1.0;
    double lambda_l = 1.0;

    /// Throws ConfigError on unsupported combinations or out-of-range values.
    void validate() const;
    /// True for DPO_BMC and any wrapped method.
    [[nodiscard]] bool weighted() const { return method == Method::DPO_BMC || bmc_wrap; }
    [[nodiscard]] bool needs_masks() const { return weighted() || method == Method::FIGA; }
    [[nodiscard]] bool needs_distributions() const { return method == Method::TDPO || method == Method::KTO; }
    [[nodiscard]] std::string label() const;
};

nlohmann::json to_json(const LossSpec& spec);
/// Unknown keys are rejected.
LossSpec loss_spec_from_json(const nlohmann::json& j);

/// Inputs of one preference pair. Policy quantities live on the tape; the
/// reference side is constant.
struct PairTerms {
    ad::Var chosen_logp;    // [R_w]
    ad::Var rejected_logp;  // [R_l]
    std::vector<double> chosen_ref;
    std::vector<double> rejected_ref;
    std::optional<DiffMask> chosen_mask;
    std::optional<DiffMask> rejected_mask;
    // Full next-token log distributions, required by TDPO and KTO only.
    std::optional<ad::Var> chosen_logdist;    // [R_w, V]
    std::optional<ad::Var> rejected_logdist;  // [R_l, V]
    std::optional<ad::Tensor> chosen_ref_logdist;
    std::optional<ad::Tensor> rejected_ref_logdist;
};

/// Clamp applied to π before taking 1/π.
inline constexpr double kMinProb = 1e-12;

/// λ_t = 1 + min(1/π_t, δ) on flagged positions and 1 elsewhere, with π_t
/// taken through stop_gradient. `token_logp` is the policy's [R] log-probs.
ad::Var lambda_weights(ad::Var token_logp, const DiffMask& mask, double delta);
/// Plain-value counterpart taking probabilities.
std::vector<double> lambda_weights(std::span<const double> token_probs, const DiffMask& mask, double delta);

/// Σ_t KL(p(·|s_t) ‖ q(·|s_t)) over response positions, rows given as log-probs.
ad::Var seq_kl(ad::Var log_p, ad::Var log_q);

/// Batch-mean objective selected by `spec`.
ad::Var batch_loss(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);

/// Per-method entry points, each returning the batch mean.
ad::Var loss_dpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_dpo_bmc(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_ipo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_kto(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_orpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_tdpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_rdpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_simpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
ad::Var loss_figa(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);
/// IPO/ORPO/R_DPO/SIMPO with every per-token log-prob term λ-weighted.
ad::Var loss_xpo_bmc(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch);

/// Convenience for evaluating objectives on plain numbers: builds constant
/// PairTerms on `tape` from per-token log-probs (no distributions).
PairTerms constant_terms(ad::Tape& tape, std::vector<double> chosen_logp, std::vector<double> rejected_logp,
                         std::vector<double> chosen_ref, std::vector<double> rejected_ref,
                         std::optional<DiffMask> chosen_mask = std::nullopt,
                         std::optional<DiffMask> rejected_mask = std::nullopt);

}  // namespace bmc
