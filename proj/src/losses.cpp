#include "bmc/losses.hpp"

#include "bmc/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace bmc {

using ad::Tensor;
using ad::Var;

namespace {

constexpr std::pair<Method, std::string_view> kNames[] = {
    {Method::DPO, "DPO"},   {Method::DPO_BMC, "DPO_BMC"}, {Method::IPO, "IPO"},
    {Method::KTO, "KTO"},   {Method::ORPO, "ORPO"},       {Method::TDPO, "TDPO"},
    {Method::R_DPO, "R_DPO"}, {Method::SIMPO, "SIMPO"},   {Method::FIGA, "FIGA"},
};

// One response of a pair, with optional λ weights.
struct Side {
    Var logp;
    Var ref;
    std::optional<Var> weights;
    double weight_total;  // Σλ, or the response length when unweighted
};

const DiffMask& require_mask(const std::optional<DiffMask>& m, std::size_t len, const char* which) {
    if (!m) throw DataError(std::string("objective requires diff masks but the ") + which + " mask is missing");
    if (m->size() != len)
        throw DataError(std::string(which) + " mask length " + std::to_string(m->size()) + " does not match response length " +
                        std::to_string(len));
    return *m;
}

Side make_side(ad::Tape& tape, Var logp, const std::vector<double>& ref, const std::optional<DiffMask>& mask, bool weighted,
               double delta, const char* which) {
    const std::size_t n = logp.value().size();
    if (n == 0) throw DataError(std::string("empty ") + which + " response");
    if (ref.size() != n) throw DataError(std::string(which) + " reference log-probs misaligned with the response");
    Side s{logp, tape.constant(Tensor::vector(ref)), std::nullopt, static_cast<double>(n)};
    if (weighted) {
        Var w = lambda_weights(logp, require_mask(mask, n, which), delta);
        double total = 0.0;
        for (double x : w.value().data) total += x;
        s.weights = w;
        s.weight_total = total;
    }
    return s;
}

Side chosen_side(ad::Tape& tape, const PairTerms& p, bool weighted, double delta) {
    return make_side(tape, p.chosen_logp, p.chosen_ref, p.chosen_mask, weighted, delta, "chosen");
}
Side rejected_side(ad::Tape& tape, const PairTerms& p, bool weighted, double delta) {
    return make_side(tape, p.rejected_logp, p.rejected_ref, p.rejected_mask, weighted, delta, "rejected");
}

// Σ_t λ_t (log π_θ - log π_ref)
Var ratio_sum(const Side& s) {
    Var r = s.logp - s.ref;
    return ad::sum(s.weights ? *s.weights * r : r);
}

// Σ_t λ_t log π_θ
Var logp_sum(const Side& s) { return ad::sum(s.weights ? *s.weights * s.logp : s.logp); }

Var batch_mean(std::vector<Var>& per_pair) { return ad::mean(ad::stack(per_pair)); }

void require_batch(std::span<const PairTerms> batch) {
    if (batch.empty()) throw DataError("empty batch");
}

Var dpo_core(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch, bool weighted) {
    require_batch(batch);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const Side w = chosen_side(tape, p, weighted, spec.delta);
        const Side l = rejected_side(tape, p, weighted, spec.delta);
        out.push_back(-ad::log_sigmoid(spec.beta * (ratio_sum(w) - ratio_sum(l))));
    }
    return batch_mean(out);
}

Var ipo_core(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch, bool weighted) {
    require_batch(batch);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const Side w = chosen_side(tape, p, weighted, spec.delta);
        const Side l = rejected_side(tape, p, weighted, spec.delta);
        out.push_back(ad::square(ratio_sum(w) - ratio_sum(l) - 1.0 / (2.0 * spec.tau)));
    }
    return batch_mean(out);
}

Var rdpo_core(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch, bool weighted) {
    require_batch(batch);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const Side w = chosen_side(tape, p, weighted, spec.delta);
        const Side l = rejected_side(tape, p, weighted, spec.delta);
        const double len_w = static_cast<double>(p.chosen_logp.value().size());
        const double len_l = static_cast<double>(p.rejected_logp.value().size());
        Var z = spec.beta * ratio_sum(w) - spec.beta * ratio_sum(l) - (spec.alpha * len_w - spec.alpha * len_l);
        out.push_back(-ad::log_sigmoid(z));
    }
    return batch_mean(out);
}

Var simpo_core(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch, bool weighted) {
    require_batch(batch);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const Side w = chosen_side(tape, p, weighted, spec.delta);
        const Side l = rejected_side(tape, p, weighted, spec.delta);
        Var z = (spec.beta / w.weight_total) * logp_sum(w) - (spec.beta / l.weight_total) * logp_sum(l) - spec.gamma;
        out.push_back(-ad::log_sigmoid(z));
    }
    return batch_mean(out);
}

// log(p / (1 - p)) with p = exp(m)
Var log_odds(Var m) { return m - ad::log(1.0 - ad::exp(m)); }

Var orpo_core(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch, bool weighted) {
    require_batch(batch);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const Side w = chosen_side(tape, p, weighted, spec.delta);
        const Side l = rejected_side(tape, p, weighted, spec.delta);
        Var mw = (1.0 / w.weight_total) * logp_sum(w);
        Var ml = (1.0 / l.weight_total) * logp_sum(l);
        out.push_back(-mw - spec.lambda_orpo * ad::log_sigmoid(log_odds(mw) - log_odds(ml)));
    }
    return batch_mean(out);
}

Var require_dist(const std::optional<Var>& d, std::size_t len, const char* which) {
    if (!d) throw DataError(std::string("objective requires full policy distributions for the ") + which + " response");
    if (d->value().rows() != len) throw DataError(std::string(which) + " distribution rows misaligned with the response");
    return *d;
}

Var require_ref_dist(ad::Tape& tape, const std::optional<Tensor>& d, std::size_t len, const char* which) {
    if (!d) throw DataError(std::string("objective requires full reference distributions for the ") + which + " response");
    if (d->rows() != len) throw DataError(std::string(which) + " reference distribution rows misaligned with the response");
    return tape.constant(*d);
}

}  // namespace

std::string_view method_name(Method m) {
    for (const auto& [k, v] : kNames)
        if (k == m) return v;
    return "?";
}

Method parse_method(std::string_view name) {
    for (const auto& [k, v] : kNames)
        if (v == name) return k;
    throw ConfigError("unknown loss method '" + std::string(name) +
                      "' (expected one of DPO, DPO_BMC, IPO, KTO, ORPO, TDPO, R_DPO, SIMPO, FIGA)");
}

void LossSpec::validate() const {
    if (bmc_wrap) {
        if (method == Method::KTO || method == Method::TDPO)
            throw ConfigError(std::string(method_name(method)) +
                              " cannot be BMC-wrapped: KTO and TDPO are excluded from the confidence-weighted "
                              "adaptation (KTO uses a binary desirability signal, TDPO is already token-level)");
        if (method == Method::FIGA) throw ConfigError("FIGA cannot be BMC-wrapped; it already acts on diff tokens only");
    }
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (weighted() && !(delta >= 1.0)) throw ConfigError("delta must be at least 1");
    if (method == Method::IPO && !(tau > 0.0)) throw ConfigError("tau must be positive");
    if (method == Method::ORPO && !(lambda_orpo >= 0.0)) throw ConfigError("lambda_orpo must be non-negative");
    if (method == Method::KTO && !(lambda_w >= 0.0 && lambda_l >= 0.0)) throw ConfigError("KTO weights must be non-negative");
}

std::string LossSpec::label() const {
    std::string s(method_name(method));
    if (bmc_wrap && method != Method::DPO_BMC) s += "+BMC";
    return s;
}

nlohmann::json to_json(const LossSpec& s) {
    return {{"method", std::string(method_name(s.method))},
            {"bmc_wrap", s.bmc_wrap},
            {"beta", s.beta},
            {"delta", s.delta},
            {"tau", s.tau},
            {"gamma", s.gamma},
            {"alpha", s.alpha},
            {"lambda_orpo", s.lambda_orpo},
            {"lambda_w", s.lambda_w},
            {"lambda_l", s.lambda_l}};
}

LossSpec loss_spec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {"method", "bmc_wrap", "beta",        "delta",    "tau",
                                                "gamma",  "alpha",    "lambda_orpo", "lambda_w", "lambda_l"};
    if (!j.is_object()) throw ConfigError("loss spec must be an object");
    for (const auto& [k, _] : j.items())
        if (!known.contains(k)) throw ConfigError("unknown loss key '" + k + "'");
    LossSpec s;
    try {
        if (j.contains("method")) s.method = parse_method(j.at("method").get<std::string>());
        s.bmc_wrap = j.value("bmc_wrap", s.bmc_wrap);
        s.beta = j.value("beta", s.beta);
        s.delta = j.value("delta", s.delta);
        s.tau = j.value("tau", s.tau);
        s.gamma = j.value("gamma", s.gamma);
        s.alpha = j.value("alpha", s.alpha);
        s.lambda_orpo = j.value("lambda_orpo", s.lambda_orpo);
        s.lambda_w = j.value("lambda_w", s.lambda_w);
        s.lambda_l = j.value("lambda_l", s.lambda_l);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid loss spec: ") + e.what());
    }
    s.validate();
    return s;
}

// ---- λ weights --------------------------------------------------------------

Var lambda_weights(Var token_logp, const DiffMask& mask, double delta) {
    const std::size_t n = token_logp.value().size();
    if (mask.size() != n) throw DataError("mask length does not match the response");
    ad::Tape& tape = *token_logp.tape;
    Tensor flags = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) flags.data[i] = mask.flags[i] ? 1.0 : 0.0;
    Var prob = ad::exp(ad::stop_gradient(token_logp));
    Var emphasis = ad::minimum(ad::reciprocal(ad::clamp_min(prob, kMinProb)), delta);
    return 1.0 + tape.constant(std::move(flags)) * emphasis;
}

std::vector<double> lambda_weights(std::span<const double> token_probs, const DiffMask& mask, double delta) {
    if (mask.size() != token_probs.size()) throw DataError("mask length does not match the response");
    std::vector<double> out(token_probs.size(), 1.0);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask.flags[i]) out[i] = 1.0 + std::min(1.0 / std::max(token_probs[i], kMinProb), delta);
    return out;
}

Var seq_kl(Var log_p, Var log_q) { return ad::sum(ad::exp(log_p) * (log_p - log_q)); }

// ---- objectives -------------------------------------------------------------

Var loss_dpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    return dpo_core(tape, spec, batch, false);
}

Var loss_dpo_bmc(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    return dpo_core(tape, spec, batch, true);
}

Var loss_ipo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    return ipo_core(tape, spec, batch, false);
}

Var loss_rdpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    return rdpo_core(tape, spec, batch, false);
}

Var loss_simpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    return simpo_core(tape, spec, batch, false);
}

Var loss_orpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    return orpo_core(tape, spec, batch, false);
}

Var loss_tdpo(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    require_batch(batch);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const Side w = chosen_side(tape, p, false, spec.delta);
        const Side l = rejected_side(tape, p, false, spec.delta);
        const std::size_t nw = p.chosen_logp.value().size(), nl = p.rejected_logp.value().size();
        Var kl_w = seq_kl(require_ref_dist(tape, p.chosen_ref_logdist, nw, "chosen"), require_dist(p.chosen_logdist, nw, "chosen"));
        Var kl_l = seq_kl(require_ref_dist(tape, p.rejected_ref_logdist, nl, "rejected"),
                          require_dist(p.rejected_logdist, nl, "rejected"));
        Var reg = spec.beta * kl_l - ad::stop_gradient(spec.beta * kl_w);
        out.push_back(-ad::log_sigmoid(spec.beta * ratio_sum(w) - spec.beta * ratio_sum(l) - spec.alpha * reg));
    }
    return batch_mean(out);
}

Var loss_kto(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    require_batch(batch);
    // Reference point: non-negative batch mean of β·KL(π_θ ‖ π_ref) over the
    // rejected responses, detached.
    std::vector<Var> kls;
    for (const auto& p : batch) {
        const std::size_t nl = p.rejected_logp.value().size();
        kls.push_back(spec.beta * seq_kl(require_dist(p.rejected_logdist, nl, "rejected"),
                                         require_ref_dist(tape, p.rejected_ref_logdist, nl, "rejected")));
    }
    Var z = ad::clamp_min(ad::stop_gradient(ad::mean(ad::stack(kls))), 0.0);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const Side w = chosen_side(tape, p, false, spec.delta);
        const Side l = rejected_side(tape, p, false, spec.delta);
        Var desirable = spec.lambda_w * (1.0 - ad::sigmoid(spec.beta * ratio_sum(w) - z));
        Var undesirable = spec.lambda_l * (1.0 - ad::sigmoid(z - spec.beta * ratio_sum(l)));
        out.push_back(desirable + undesirable);
    }
    return batch_mean(out);
}

Var loss_figa(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    require_batch(batch);
    std::vector<Var> out;
    for (const auto& p : batch) {
        const std::size_t nw = p.chosen_logp.value().size(), nl = p.rejected_logp.value().size();
        const DiffMask& mw = require_mask(p.chosen_mask, nw, "chosen");
        const DiffMask& ml = require_mask(p.rejected_mask, nl, "rejected");
        auto flags = [&](const DiffMask& m) {
            Tensor t = Tensor::zeros({m.size()});
            for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = m.flags[i] ? 1.0 : 0.0;
            return tape.constant(std::move(t));
        };
        Var up = ad::sum(flags(mw) * p.chosen_logp);
        Var down = ad::sum(flags(ml) * p.rejected_logp);
        out.push_back(-spec.alpha * up + spec.beta * down);
    }
    return batch_mean(out);
}

Var loss_xpo_bmc(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    switch (spec.method) {
        case Method::DPO:
        case Method::DPO_BMC: return dpo_core(tape, spec, batch, true);
        case Method::IPO: return ipo_core(tape, spec, batch, true);
        case Method::ORPO: return orpo_core(tape, spec, batch, true);
        case Method::R_DPO: return rdpo_core(tape, spec, batch, true);
        case Method::SIMPO: return simpo_core(tape, spec, batch, true);
        case Method::KTO:
        case Method::TDPO:
        case Method::FIGA: {
            LossSpec s = spec;
            s.bmc_wrap = true;
            s.validate();  // throws with the exclusion message
        }
    }
    throw ConfigError("unsupported method for BMC wrapping");
}

Var batch_loss(ad::Tape& tape, const LossSpec& spec, std::span<const PairTerms> batch) {
    spec.validate();
    if (spec.weighted()) return loss_xpo_bmc(tape, spec, batch);
    switch (spec.method) {
        case Method::DPO: return loss_dpo(tape, spec, batch);
        case Method::DPO_BMC: return loss_dpo_bmc(tape, spec, batch);
        case Method::IPO: return loss_ipo(tape, spec, batch);
        case Method::KTO: return loss_kto(tape, spec, batch);
        case Method::ORPO: return loss_orpo(tape, spec, batch);
        case Method::TDPO: return loss_tdpo(tape, spec, batch);
        case Method::R_DPO: return loss_rdpo(tape, spec, batch);
        case Method::SIMPO: return loss_simpo(tape, spec, batch);
        case Method::FIGA: return loss_figa(tape, spec, batch);
    }
    throw ConfigError("unknown method");
}

PairTerms constant_terms(ad::Tape& tape, std::vector<double> chosen_logp, std::vector<double> rejected_logp,
                         std::vector<double> chosen_ref, std::vector<double> rejected_ref, std::optional<DiffMask> chosen_mask,
                         std::optional<DiffMask> rejected_mask) {
    PairTerms t;
    t.chosen_logp = tape.constant(Tensor::vector(std::move(chosen_logp)));
    t.rejected_logp = tape.constant(Tensor::vector(std::move(rejected_logp)));
    t.chosen_ref = std::move(chosen_ref);
    t.rejected_ref = std::move(rejected_ref);
    t.chosen_mask = std::move(chosen_mask);
    t.rejected_mask = std::move(rejected_mask);
    return t;
}

}  // namespace bmc
