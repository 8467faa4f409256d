#include "bmc/check.hpp"

#include "bmc/corpus.hpp"
#include "bmc/diff.hpp"
#include "bmc/model.hpp"
#include "bmc/oracle.hpp"
#include "bmc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <unordered_set>

namespace bmc::check {

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

std::string fmt(const char* pattern, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

const Vocabulary& tiny_vocab() {
    static const Vocabulary v({"a", "b", "c", "d", "e", "f", "g", "h"});
    return v;
}

TokenSeq random_seq(Rng& rng, std::size_t len) {
    const Vocabulary& v = tiny_vocab();
    TokenSeq s;
    for (std::size_t i = 0; i < len; ++i) {
        const int id = 4 + static_cast<int>(rng.uniform_index(v.size() - 4));
        s.ids.push_back(id);
        s.surfaces.push_back(v.token(id));
    }
    return s;
}

DiffMask random_mask(Rng& rng, std::size_t len) {
    std::vector<bool> f(len, false);
    for (std::size_t i = 0; i < len; ++i) f[i] = rng.uniform01() < 0.4;
    f[rng.uniform_index(len)] = true;
    return DiffMask::from_flags(std::move(f));
}

struct Example {
    TokenSeq prompt, chosen, rejected;
    DiffMasks masks;
};

struct Instance {
    Policy policy;
    Policy ref;
    std::vector<Example> pairs;
    std::vector<std::vector<double>> ref_w, ref_l;
    std::vector<Tensor> ref_dist_w, ref_dist_l;
};

Instance make_instance(std::uint64_t seed, std::size_t n_pairs) {
    ModelConfig cfg;
    cfg.vocab_size = tiny_vocab().size();
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 16;
    cfg.seed = seed;
    Instance in{init_policy(cfg), {}, {}, {}, {}, {}, {}};
    cfg.seed = seed + 1000;
    in.ref = init_policy(cfg);
    Rng rng(seed);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        Example ex;
        ex.prompt = random_seq(rng, 2 + rng.uniform_index(3));
        ex.chosen = random_seq(rng, 2 + rng.uniform_index(4));
        ex.rejected = random_seq(rng, 2 + rng.uniform_index(4));
        ex.masks = {random_mask(rng, ex.chosen.size()), random_mask(rng, ex.rejected.size())};
        in.ref_w.push_back(logprobs(in.ref, ex.prompt, ex.chosen));
        in.ref_l.push_back(logprobs(in.ref, ex.prompt, ex.rejected));
        in.ref_dist_w.push_back(log_distributions(in.ref, ex.prompt, ex.chosen));
        in.ref_dist_l.push_back(log_distributions(in.ref, ex.prompt, ex.rejected));
        in.pairs.push_back(std::move(ex));
    }
    return in;
}

Var instance_loss(Tape& tape, std::span<const Var> params, const Instance& in, const LossSpec& spec) {
    std::vector<PairTerms> batch;
    for (std::size_t i = 0; i < in.pairs.size(); ++i) {
        const Example& ex = in.pairs[i];
        const ResponseScores w = score_response(tape, in.policy.config, params, ex.prompt, ex.chosen);
        const ResponseScores l = score_response(tape, in.policy.config, params, ex.prompt, ex.rejected);
        PairTerms t;
        t.chosen_logp = w.token_logp;
        t.rejected_logp = l.token_logp;
        t.chosen_ref = in.ref_w[i];
        t.rejected_ref = in.ref_l[i];
        t.chosen_mask = ex.masks.chosen;
        t.rejected_mask = ex.masks.rejected;
        t.chosen_logdist = w.log_dist;
        t.rejected_logdist = l.log_dist;
        t.chosen_ref_logdist = in.ref_dist_w[i];
        t.rejected_ref_logdist = in.ref_dist_l[i];
        batch.push_back(std::move(t));
    }
    return batch_loss(tape, spec, batch);
}

std::vector<std::vector<double>> rows(const Tensor& t) {
    std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t.at(r, c);
    return out;
}

std::vector<oracle::PlainPair> plain_pairs(const Instance& in) {
    std::vector<oracle::PlainPair> out;
    for (std::size_t i = 0; i < in.pairs.size(); ++i) {
        const Example& ex = in.pairs[i];
        oracle::PlainPair p;
        p.logp_w = logprobs(in.policy, ex.prompt, ex.chosen);
        p.logp_l = logprobs(in.policy, ex.prompt, ex.rejected);
        p.ref_w = in.ref_w[i];
        p.ref_l = in.ref_l[i];
        p.mask_w = ex.masks.chosen.flags;
        p.mask_l = ex.masks.rejected.flags;
        p.dist_w = rows(log_distributions(in.policy, ex.prompt, ex.chosen));
        p.dist_l = rows(log_distributions(in.policy, ex.prompt, ex.rejected));
        p.ref_dist_w = rows(in.ref_dist_w[i]);
        p.ref_dist_l = rows(in.ref_dist_l[i]);
        out.push_back(std::move(p));
    }
    return out;
}

double value_of(const LossSpec& spec, std::vector<double> lw, std::vector<double> ll, std::vector<double> rw,
                std::vector<double> rl, std::optional<DiffMask> mw = std::nullopt,
                std::optional<DiffMask> ml = std::nullopt) {
    Tape tape;
    std::vector<PairTerms> batch;
    batch.push_back(constant_terms(tape, std::move(lw), std::move(ll), std::move(rw), std::move(rl), std::move(mw),
                                   std::move(ml)));
    return batch_loss(tape, spec, batch).item();
}

std::vector<double> random_logp(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-5.0, -0.01);
    return v;
}

std::vector<double> flatten(const std::vector<Tensor>& ts) {
    std::vector<double> out;
    for (const Tensor& t : ts) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

std::vector<std::vector<int>> all_sequences(std::size_t max_len, int alphabet) {
    std::vector<std::vector<int>> out{{}};
    for (std::size_t begin = 0, len = 1; len <= max_len; ++len) {
        const std::size_t end = out.size();
        for (std::size_t i = begin; i < end; ++i)
            for (int a = 0; a < alphabet; ++a) {
                std::vector<int> s = out[i];
                s.push_back(a);
                out.push_back(std::move(s));
            }
        begin = end;
    }
    return out;
}

TokenSeq ids_only(const std::vector<int>& ids) { return {ids, std::vector<std::string>(ids.size())}; }

}  // namespace

std::vector<LossSpec> all_objectives() {
    std::vector<LossSpec> out;
    for (Method m : {Method::DPO, Method::DPO_BMC, Method::IPO, Method::KTO, Method::ORPO, Method::TDPO, Method::R_DPO,
                     Method::SIMPO, Method::FIGA}) {
        LossSpec s;
        s.method = m;
        out.push_back(s);
    }
    for (Method m : {Method::IPO, Method::ORPO, Method::R_DPO, Method::SIMPO}) {
        LossSpec s;
        s.method = m;
        s.bmc_wrap = true;
        out.push_back(s);
    }
    for (LossSpec& s : out) {
        s.beta = 0.5;
        s.delta = 20.0;
    }
    return out;
}

Result gradients(const std::vector<std::uint64_t>& seeds, double h, double tol) {
    Result r{"gradients", true, ""};
    double worst_grad = 0.0, worst_value = 0.0;
    std::string worst_label;
    std::size_t checks = 0;
    for (std::uint64_t seed : seeds) {
        const Instance in = make_instance(seed, 2);
        const auto plain = plain_pairs(in);
        for (const LossSpec& spec : all_objectives()) {
            const ad::ScalarFn f = [&](Tape& tape, std::span<const Var> params) {
                return instance_loss(tape, params, in, spec);
            };
            const ad::FdReport rep = ad::fd_check(f, in.policy.params, h, ad::FdMode::freeze_sg);
            const double expected = oracle::loss(spec, plain);
            const double verr = std::abs(rep.value - expected) / std::max(1.0, std::abs(expected));
            ++checks;
            if (rep.max_rel_err > worst_grad) {
                worst_grad = rep.max_rel_err;
                worst_label = spec.label();
            }
            worst_value = std::max(worst_value, verr);
            if (!(rep.max_rel_err <= tol) || !(verr <= 1e-9)) r.passed = false;
        }
    }
    r.detail = fmt("%zu objective/seed checks, worst gradient relative error %.2e (%s), worst value error %.2e", checks,
                   worst_grad, worst_label.c_str(), worst_value);
    return r;
}

Result reductions(std::size_t trials, double tol) {
    Result r{"reductions", true, ""};
    Rng rng(101);
    double worst = 0.0, worst_ln2 = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t nw = 1 + rng.uniform_index(8), nl = 1 + rng.uniform_index(8);
        const auto lw = random_logp(rng, nw), ll = random_logp(rng, nl);
        const auto rw = random_logp(rng, nw), rl = random_logp(rng, nl);
        const DiffMask ew = DiffMask::from_flags(std::vector<bool>(nw, false));
        const DiffMask el = DiffMask::from_flags(std::vector<bool>(nl, false));
        LossSpec base;
        base.beta = rng.uniform(0.01, 1.0);
        base.delta = rng.uniform(1.0, 10.0);
        for (Method m : {Method::DPO, Method::IPO, Method::ORPO, Method::R_DPO, Method::SIMPO}) {
            base.method = m;
            LossSpec wrapped = base;
            if (m == Method::DPO)
                wrapped.method = Method::DPO_BMC;
            else
                wrapped.bmc_wrap = true;
            const double a = value_of(base, lw, ll, rw, rl);
            const double b = value_of(wrapped, lw, ll, rw, rl, ew, el);
            worst = std::max(worst, std::abs(a - b));
        }
        Rng mrng(t);
        for (Method m : {Method::DPO, Method::DPO_BMC}) {
            base.method = m;
            const double v = value_of(base, lw, ll, lw, ll, random_mask(mrng, nw), random_mask(mrng, nl));
            worst_ln2 = std::max(worst_ln2, std::abs(v - std::numbers::ln2));
        }
    }
    r.passed = worst <= tol && worst_ln2 <= tol;
    r.detail = fmt("%zu trials, worst empty-mask gap %.2e, worst identical-policy gap from ln 2 %.2e", trials, worst,
                   worst_ln2);
    return r;
}

Result decomposition(std::size_t trials, double tol) {
    Result r{"decomposition", true, ""};
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const Instance in = make_instance(500 + trial, 2);
        LossSpec spec;
        spec.method = Method::DPO_BMC;
        spec.beta = 0.5;
        spec.delta = trial % 2 == 0 ? 2.5 : 20.0;

        Tape tape;
        const auto params = bind(tape, in.policy, true);
        const auto full = flatten(ad::grad(instance_loss(tape, params, in, spec), params));

        std::vector<double> assembled(full.size(), 0.0);
        const double batch = static_cast<double>(in.pairs.size());
        for (std::size_t i = 0; i < in.pairs.size(); ++i) {
            const Example& ex = in.pairs[i];
            Tape pt;
            const auto pp = bind(pt, in.policy, true);
            const Var lw = score_response(pt, in.policy.config, pp, ex.prompt, ex.chosen).token_logp;
            const Var ll = score_response(pt, in.policy.config, pp, ex.prompt, ex.rejected).token_logp;
            auto weights = [&](Var logp, const DiffMask& mask) {
                std::vector<double> prob(logp.value().data.size());
                for (std::size_t t = 0; t < prob.size(); ++t) prob[t] = std::exp(logp.value().data[t]);
                return lambda_weights(prob, mask, spec.delta);
            };
            const auto ww = weights(lw, ex.masks.chosen), wl = weights(ll, ex.masks.rejected);
            double margin = 0.0;
            for (std::size_t t = 0; t < ww.size(); ++t) margin += ww[t] * (lw.value().data[t] - in.ref_w[i][t]);
            for (std::size_t t = 0; t < wl.size(); ++t) margin -= wl[t] * (ll.value().data[t] - in.ref_l[i][t]);
            const double coef = -spec.beta / (1.0 + std::exp(spec.beta * margin)) / batch;

            // Σ g_w − Σ g_l + Σ_diff (λ−1) g_w − Σ_diff (λ−1) g_l
            std::vector<double> plain(full.size(), 0.0), extra(full.size(), 0.0);
            auto add_side = [&](Var logp, const std::vector<double>& w, double sign) {
                for (std::size_t t = 0; t < w.size(); ++t) {
                    const auto g = flatten(ad::grad(ad::element(logp, t), pp));
                    for (std::size_t k = 0; k < g.size(); ++k) {
                        plain[k] += sign * g[k];
                        extra[k] += sign * (w[t] - 1.0) * g[k];
                    }
                }
            };
            add_side(lw, ww, 1.0);
            add_side(ll, wl, -1.0);
            for (std::size_t k = 0; k < full.size(); ++k) assembled[k] += coef * (plain[k] + extra[k]);
        }
        double diff = 0.0;
        for (std::size_t k = 0; k < full.size(); ++k) diff = std::max(diff, std::abs(full[k] - assembled[k]));
        const double rel = diff / std::max(inf_norm(full), 1e-300);
        worst = std::max(worst, rel);
        if (!(rel <= tol)) r.passed = false;
    }
    r.detail = fmt("%zu trials, worst relative gap %.2e", trials, worst);
    return r;
}

Result diff_exhaustive(std::size_t max_len, int alphabet) {
    Result r{"diff_exhaustive", true, ""};
    const auto seqs = all_sequences(max_len, alphabet);
    const std::unordered_set<int> stop{0};
    std::size_t pairs = 0, dist_bad = 0, mask_bad = 0, stop_bad = 0;
    for (const auto& source : seqs) {
        for (const auto& target : seqs) {
            ++pairs;
            const oracle::BruteDiff want = oracle::brute_force_diff(source, target);
            if (edit_distance(source, target) != want.distance) ++dist_bad;
            if (source.empty() || target.empty()) continue;
            const TokenSeq tw = ids_only(target), tl = ids_only(source);
            const DiffMasks got = diff_masks(tw, tl, {});
            if (got.chosen.flags != want.target_flags || got.rejected.flags != want.source_flags) ++mask_bad;
            const DiffMasks got_stop = diff_masks(tw, tl, stop);
            auto tf = want.target_flags;
            auto sf = want.source_flags;
            for (std::size_t i = 0; i < tf.size(); ++i)
                if (target[i] == 0) tf[i] = false;
            for (std::size_t i = 0; i < sf.size(); ++i)
                if (source[i] == 0) sf[i] = false;
            if (got_stop.chosen.flags != tf || got_stop.rejected.flags != sf) ++stop_bad;
        }
    }
    r.passed = dist_bad == 0 && mask_bad == 0 && stop_bad == 0;
    r.detail = fmt("%zu pairs, %zu distance mismatches, %zu mask mismatches, %zu stopword mismatches", pairs, dist_bad,
                   mask_bad, stop_bad);
    return r;
}

Result diff_random(std::size_t pairs, std::size_t max_len, std::uint64_t seed) {
    Result r{"diff_random", true, ""};
    Rng rng(seed);
    std::size_t dist_bad = 0, script_bad = 0;
    for (std::size_t p = 0; p < pairs; ++p) {
        const int alphabet = 2 + static_cast<int>(rng.uniform_index(5));
        auto draw = [&] {
            std::vector<int> s(rng.uniform_index(max_len + 1));
            for (int& x : s) x = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(alphabet)));
            return s;
        };
        const auto a = draw(), b = draw();
        const std::size_t d = edit_distance(a, b);
        if (d != oracle::furthest_reaching_distance(a, b)) ++dist_bad;
        const Alignment al = align(a, b);
        std::size_t cost = 0;
        for (const AlignStep& s : al.ops) cost += s.op == EditOp::match ? 0 : 1;
        if (al.cost != d || cost != d || apply_alignment(al, a, b) != b) ++script_bad;
    }
    r.passed = dist_bad == 0 && script_bad == 0;
    r.detail = fmt("%zu pairs, %zu distance mismatches, %zu invalid scripts", pairs, dist_bad, script_bad);
    return r;
}

Result lambda_semantics(std::size_t trials) {
    Result r{"lambda_semantics", true, ""};
    Rng rng(202);
    std::size_t bad_bounds = 0, bad_delta1 = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t n = 1 + rng.uniform_index(10);
        std::vector<double> prob(n);
        for (double& p : prob) {
            const double u = rng.uniform01();
            p = u < 0.1 ? 1.0 : (u < 0.2 ? 1e-15 : std::exp(rng.uniform(-20.0, 0.0)));
        }
        const DiffMask mask = random_mask(rng, n);
        const double delta = rng.uniform(1.0, 10.0);
        const auto lam = lambda_weights(prob, mask, delta);
        const auto one = lambda_weights(prob, mask, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            const bool ok = mask.flags[i] ? (lam[i] >= 2.0 && lam[i] <= 1.0 + delta &&
                                             std::abs(lam[i] - oracle::lambda(prob[i], true, delta)) <= 1e-12)
                                          : lam[i] == 1.0;
            if (!ok) ++bad_bounds;
            if (one[i] != (mask.flags[i] ? 2.0 : 1.0)) ++bad_delta1;
        }
    }
    const DiffMask all = DiffMask::from_flags({true, true, true});
    const std::vector<double> probs{0.5, 1.0 / 3.0, 1.0};
    const auto ex = lambda_weights(probs, all, 2.5);
    const bool examples = std::abs(ex[0] - 3.0) < 1e-12 && std::abs(ex[1] - 3.5) < 1e-12 && std::abs(ex[2] - 2.0) < 1e-12;

    Tape tape;
    const Var lp = tape.leaf(Tensor::vector({std::log(0.3), std::log(0.7)}));
    const Var lam = lambda_weights(lp, DiffMask::from_flags({true, false}), 2.5);
    const bool detached = !tape.requires_grad(lam.id);

    const Instance in = make_instance(77, 2);
    LossSpec spec;
    spec.method = Method::DPO_BMC;
    spec.beta = 0.5;
    spec.delta = 50.0;
    const ad::ScalarFn f = [&](Tape& tp, std::span<const Var> params) { return instance_loss(tp, params, in, spec); };
    const double frozen = ad::fd_check(f, in.policy.params, 1e-4, ad::FdMode::freeze_sg).max_rel_err;
    const double naive = ad::fd_check(f, in.policy.params, 1e-4, ad::FdMode::naive).max_rel_err;

    r.passed = bad_bounds == 0 && bad_delta1 == 0 && examples && detached && frozen <= 1e-5 && naive > 1e-3;
    r.detail = fmt("%zu trials, %zu bound violations, %zu delta=1 violations, examples %s, weights %s, "
                   "frozen-sg error %.2e, live-sg error %.2e",
                   trials, bad_bounds, bad_delta1, examples ? "ok" : "wrong", detached ? "detached" : "attached",
                   frozen, naive);
    return r;
}

Result loss_values() {
    Result r{"loss_values", true, ""};
    std::vector<std::string> failed;
    auto expect = [&](const char* name, double got, double want) {
        if (!(std::abs(got - want) <= 1e-12)) failed.push_back(name);
    };
    const double ln2 = std::numbers::ln2;
    auto softplus = [](double x) { return std::log1p(std::exp(x)); };
    const auto flag = [](std::size_t n) { return DiffMask::from_flags(std::vector<bool>(n, true)); };

    LossSpec dpo;
    expect("DPO at the reference", value_of(dpo, {-1.0, -2.0}, {-0.5}, {-1.0, -2.0}, {-0.5}), ln2);
    dpo.beta = 0.1;
    expect("DPO margin 20", value_of(dpo, {-1.0}, {-3.0}, {-21.0}, {-3.0}), softplus(-2.0));

    LossSpec bmc;
    bmc.method = Method::DPO_BMC;
    for (double ratio : {1.0, -2.0, 4.0}) {
        const double lp = std::log(0.5);
        expect("DPO_BMC single token", value_of(bmc, {lp}, {-1.0}, {lp - ratio}, {-1.0}, flag(1), flag(1)),
               softplus(-0.15 * ratio));
    }

    LossSpec figa;
    figa.method = Method::FIGA;
    figa.alpha = 1.0;
    figa.beta = 1.0;
    expect("FIGA", value_of(figa, {-1.0, -5.0}, {-2.0}, {0.0, 0.0}, {0.0}, DiffMask::from_flags({true, false}), flag(1)),
           -1.0);

    LossSpec ipo;
    ipo.method = Method::IPO;
    ipo.tau = 0.1;
    expect("IPO at target margin", value_of(ipo, {-1.0}, {-2.0}, {-6.0}, {-2.0}), 0.0);

    LossSpec simpo;
    simpo.method = Method::SIMPO;
    simpo.gamma = 0.0;
    expect("SimPO equal means", value_of(simpo, {-1.0, -1.0}, {-1.0}, {0.0, 0.0}, {0.0}), ln2);

    r.passed = failed.empty();
    r.detail = failed.empty() ? "all hand-computed values match" : "mismatch: " + failed.front();
    return r;
}

std::vector<Result> run_all() {
    return {gradients(), reductions(), decomposition(), diff_exhaustive(), diff_random(), lambda_semantics(),
            loss_values()};
}

}  // namespace bmc::check
