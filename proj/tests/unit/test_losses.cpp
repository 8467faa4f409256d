#include "bmc/error.hpp"
#include "bmc/losses.hpp"
#include "bmc/oracle.hpp"
#include "bmc/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace bmc;

namespace {

double value(const LossSpec& spec, std::vector<double> lw, std::vector<double> ll, std::vector<double> rw,
             std::vector<double> rl, std::optional<DiffMask> mw = std::nullopt, std::optional<DiffMask> ml = std::nullopt) {
    ad::Tape tape;
    const PairTerms t = constant_terms(tape, std::move(lw), std::move(ll), std::move(rw), std::move(rl), std::move(mw),
                                       std::move(ml));
    return batch_loss(tape, spec, std::span<const PairTerms>(&t, 1)).item();
}

LossSpec spec(Method m, double beta = 0.1, bool wrap = false) {
    LossSpec s;
    s.method = m;
    s.beta = beta;
    s.bmc_wrap = wrap;
    return s;
}

DiffMask mask(std::vector<bool> f) { return DiffMask::from_flags(std::move(f)); }

}  // namespace

TEST_CASE("method names round trip") {
    for (Method m : {Method::DPO, Method::DPO_BMC, Method::IPO, Method::KTO, Method::ORPO, Method::TDPO, Method::R_DPO,
                     Method::SIMPO, Method::FIGA})
        CHECK(parse_method(method_name(m)) == m);
    CHECK_THROWS_AS(parse_method("dpo"), ConfigError);
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(spec(Method::KTO, 0.1, true).validate(), ConfigError);
    CHECK_NOTHROW(spec(Method::SIMPO, 0.1, true).validate());
    LossSpec s = spec(Method::DPO_BMC);
    s.delta = 0.5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK_THROWS_AS(spec(Method::DPO, -1.0).validate(), ConfigError);
    CHECK(spec(Method::IPO, 0.1, true).label() == "IPO+BMC");
    CHECK(spec(Method::FIGA).needs_masks());
    CHECK_FALSE(spec(Method::IPO).needs_masks());
}

TEST_CASE("spec json round trip and unknown keys") {
    LossSpec s = spec(Method::R_DPO, 0.2, true);
    s.alpha = 0.3;
    const LossSpec back = loss_spec_from_json(to_json(s));
    CHECK(to_json(back) == to_json(s));
    CHECK_THROWS_AS(loss_spec_from_json({{"method", "DPO"}, {"betta", 0.1}}), ConfigError);
}

TEST_CASE("DPO at equal policies is ln 2") {
    CHECK(value(spec(Method::DPO), {-1, -2}, {-3}, {-1, -2}, {-3}) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("DPO value") {
    const double v = value(spec(Method::DPO, 0.5), {-1.0}, {-2.0}, {-2.0}, {-1.0});
    CHECK(v == doctest::Approx(std::log1p(std::exp(-1.0))));
}

TEST_CASE("weighted DPO with empty masks equals DPO") {
    const std::vector<double> lw = {-0.3, -1.2, -0.7}, ll = {-0.4, -2.0}, rw = {-0.5, -1.0, -0.9}, rl = {-0.6, -1.5};
    const double base = value(spec(Method::DPO), lw, ll, rw, rl);
    const double w = value(spec(Method::DPO_BMC), lw, ll, rw, rl, mask({false, false, false}), mask({false, false}));
    CHECK(w == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("weighted DPO scales flagged terms") {
    // p = 0.5 on the flagged chosen token: weight 1 + min(2, 2.5) = 3.
    const double lp = std::log(0.5);
    const double v = value(spec(Method::DPO_BMC, 1.0), {lp, -1.0}, {-1.0}, {lp - 0.1, -1.0}, {-1.0}, mask({true, false}),
                           mask({false}));
    CHECK(v == doctest::Approx(std::log1p(std::exp(-0.3))));
}

TEST_CASE("weighted objectives require masks") {
    CHECK_THROWS_AS(value(spec(Method::DPO_BMC), {-1}, {-1}, {-1}, {-1}), DataError);
    CHECK_THROWS_AS(value(spec(Method::FIGA), {-1}, {-1}, {-1}, {-1}), DataError);
}

TEST_CASE("distribution objectives require distributions") {
    CHECK_THROWS_AS(value(spec(Method::TDPO), {-1}, {-1}, {-1}, {-1}), DataError);
}

TEST_CASE("lambda weights") {
    const auto w = lambda_weights(std::vector<double>{0.5, 1.0 / 3.0, 1.0, 1e-20, 0.5}, mask({true, true, true, true, false}), 2.5);
    CHECK(w[0] == doctest::Approx(3.0));
    CHECK(w[1] == doctest::Approx(3.5));
    CHECK(w[2] == doctest::Approx(2.0));
    CHECK(w[3] == doctest::Approx(3.5));
    CHECK(w[4] == 1.0);
}

TEST_CASE("objectives match the plain oracle on random inputs") {
    Rng rng(17);
    auto draw = [&](std::size_t n) {
        std::vector<double> v(n);
        for (double& x : v) x = -0.05 - 3.0 * rng.uniform01();
        return v;
    };
    auto flags = [&](std::size_t n) {
        std::vector<bool> f(n);
        for (std::size_t i = 0; i < n; ++i) f[i] = rng.uniform01() < 0.5;
        f[0] = true;
        return f;
    };
    for (Method m : {Method::DPO, Method::DPO_BMC, Method::IPO, Method::ORPO, Method::R_DPO, Method::SIMPO, Method::FIGA}) {
        for (bool wrap : {false, true}) {
            LossSpec s = spec(m, 0.3, wrap);
            if (wrap && (m == Method::DPO_BMC || m == Method::FIGA)) continue;
            if (wrap && m == Method::DPO) continue;
            oracle::PlainPair p;
            p.logp_w = draw(4);
            p.logp_l = draw(3);
            p.ref_w = draw(4);
            p.ref_l = draw(3);
            p.mask_w = flags(4);
            p.mask_l = flags(3);
            const double got = value(s, p.logp_w, p.logp_l, p.ref_w, p.ref_l, mask(p.mask_w), mask(p.mask_l));
            CHECK(got == doctest::Approx(oracle::loss(s, std::span<const oracle::PlainPair>(&p, 1))).epsilon(1e-12));
        }
    }
}
