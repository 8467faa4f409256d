#include "bmc/check.hpp"

#include <doctest.h>

using namespace bmc;

TEST_CASE("thirteen objectives") {
    const auto all = check::all_objectives();
    CHECK(all.size() == 13);
    for (const auto& s : all) CHECK_NOTHROW(s.validate());
}

TEST_CASE("self-check suites pass on small inputs") {
    for (const check::Result& r : {check::gradients({5}), check::reductions(5), check::decomposition(3),
                                   check::diff_exhaustive(4, 2), check::diff_random(500, 12, 3),
                                   check::lambda_semantics(200), check::loss_values()}) {
        CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
        CHECK_FALSE(r.detail.empty());
    }
}

TEST_CASE("a too-tight tolerance is reported as a failure") {
    CHECK_FALSE(check::gradients({5}, 1e-4, 1e-30).passed);
}
