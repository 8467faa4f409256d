#include "bmc/corpus.hpp"
#include "bmc/diff.hpp"
#include "bmc/error.hpp"
#include "bmc/oracle.hpp"

#include <doctest.h>

using namespace bmc;

namespace {

TokenSeq words(const std::string& s) {
    static const Vocabulary v({"the", "cat", "sat", "on", "mat", "a", "dog", "ran", "hat"}, {"the", "a", "on"});
    return tokenize(s, v);
}

}  // namespace

TEST_CASE("edit distance basics") {
    const std::vector<int> a = {1, 2, 3}, b = {1, 3}, e = {};
    CHECK(edit_distance(a, a) == 0);
    CHECK(edit_distance(a, b) == 1);
    CHECK(edit_distance(a, e) == 3);
    CHECK(edit_distance(e, b) == 2);
    const std::vector<int> k = {1, 2, 3, 3, 4, 5}, s = {6, 2, 3, 7, 4, 5, 8};
    CHECK(edit_distance(k, s) == 3);
}

TEST_CASE("alignment replays to the target") {
    const std::vector<int> src = {4, 5, 6, 7}, tgt = {5, 6, 8, 7, 9};
    const Alignment al = align(src, tgt);
    CHECK(al.cost == edit_distance(src, tgt));
    CHECK(apply_alignment(al, src, tgt) == tgt);
}

TEST_CASE("substitution flags both sides") {
    const DiffMasks m = diff_masks(words("cat sat mat"), words("cat ran mat"), {});
    CHECK(m.chosen.indices() == std::vector<int>{1});
    CHECK(m.rejected.indices() == std::vector<int>{1});
}

TEST_CASE("insertion and deletion flag one side each") {
    const DiffMasks ins = diff_masks(words("cat sat mat"), words("cat mat"), {});
    CHECK(ins.chosen.indices() == std::vector<int>{1});
    CHECK(ins.rejected.indices().empty());
    const DiffMasks del = diff_masks(words("cat mat"), words("cat sat mat"), {});
    CHECK(del.chosen.indices().empty());
    CHECK(del.rejected.indices() == std::vector<int>{1});
}

TEST_CASE("stopwords are never flagged") {
    static const Vocabulary v({"the", "cat", "sat", "on", "mat", "a", "dog", "ran", "hat"}, {"the", "a", "on"});
    const DiffMasks m = diff_masks(tokenize("the cat sat", v), tokenize("a dog sat", v), v.stopword_ids());
    CHECK(m.chosen.indices() == std::vector<int>{1});
    CHECK(m.rejected.indices() == std::vector<int>{1});
}

TEST_CASE("identical responses give empty masks") {
    const DiffMasks m = diff_masks(words("cat sat"), words("cat sat"), {});
    CHECK(m.chosen.empty());
    CHECK(m.rejected.empty());
    CHECK(m.chosen.size() == 2);
}

TEST_CASE("empty responses are rejected") {
    CHECK_THROWS_AS(diff_masks(TokenSeq{}, words("cat"), {}), DataError);
}

TEST_CASE("spans group consecutive flags") {
    const DiffMask m = DiffMask::from_flags({true, true, false, true, false, false, true, true, true});
    REQUIRE(m.spans.size() == 3);
    CHECK(m.count() == 6);
    CHECK(DiffMask::from_indices(9, m.indices()) == m);
}

TEST_CASE("ties prefer substitution, then deletion") {
    const std::vector<int> src = {1, 2}, tgt = {2, 1};
    const oracle::BruteDiff want = oracle::brute_force_diff(src, tgt);
    const DiffMasks got = diff_masks(TokenSeq{tgt, {"", ""}}, TokenSeq{src, {"", ""}}, {});
    CHECK(got.chosen.flags == want.target_flags);
    CHECK(got.rejected.flags == want.source_flags);
}

TEST_CASE("agrees with brute force on short sequences") {
    std::size_t checked = 0;
    for (int la = 1; la <= 4; ++la)
        for (int lb = 1; lb <= 4; ++lb)
            for (int x = 0; x < (1 << (la + lb)); ++x) {
                std::vector<int> a, b;
                for (int i = 0; i < la; ++i) a.push_back((x >> i) & 1);
                for (int i = 0; i < lb; ++i) b.push_back((x >> (la + i)) & 1);
                const oracle::BruteDiff want = oracle::brute_force_diff(a, b);
                CHECK(edit_distance(a, b) == want.distance);
                CHECK(oracle::furthest_reaching_distance(a, b) == want.distance);
                const DiffMasks got =
                    diff_masks(TokenSeq{b, std::vector<std::string>(b.size())}, TokenSeq{a, std::vector<std::string>(a.size())}, {});
                CHECK(got.chosen.flags == want.target_flags);
                CHECK(got.rejected.flags == want.source_flags);
                ++checked;
            }
    CHECK(checked == 900);
}
