#include "bmc/corpus.hpp"
#include "bmc/diff.hpp"
#include "bmc/error.hpp"

#include <doctest.h>

#include <set>

using namespace bmc;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v = Vocabulary::for_tasks(208, default_stopwords());
    return v;
}

}  // namespace

TEST_CASE("word tokenizer splits punctuation") {
    CHECK(split_tokens("sort descending: 3,4.") == std::vector<std::string>{"sort", "descending", ":", "3", ",", "4", "."});
    CHECK(split_tokens("  a   b ") == std::vector<std::string>{"a", "b"});
    CHECK(split_tokens("ab", TokenizerMode::character) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("unknown words keep their surface") {
    const TokenSeq s = tokenize("zebra 12", vocab());
    CHECK(s.ids[0] == Vocabulary::kUnk);
    CHECK(s.surfaces[0] == "zebra");
    CHECK(detokenize(s) == "zebra 12");
}

TEST_CASE("vocabulary rejects duplicates and reserved names") {
    CHECK_THROWS_AS(Vocabulary({"x", "x"}), ConfigError);
    const Vocabulary v({"x", "the"}, {"the", "absent"});
    CHECK(v.size() == 6);
    CHECK(v.is_stopword(v.id_of("the")));
    CHECK(v.stopwords() == std::set<std::string>{"the"});
}

TEST_CASE("shipped stopword file equals the built-in list") {
    const auto s = load_stopwords(std::string(PREFBMC_DATA_DIR) + "/stopwords.txt");
    CHECK(s == default_stopwords());
    CHECK(s.contains("the"));
    CHECK(s.contains("a"));
}

TEST_CASE("sort pairs are seeded and well formed") {
    SortTaskOptions o;
    o.n_pairs = 200;
    o.seed = 5;
    o.good_enough_frac = 0.25;
    const auto a = gen_sort_task(o, vocab());
    const auto b = gen_sort_task(o, vocab());
    REQUIRE(a.size() == 200);
    std::size_t passing = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].chosen == b[i].chosen);
        CHECK(a[i].rejected == b[i].rejected);
        CHECK(passes_oracle("sort", a[i].prompt, a[i].chosen));
        CHECK_NOTHROW(validate(a[i]));
        const bool ok = passes_oracle("sort", a[i].prompt, a[i].rejected);
        CHECK(ok == (a[i].meta.at("corruption") == "none"));
        passing += ok ? 1 : 0;
    }
    CHECK(passing > 20);
    CHECK(passing < 90);
}

TEST_CASE("block exchange keeps the rejected list locally descending") {
    SortTaskOptions o;
    o.n_pairs = 300;
    o.swap_frac = 0.0;
    for (const auto& p : gen_sort_task(o, vocab())) {
        CHECK(p.meta.at("corruption") == "run");
        CHECK_FALSE(passes_oracle("sort", p.prompt, p.rejected));
    }
}

TEST_CASE("arith pairs corrupt exactly one step") {
    ArithTaskOptions o;
    o.n_pairs = 200;
    o.seed = 2;
    for (const auto& p : gen_arith_task(o, vocab())) {
        CHECK(passes_oracle("arith", p.prompt, p.chosen));
        CHECK_FALSE(passes_oracle("arith", p.prompt, p.rejected));
        const std::string kind = p.meta.at("corruption");
        CHECK((kind == "step1" || kind == "step2"));
    }
}

TEST_CASE("oracle ignores phrasing") {
    const TokenSeq prompt = tokenize("sort descending : 12 40 33", vocab());
    for (int t = 0; t < kSortTemplates; ++t) CHECK(passes_oracle("sort", prompt, tokenize(solve("sort", prompt, t), vocab())));
    CHECK_FALSE(passes_oracle("sort", prompt, tokenize(render_sort_response({40, 12, 33}, 0), vocab())));
    CHECK(passes_oracle("arith", tokenize("57 + 38 =", vocab()), tokenize(render_arith_response(57, '+', 38, 1), vocab())));
}

TEST_CASE("generator options are validated") {
    SortTaskOptions o;
    o.lo = 50;
    o.hi = 40;
    CHECK_THROWS_AS(gen_sort_task(o, vocab()), ConfigError);
    o = {};
    o.swap_frac = 1.5;
    CHECK_THROWS_AS(gen_sort_task(o, vocab()), ConfigError);
}

TEST_CASE("sft targets are correct answers") {
    SortTaskOptions o;
    o.n_pairs = 50;
    const auto pairs = gen_sort_task(o, vocab());
    const auto ex = sft_examples(pairs, vocab(), 1);
    REQUIRE(ex.size() == pairs.size());
    for (std::size_t i = 0; i < ex.size(); ++i) CHECK(passes_oracle("sort", ex[i].prompt, ex[i].target));
}
