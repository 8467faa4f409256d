#include "bmc/analysis.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace bmc;
namespace fs = std::filesystem;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v({"a", "b", "c", "d", "e", "f"});
    return v;
}

Policy tiny_policy(std::uint64_t seed) {
    ModelConfig c;
    c.vocab_size = vocab().size();
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.max_seq_len = 12;
    c.seed = seed;
    return init_policy(c);
}

TrainExample example(const std::string& chosen, const std::string& rejected) {
    TrainExample ex;
    ex.prompt = tokenize("a b", vocab());
    ex.chosen = tokenize(chosen, vocab());
    ex.rejected = tokenize(rejected, vocab());
    ex.masks = diff_masks(ex.chosen, ex.rejected, {});
    ex.edit_distance = edit_distance(ex.chosen, ex.rejected);
    return ex;
}

// Every parameter zero except the layer norm gains gives uniform predictions.
Policy uniform_policy() {
    Policy p = tiny_policy(1);
    for (auto& t : p.params) std::fill(t.data.begin(), t.data.end(), 0.0);
    return p;
}

}  // namespace

TEST_CASE("rewards vanish when the policy is the reference") {
    const Policy p = tiny_policy(1);
    const auto data = std::vector<TrainExample>{example("c d e", "c f e"), example("d e", "e d")};
    const SeqRewardReport r = seq_reward_report(p, snapshot(p), data, 0.1);
    CHECK(r.mean_margin == 0.0);
    CHECK(r.accuracy == 0.0);
    const PairRewardTraces t = token_rewards(p, snapshot(p), data[0], 0.1);
    for (double x : t.chosen.rewards) CHECK(x == 0.0);
    CHECK(t.chosen.flags == std::vector<bool>{false, true, false});
    CHECK(t.chosen.tokens == std::vector<std::string>{"c", "d", "e"});
}

TEST_CASE("margins scale linearly with beta") {
    const Policy p = tiny_policy(1), q = tiny_policy(2);
    const auto data = std::vector<TrainExample>{example("c d e", "c f e")};
    const double m1 = seq_reward_report(p, snapshot(q), data, 0.1).margins[0];
    const double m2 = seq_reward_report(p, snapshot(q), data, 0.3).margins[0];
    CHECK(m2 == doctest::Approx(3.0 * m1).epsilon(1e-12));
    const auto lp = logprobs(p, data[0].prompt, data[0].chosen), lq = logprobs(q, data[0].prompt, data[0].chosen);
    const auto lr = logprobs(p, data[0].prompt, data[0].rejected), lqr = logprobs(q, data[0].prompt, data[0].rejected);
    double want = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) want += lp[i] - lq[i];
    for (std::size_t i = 0; i < lr.size(); ++i) want -= lr[i] - lqr[i];
    CHECK(m1 == doctest::Approx(0.1 * want).epsilon(1e-12));
}

TEST_CASE("KL is zero at the reference and ln V against a uniform model") {
    const Policy p = tiny_policy(1);
    CHECK(seq_kl_to_ref(p, snapshot(p), tokenize("a", vocab()), tokenize("b c", vocab())) == doctest::Approx(0.0));
    const Policy u = uniform_policy();
    const auto dist = log_distributions(u, tokenize("a", vocab()), tokenize("b", vocab()));
    for (double x : dist.data) CHECK(x == doctest::Approx(-std::log(static_cast<double>(vocab().size()))));
    const auto track = kl_track({{0, p}, {5, p}}, snapshot(p), {example("c d", "d c")});
    REQUIRE(track.size() == 2);
    CHECK(track[1].step == 5);
    CHECK(track[0].kl == doctest::Approx(0.0));
}

TEST_CASE("span profile averages per token") {
    const Policy u = uniform_policy();
    const auto prof = span_logp_profile(u, {example("c d e", "c f a e"), example("c d", "e f")});
    REQUIRE(prof.positions == std::vector<std::size_t>{1, 2});
    CHECK(prof.counts == std::vector<std::size_t>{2, 2});
    for (double x : prof.mean_nll) CHECK(x == doctest::Approx(std::log(static_cast<double>(vocab().size()))));
    TrainExample plain = example("c d", "c d e");
    plain.masks.reset();
    CHECK_THROWS_AS(span_logp_profile(u, {plain}), DataError);
}

TEST_CASE("spearman") {
    CHECK(*spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(*spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(*spearman({1, 2, 3}, {1, 1, 2}) == doctest::Approx(std::sqrt(3.0) / 2.0));
    CHECK_FALSE(spearman({1, 2, 3}, {5, 5, 5}).has_value());
}

TEST_CASE("buckets order steps by edit distance") {
    std::vector<StepLog> logs;
    for (std::size_t i = 0; i < 12; ++i) logs.push_back({i, 0.5, static_cast<double>(i % 6) + 1.0, 1e-3, static_cast<double>(i % 6)});
    const BucketSummary b = grad_norm_buckets(logs, 6);
    CHECK(b.counts == std::vector<std::size_t>(6, 2));
    CHECK(b.mean_edit_distance == std::vector<double>{0, 1, 2, 3, 4, 5});
    CHECK(b.spearman_defined);
    CHECK(b.spearman == doctest::Approx(1.0));
    CHECK_THROWS_AS(grad_norm_buckets(logs, 13), DataError);

    for (auto& l : logs) l.grad_norm = 2.0;
    const BucketSummary flat = grad_norm_buckets(logs, 6);
    CHECK_FALSE(flat.spearman_defined);
    CHECK(flat.spearman == 0.0);
    CHECK(flat.coefficient_of_variation == 0.0);
}

TEST_CASE("report round trip is byte stable") {
    const Policy p = tiny_policy(1), q = tiny_policy(2);
    const std::vector<TrainExample> data = {example("c d e", "c f e"), example("d e", "e d")};
    ReportData r;
    r.seq = seq_reward_report(p, snapshot(q), data, 0.1);
    r.kl = kl_track({{0, q}, {3, p}}, snapshot(q), data);
    r.traces.push_back(token_rewards(p, snapshot(q), data[0], 0.1));
    r.span = span_logp_profile(p, data);
    std::vector<StepLog> logs;
    for (std::size_t i = 0; i < 6; ++i) logs.push_back({i, 0.1 * i, 1.0 + i, 1e-3, static_cast<double>(i)});
    r.buckets = grad_norm_buckets(logs, 3);

    const fs::path a = fs::temp_directory_path() / "prefbmc_report_a", b = fs::temp_directory_path() / "prefbmc_report_b";
    fs::remove_all(a);
    fs::remove_all(b);
    const auto files = emit_report(a, r);
    emit_report(b, load_report(a));
    CHECK(files.size() == 7);
    for (const auto& f : files) {
        std::ifstream fa(f, std::ios::binary), fb(b / f.filename(), std::ios::binary);
        const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
        CHECK_MESSAGE(sa == sb, f.filename().string());
    }
}

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
