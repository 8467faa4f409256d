#include "bmc/error.hpp"
#include "bmc/model.hpp"

#include <doctest.h>

#include <cmath>

using namespace bmc;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v({"a", "b", "c", "d", "e", "f"});
    return v;
}

ModelConfig tiny(std::uint64_t seed = 3) {
    ModelConfig c;
    c.vocab_size = vocab().size();
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 12;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("parameter count matches the closed form and the tensors") {
    const ModelConfig c = tiny();
    const std::size_t V = c.vocab_size, d = c.d_model, L = c.max_seq_len;
    const std::size_t want = V * d + L * d + c.n_layers * (12 * d * d + 13 * d) + 2 * d + d * V + V;
    CHECK(parameter_count(c) == want);
    CHECK(init_policy(c).num_parameters() == want);
}

TEST_CASE("initialization is seeded") {
    CHECK(fingerprint(init_policy(tiny(1))) == fingerprint(init_policy(tiny(1))));
    CHECK(fingerprint(init_policy(tiny(1))) != fingerprint(init_policy(tiny(2))));
}

TEST_CASE("config validation") {
    ModelConfig c = tiny();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.vocab_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("next-token distributions are normalized") {
    const Policy p = init_policy(tiny());
    const ad::Tensor dist = log_distributions(p, tokenize("a b", vocab()), tokenize("c d e", vocab()));
    REQUIRE(dist.shape == std::vector<std::size_t>{3, vocab().size()});
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (std::size_t v = 0; v < vocab().size(); ++v) total += std::exp(dist.data[r * vocab().size() + v]);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto lp = logprobs(p, tokenize("a b", vocab()), tokenize("c d e", vocab()));
    CHECK(lp[1] == dist.data[vocab().size() + static_cast<std::size_t>(vocab().id_of("d"))]);
}

TEST_CASE("scoring is causal") {
    const Policy p = init_policy(tiny());
    const auto a = logprobs(p, tokenize("a", vocab()), tokenize("b c d", vocab()));
    const auto b = logprobs(p, tokenize("a", vocab()), tokenize("b c f", vocab()));
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
    CHECK(a[2] != b[2]);
}

TEST_CASE("over-long and empty inputs are data errors") {
    const Policy p = init_policy(tiny());
    CHECK_THROWS_AS(logprobs(p, tokenize("a", vocab()), TokenSeq{}), DataError);
    CHECK_THROWS_AS(logprobs(p, tokenize("a b c d e f", vocab()), tokenize("a b c d e f", vocab())), DataError);
}

TEST_CASE("checkpoint round trip is exact") {
    const Policy p = init_policy(tiny());
    const Checkpoint ck{p, vocab().tokens(), {"a"}, {{"stage", "sft"}}};
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck));
    CHECK(fingerprint(back.policy) == fingerprint(p));
    CHECK(back.policy.names == p.names);
    CHECK(back.vocab == ck.vocab);
    CHECK(back.stopwords == ck.stopwords);
    CHECK(back.extra == ck.extra);
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));
}

TEST_CASE("corrupt checkpoints are rejected") {
    const std::string bytes = serialize_checkpoint({init_policy(tiny()), vocab().tokens(), {}, {}});
    CHECK_THROWS(deserialize_checkpoint("not a checkpoint"));
    CHECK_THROWS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)));
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS(deserialize_checkpoint(bad));
}

TEST_CASE("supervised fine-tuning lowers the loss") {
    Policy p = init_policy(tiny());
    std::vector<SftExample> data;
    for (int i = 0; i < 16; ++i) data.push_back({tokenize(i % 2 ? "a b" : "b a", vocab()), tokenize(i % 2 ? "c d" : "e f", vocab())});
    SftConfig c;
    c.epochs = 30;
    c.lr = 1e-2;
    c.batch_size = 8;
    const SftReport r = sft_train(p, data, c);
    REQUIRE(r.epoch_loss.size() == 30);
    CHECK(r.epoch_loss.back() < 0.5 * r.epoch_loss.front());
    const TokenSeq out = greedy_decode(p, tokenize("a b", vocab()), vocab(), 4);
    CHECK(detokenize(out) == "c d");
}
