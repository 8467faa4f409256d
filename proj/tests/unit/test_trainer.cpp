#include "bmc/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace bmc;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v({"a", "b", "c", "d", "e", "f", "the"}, {"the"});
    return v;
}

Policy tiny_policy() {
    ModelConfig c;
    c.vocab_size = vocab().size();
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.max_seq_len = 12;
    c.seed = 4;
    return init_policy(c);
}

std::vector<TrainExample> data(bool with_masks) {
    std::vector<TrainExample> out;
    const char* prompts[] = {"a b", "b a", "c a", "a c"};
    for (int i = 0; i < 8; ++i) {
        TrainExample ex;
        ex.prompt = tokenize(prompts[i % 4], vocab());
        ex.chosen = tokenize(i % 2 ? "c d e" : "d e f", vocab());
        ex.rejected = tokenize(i % 2 ? "c f e" : "d e a", vocab());
        ex.edit_distance = edit_distance(ex.chosen, ex.rejected);
        if (with_masks) ex.masks = diff_masks(ex.chosen, ex.rejected, vocab().stopword_ids());
        out.push_back(ex);
    }
    return out;
}

TrainConfig config(Method m, double lr = 1e-2) {
    TrainConfig c;
    c.loss.method = m;
    c.loss.beta = 0.5;
    c.lr = lr;
    c.batch_size = 4;
    c.epochs = 3;
    c.seed = 9;
    return c;
}

}  // namespace

TEST_CASE("zero learning rate leaves the policy unchanged") {
    const Policy p = tiny_policy();
    const TrainResult r = train(p, data(true), config(Method::DPO_BMC, 0.0));
    CHECK(fingerprint(r.policy) == fingerprint(p));
    CHECK(r.logs.size() == 6);
    CHECK(r.logs.front().loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("training moves the policy and keeps the reference fixed") {
    const Policy p = tiny_policy();
    const PolicySnapshot ref = snapshot(p);
    const TrainResult r = train(p, ref, data(false), config(Method::DPO));
    CHECK(fingerprint(r.policy) != fingerprint(p));
    CHECK(r.ref_fingerprint == ref.fingerprint());
    CHECK(fingerprint(p) == ref.fingerprint());
    CHECK(r.logs.back().loss < r.logs.front().loss);
}

TEST_CASE("training is deterministic") {
    const Policy p = tiny_policy();
    const TrainResult a = train(p, data(true), config(Method::DPO_BMC));
    const TrainResult b = train(p, data(true), config(Method::DPO_BMC));
    CHECK(fingerprint(a.policy) == fingerprint(b.policy));
    for (std::size_t i = 0; i < a.logs.size(); ++i) CHECK(a.logs[i].loss == b.logs[i].loss);
}

TEST_CASE("objectives that need masks reject plain pairs") {
    try {
        train(tiny_policy(), data(false), config(Method::DPO_BMC));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("diff_chosen") != std::string::npos);
    }
}

TEST_CASE("every objective trains for a few steps") {
    for (Method m : {Method::IPO, Method::KTO, Method::ORPO, Method::TDPO, Method::R_DPO, Method::SIMPO, Method::FIGA}) {
        TrainConfig c = config(m, 1e-3);
        c.epochs = 1;
        const TrainResult r = train(tiny_policy(), data(true), c);
        CHECK(r.logs.size() == 2);
        for (const auto& l : r.logs) CHECK(std::isfinite(l.loss));
    }
}

TEST_CASE("checkpoints include the start and the end") {
    TrainConfig c = config(Method::DPO);
    c.checkpoint_every = 4;
    const TrainResult r = train(tiny_policy(), data(false), c);
    REQUIRE(r.checkpoints.size() == 3);
    CHECK(r.checkpoints[0].step == 0);
    CHECK(r.checkpoints[1].step == 4);
    CHECK(r.checkpoints[2].step == 6);
    CHECK(fingerprint(r.checkpoints[2].policy) == fingerprint(r.policy));
}

TEST_CASE("non-finite loss aborts with the last good policy") {
    Policy p = tiny_policy();
    p.params.back().data[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        train(p, data(false), config(Method::DPO));
        FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
        CHECK(e.step() == 0);
        CHECK(std::isnan(e.last_good().params.back().data[0]));
    }
}

TEST_CASE("step logs round trip") {
    const TrainResult r = train(tiny_policy(), data(false), config(Method::DPO));
    const auto path = std::filesystem::temp_directory_path() / "prefbmc_steps.csv";
    write_step_logs(path, r.logs);
    const auto back = read_step_logs(path);
    REQUIRE(back.size() == r.logs.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].loss == r.logs[i].loss);
        CHECK(back[i].grad_norm == r.logs[i].grad_norm);
        CHECK(back[i].lr == r.logs[i].lr);
        CHECK(back[i].mean_edit_distance == r.logs[i].mean_edit_distance);
    }
}

TEST_CASE("train config json") {
    TrainConfig c = config(Method::SIMPO);
    c.grad_clip = 1.0;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_AS(train_config_from_json({{"lrate", 1.0}}), ConfigError);
    c.warmup_frac = 0.7;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
