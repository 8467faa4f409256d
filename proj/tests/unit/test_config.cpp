#include "bmc/config.hpp"
#include "bmc/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace bmc;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("defaults validate") { CHECK_NOTHROW(RunConfig{}.validate()); }

TEST_CASE("unknown keys are rejected at every level") {
    CHECK_THROWS_AS(run_config_from_json({{"sead", 1}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"corpus", {{"n_pair", 1}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"train", {{"loss", {{"betta", 1}}}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"train", {{"seed", 1}}}}), ConfigError);
}

TEST_CASE("type errors are config errors") {
    CHECK_THROWS_AS(run_config_from_json({{"corpus", {{"n_pairs", "many"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"seed", -1}}), ConfigError);
}

TEST_CASE("json round trip") {
    RunConfig c;
    c.seed = 42;
    c.corpus.task = "arith";
    c.io.out = "/tmp/prefbmc_run";
    c.train.loss.method = Method::IPO;
    c.train.loss.bmc_wrap = true;
    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
}

TEST_CASE("overrides") {
    json j = json::object();
    apply_override(j, "train.loss.beta", "0.25");
    apply_override(j, "corpus.task", "arith");
    apply_override(j, "train.loss.bmc_wrap", "true");
    CHECK(j["train"]["loss"]["beta"] == 0.25);
    CHECK(j["corpus"]["task"] == "arith");
    CHECK(j["train"]["loss"]["bmc_wrap"] == true);
    const RunConfig c = load_run_config(std::nullopt, {{"train.loss.method", "SIMPO"}, {"train.loss.bmc_wrap", "true"}});
    CHECK(c.train.loss.label() == "SIMPO+BMC");
    CHECK_THROWS_AS(load_run_config(std::nullopt, {{"train.loss.method", "KTO"}, {"train.loss.bmc_wrap", "true"}}),
                    ConfigError);
}

TEST_CASE("paths resolve against the config file") {
    const fs::path dir = fs::temp_directory_path() / "prefbmc_cfg";
    fs::create_directories(dir / "data");
    std::ofstream(dir / "data" / "stop.txt") << "the\n";
    std::ofstream(dir / "run.json") << json{{"corpus", {{"stopwords_file", "data/stop.txt"}}}, {"io", {{"out", "out"}}}}.dump();
    const RunConfig c = load_run_config(dir / "run.json");
    CHECK(*c.corpus.stopwords_file == dir / "data" / "stop.txt");
    CHECK(c.io.out == dir / "out");
    CHECK(stopwords_for(c) == std::set<std::string>{"the"});
    CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
    std::ofstream(dir / "bad.json") << json{{"corpus", {{"stopwords_file", "nope.txt"}}}}.dump();
    CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("the shipped configs load") {
    const fs::path root = fs::path(PREFBMC_DATA_DIR).parent_path() / "configs";
    CHECK_NOTHROW(load_run_config(root / "default.json"));
}

TEST_CASE("llm editor needs an endpoint") {
    CHECK_THROWS_AS(load_run_config(std::nullopt, {{"bridging.editor", "llm"}}), ConfigError);
}

TEST_CASE("seeds derive from the root") {
    CHECK(derive_seed(1, "train") == derive_seed(1, "train"));
    CHECK(derive_seed(1, "train") != derive_seed(2, "train"));
    CHECK(derive_seed(1, "train") != derive_seed(1, "sft"));
    RunConfig c;
    c.seed = 5;
    CHECK(train_config_for(c).seed == derive_seed(5, "train"));
    CHECK(sft_config_for(c).seed == derive_seed(5, "sft"));
}

TEST_CASE("held-out pairs differ from training pairs") {
    RunConfig c;
    c.corpus.n_pairs = 20;
    c.corpus.n_heldout = 20;
    const Vocabulary v = vocab_for(c);
    const auto a = generate_pairs(c, v, true), b = generate_pairs(c, v, false);
    REQUIRE(a.size() == 20);
    REQUIRE(b.size() == 20);
    std::size_t same = 0;
    for (std::size_t i = 0; i < 20; ++i) same += a[i].prompt == b[i].prompt ? 1 : 0;
    CHECK(same < 3);
}
