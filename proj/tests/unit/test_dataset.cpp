#include "bmc/dataset.hpp"
#include "bmc/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace bmc;
namespace fs = std::filesystem;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v = Vocabulary::for_tasks(208, default_stopwords());
    return v;
}

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "prefbmc_dataset_test";
    fs::create_directories(dir);
    return dir / name;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<PreferencePair> sample(std::size_t n) {
    SortTaskOptions o;
    o.n_pairs = n;
    o.hi = 40;
    return gen_sort_task(o, vocab());
}

}  // namespace

TEST_CASE("pairs round trip") {
    const auto pairs = sample(20);
    const fs::path p = temp_file("pairs.jsonl");
    save_pairs(p, pairs);
    const auto back = load_pairs(p, vocab());
    REQUIRE(back.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(back[i].prompt == pairs[i].prompt);
        CHECK(back[i].chosen == pairs[i].chosen);
        CHECK(back[i].rejected == pairs[i].rejected);
        CHECK(back[i].meta == pairs[i].meta);
    }
}

TEST_CASE("bridged pairs round trip with masks and provenance") {
    OracleEditor editor(vocab(), "sort");
    const BridgeResult r = bridge_dataset(sample(30), editor, vocab(), 1);
    REQUIRE_FALSE(r.bridged.empty());
    const fs::path p = temp_file("bridged.jsonl");
    save_bridged(p, r.bridged);
    const auto back = load_bridged(p, vocab());
    REQUIRE(back.size() == r.bridged.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].chosen_bridged == r.bridged[i].chosen_bridged);
        CHECK(back[i].masks.chosen == r.bridged[i].masks.chosen);
        CHECK(back[i].masks.rejected == r.bridged[i].masks.rejected);
        CHECK(back[i].provenance.editor == "oracle:sort");
    }
    const auto ex = load_examples(p, vocab());
    REQUIRE(ex.size() == back.size());
    CHECK(ex[0].masks.has_value());
    CHECK(ex[0].edit_distance == edit_distance(ex[0].chosen, ex[0].rejected));
    CHECK_FALSE(to_example(sample(1)[0]).masks.has_value());
}

TEST_CASE("malformed lines name the line") {
    const fs::path p = temp_file("bad.jsonl");
    write(p, "{\"prompt\": \"a\", \"chosen\": \"b\", \"rejected\": \"c\", \"meta\": {}}\n{oops\n");
    try {
        read_jsonl(p);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
}

TEST_CASE("missing fields are data errors") {
    CHECK_THROWS_AS(pair_from_json({{"prompt", "1 2"}, {"chosen", "2 1"}}, vocab()), DataError);
    CHECK_THROWS_AS(pair_from_json({{"prompt", "1 2"}, {"chosen", 3}, {"rejected", "x"}}, vocab()), DataError);
    const fs::path p = temp_file("missing.jsonl");
    write(p, "{\"prompt\": \"sort\", \"chosen\": \"1 2\", \"rejected\": \"2 1\"}\n");
    CHECK_NOTHROW(load_pairs(p, vocab()));
}

TEST_CASE("out-of-range diff indices are rejected") {
    nlohmann::json j = {{"prompt", "sort"},          {"chosen_bridged", "2 1"},
                        {"rejected", "1 2"},         {"diff_chosen", {0, 5}},
                        {"diff_rejected", {0}},       {"provenance", {{"editor", "x"}, {"template", "y"}}},
                        {"meta", nlohmann::json::object()}};
    CHECK_THROWS_AS(bridged_from_json(j, vocab()), DataError);
}

TEST_CASE("blank lines are skipped") {
    const fs::path p = temp_file("blank.jsonl");
    write(p, "\n{\"a\": 1}\n\n");
    CHECK(read_jsonl(p).size() == 1);
}
