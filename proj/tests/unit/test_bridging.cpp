#include "bmc/bridging.hpp"
#include "bmc/error.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace bmc;
namespace fs = std::filesystem;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v = Vocabulary::for_tasks(208, default_stopwords());
    return v;
}

PreferencePair make_pair(const std::string& prompt, const std::string& chosen, const std::string& rejected) {
    return {tokenize(prompt, vocab()), tokenize(chosen, vocab()), tokenize(rejected, vocab()), {{"task", "sort"}}};
}

// Local chat-completions stand-in; the handler decides every reply.
class MockServer {
public:
    explicit MockServer(httplib::Server::Handler handler) {
        server_.Post("/v1/chat", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }
    [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

LlmEditorConfig llm_config(const std::string& url) {
    const fs::path tmpl = fs::temp_directory_path() / "prefbmc_bridge_template.txt";
    std::ofstream(tmpl) << "Prompt: {x}\nGood: {y_w}\nBad: {y_l}\n";
    setenv("PREFBMC_TEST_KEY", "secret", 1);
    LlmEditorConfig c;
    c.endpoint = url;
    c.model = "mock";
    c.template_file = tmpl;
    c.api_key_env = "PREFBMC_TEST_KEY";
    c.max_retries = 2;
    c.timeout = std::chrono::milliseconds(5000);
    c.backoff = std::chrono::milliseconds(1);
    return c;
}

std::string completion(const std::string& content) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

}  // namespace

TEST_CASE("template substitution is single pass") {
    CHECK(fill_template("{x}|{y_w}|{y_l}", "{y_l}", "b", "c") == "{y_l}|b|c");
    CHECK(fill_template("no placeholders", "a", "b", "c") == "no placeholders");
}

TEST_CASE("reply parsing") {
    const auto e = parse_editor_reply("Here:\n```\n40 33 12 ; first is 40\n```\n");
    CHECK(e.verdict == Verdict::edited);
    CHECK(e.text == "40 33 12 ; first is 40");
    CHECK(parse_editor_reply("```text\nabc\n```").text == "abc");
    CHECK(parse_editor_reply("GOOD_ENOUGH").verdict == Verdict::good_enough);
    CHECK(parse_editor_reply("I cannot help").verdict == Verdict::failed);
    CHECK(parse_editor_reply("```\na\n```\n```\nb\n```").verdict == Verdict::failed);
    CHECK(parse_editor_reply("```\n\n```").verdict == Verdict::failed);
}

TEST_CASE("oracle editor keeps the rejected phrasing") {
    OracleEditor ed(vocab(), "sort");
    const auto pair = make_pair("sort descending : 12 40 33", "40 33 12 ; first is 40",
                                "the answer is 33 40 12 and the first is 33");
    const BridgeOutcome o = bridge_pair(pair, ed, vocab());
    REQUIRE(o.verdict == Verdict::edited);
    CHECK(detokenize(o.bridged->chosen_bridged) == "the answer is 40 33 12 and the first is 40");
    CHECK(o.bridged->masks.chosen.count() == 3);
    CHECK(o.bridged->masks.rejected.count() == 3);
    CHECK(edit_distance(o.bridged->chosen_bridged, pair.rejected) <= edit_distance(pair.chosen, pair.rejected));
}

TEST_CASE("correct rejected responses are good enough") {
    OracleEditor ed(vocab(), "sort");
    const auto pair = make_pair("sort descending : 12 40 33", "40 33 12 ; first is 40",
                                "the answer is 40 33 12 and the first is 40");
    CHECK(bridge_pair(pair, ed, vocab()).verdict == Verdict::good_enough);
}

TEST_CASE("bridge_dataset preserves order and accounts for every pair") {
    SortTaskOptions o;
    o.n_pairs = 120;
    o.hi = 40;
    o.good_enough_frac = 0.2;
    const auto pairs = gen_sort_task(o, vocab());
    OracleEditor ed(vocab(), "sort");
    const BridgeResult serial = bridge_dataset(pairs, ed, vocab(), 1);
    const BridgeResult parallel = bridge_dataset(pairs, ed, vocab(), 4);
    CHECK(serial.bridged.size() + serial.filtered.size() == pairs.size());
    CHECK(serial.kept.size() == serial.bridged.size());
    REQUIRE(parallel.bridged.size() == serial.bridged.size());
    for (std::size_t i = 0; i < serial.bridged.size(); ++i) {
        CHECK(parallel.bridged[i].chosen_bridged == serial.bridged[i].chosen_bridged);
        CHECK(serial.kept[i].rejected == serial.bridged[i].rejected);
    }
    for (std::size_t i = 1; i < serial.filtered.size(); ++i) CHECK(serial.filtered[i - 1].index < serial.filtered[i].index);
    CHECK(serial.stats.n_distance_increased == 0);
    CHECK(serial.stats.mean_edit_distance_after <= serial.stats.mean_edit_distance_before);
}

TEST_CASE("llm editor sends the filled template and parses the reply") {
    std::string seen_body, seen_auth;
    MockServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        seen_auth = req.get_header_value("Authorization");
        res.set_content(completion("```\n40 33 12 ; first is 40\n```"), "application/json");
    });
    LlmEditor ed(llm_config(server.url()));
    const EditorResponse r = ed.edit({"sort descending : 12 40 33", "40 33 12 ; first is 40", "33 40 12 ; first is 33", {}});
    CHECK(r.verdict == Verdict::edited);
    CHECK(r.text == "40 33 12 ; first is 40");
    CHECK(seen_auth == "Bearer secret");
    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body.at("model") == "mock");
    CHECK(body.at("messages").at(0).at("content").get<std::string>().find("Bad: 33 40 12 ; first is 33") !=
          std::string::npos);
    CHECK(LlmEditor::last_attempts() == 1);
}

TEST_CASE("llm editor retries server errors then fails") {
    std::atomic<int> calls{0};
    MockServer server([&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 500;
    });
    LlmEditor ed(llm_config(server.url()));
    const EditorResponse r = ed.edit({"p", "w", "l", {}});
    CHECK(r.verdict == Verdict::failed);
    CHECK(calls == 3);
    CHECK(LlmEditor::last_attempts() == 3);
    CHECK(r.reason.find("HTTP 500") != std::string::npos);
}

TEST_CASE("llm editor recovers after a transient error") {
    std::atomic<int> calls{0};
    MockServer server([&](const httplib::Request&, httplib::Response& res) {
        if (++calls == 1) {
            res.status = 503;
            return;
        }
        res.set_content(completion("GOOD_ENOUGH"), "application/json");
    });
    LlmEditor ed(llm_config(server.url()));
    CHECK(ed.edit({"p", "w", "l", {}}).verdict == Verdict::good_enough);
    CHECK(calls == 2);
}

TEST_CASE("llm editor configuration errors") {
    LlmEditorConfig c = llm_config("http://127.0.0.1:9/v1/chat");
    c.api_key_env = "PREFBMC_TEST_KEY_UNSET";
    unsetenv("PREFBMC_TEST_KEY_UNSET");
    CHECK_THROWS_AS(LlmEditor{c}, ConfigError);
    c = llm_config("http://127.0.0.1:9/v1/chat");
    c.template_file = "/nonexistent/template.txt";
    CHECK_THROWS_AS(LlmEditor{c}, ConfigError);
    c = llm_config("");
    CHECK_THROWS_AS(LlmEditor{c}, ConfigError);
}

TEST_CASE("unreachable endpoint fails without throwing") {
    LlmEditorConfig c = llm_config("http://127.0.0.1:9/v1/chat");
    c.max_retries = 0;
    c.timeout = std::chrono::milliseconds(500);
    LlmEditor ed(c);
    const EditorResponse r = ed.edit({"p", "w", "l", {}});
    CHECK(r.verdict == Verdict::failed);
    CHECK(r.reason.find("transport error") != std::string::npos);
}
