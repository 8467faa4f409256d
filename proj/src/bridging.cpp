#include "bmc/bridging.hpp"

#include "bmc/error.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <thread>

namespace bmc {

std::string_view verdict_name(Verdict v) {
    switch (v) {
        case Verdict::edited: return "EDITED";
        case Verdict::good_enough: return "GOOD_ENOUGH";
        case Verdict::failed: return "FAILED";
    }
    return "?";
}

// ---- oracle editor --------------------------------------------------------

OracleEditor::OracleEditor(const Vocabulary& vocab, std::string task) : vocab_(vocab), task_(std::move(task)) {
    if (task_ != "sort" && task_ != "arith") throw ConfigError("oracle editor: unknown task '" + task_ + "'");
}

EditorResponse OracleEditor::edit(const EditorRequest& req) {
    auto it = req.meta.find("task");
    const std::string task = it == req.meta.end() ? task_ : it->second;
    if (task != "sort" && task != "arith") throw ConfigError("oracle editor: unknown task '" + task + "'");
    const TokenSeq prompt = tokenize(req.prompt, vocab_);
    const TokenSeq rejected = tokenize(req.rejected, vocab_);
    if (passes_oracle(task, prompt, rejected)) return {Verdict::good_enough, {}, {}};

    const int n_templates = task == "sort" ? kSortTemplates : kArithTemplates;
    std::string best;
    std::size_t best_d = std::numeric_limits<std::size_t>::max();
    for (int t = 0; t < n_templates; ++t) {
        std::string cand = solve(task, prompt, t);
        const std::size_t d = edit_distance(tokenize(cand, vocab_), rejected);
        if (d < best_d) {
            best_d = d;
            best = std::move(cand);
        }
    }
    return {Verdict::edited, best, {}};
}

// ---- LLM editor -----------------------------------------------------------

std::string fill_template(const std::string& tmpl, const std::string& x, const std::string& y_w, const std::string& y_l) {
    std::string out;
    out.reserve(tmpl.size() + x.size() + y_w.size() + y_l.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl.compare(i, 3, "{x}") == 0) {
            out += x;
            i += 3;
        } else if (tmpl.compare(i, 5, "{y_w}") == 0) {
            out += y_w;
            i += 5;
        } else if (tmpl.compare(i, 5, "{y_l}") == 0) {
            out += y_l;
            i += 5;
        } else {
            out += tmpl[i++];
        }
    }
    return out;
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

thread_local int g_last_attempts = 0;

}  // namespace

EditorResponse parse_editor_reply(const std::string& reply) {
    std::vector<std::string> blocks;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t open = reply.find("```", pos);
        if (open == std::string::npos) break;
        std::size_t body = reply.find('\n', open + 3);
        const std::size_t close = reply.find("```", open + 3);
        if (close == std::string::npos) return {Verdict::failed, {}, "unterminated fenced block"};
        // The rest of the opening line is an info string; a block on one line has none.
        if (body == std::string::npos || body > close) body = open + 2;
        blocks.push_back(trim(reply.substr(body + 1, close - body - 1)));
        pos = close + 3;
    }
    if (blocks.size() == 1) {
        if (blocks[0].empty()) return {Verdict::failed, {}, "empty fenced block"};
        return {Verdict::edited, blocks[0], {}};
    }
    if (blocks.empty()) {
        if (reply.find("GOOD_ENOUGH") != std::string::npos) return {Verdict::good_enough, {}, {}};
        return {Verdict::failed, {}, "no fenced block in reply"};
    }
    return {Verdict::failed, {}, "expected one fenced block, found " + std::to_string(blocks.size())};
}

LlmEditor::LlmEditor(LlmEditorConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty()) throw ConfigError("llm editor: endpoint is required");
    if (cfg_.max_retries < 0) throw ConfigError("llm editor: max_retries must be non-negative");
    std::ifstream in(cfg_.template_file, std::ios::binary);
    if (!in) throw ConfigError("llm editor: cannot read template file " + cfg_.template_file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    template_ = ss.str();
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') throw ConfigError("llm editor: environment variable " + cfg_.api_key_env + " is not set");
    api_key_ = key;
}

std::string LlmEditor::template_id() const { return cfg_.template_file.filename().string(); }

int LlmEditor::last_attempts() { return g_last_attempts; }

EditorResponse LlmEditor::edit(const EditorRequest& req) {
    const std::size_t scheme = cfg_.endpoint.find("://");
    const std::size_t path_at = cfg_.endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    const std::string base = path_at == std::string::npos ? cfg_.endpoint : cfg_.endpoint.substr(0, path_at);
    const std::string path = path_at == std::string::npos ? "/" : cfg_.endpoint.substr(path_at);

    const nlohmann::json body = {
        {"model", cfg_.model},
        {"temperature", cfg_.temperature},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", fill_template(template_, req.prompt, req.chosen, req.rejected)}}})},
    };
    const std::string payload = body.dump();

    httplib::Client client(base);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    client.set_bearer_token_auth(api_key_);

    std::string last_error;
    auto delay = cfg_.backoff;
    g_last_attempts = 0;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        ++g_last_attempts;
        auto res = client.Post(path, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        std::string content;
        try {
            const auto j = nlohmann::json::parse(res->body);
            content = j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception& e) {
            return {Verdict::failed, {}, std::string("malformed response body: ") + e.what()};
        }
        return parse_editor_reply(content);
    }
    return {Verdict::failed, {}, last_error + " after " + std::to_string(g_last_attempts) + " attempts"};
}

// ---- dataset bridging -------------------------------------------------------

BridgeOutcome bridge_pair(const PreferencePair& pair, Editor& editor, const Vocabulary& vocab) {
    EditorRequest req{detokenize(pair.prompt), detokenize(pair.chosen), detokenize(pair.rejected), pair.meta};
    EditorResponse resp;
    try {
        resp = editor.edit(req);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        return {Verdict::failed, std::nullopt, std::string("editor error: ") + e.what()};
    }
    if (resp.verdict != Verdict::edited) return {resp.verdict, std::nullopt, resp.reason};
    const TokenSeq edited = tokenize(resp.text, vocab);
    if (edited.empty()) return {Verdict::failed, std::nullopt, "editor returned empty text"};
    if (edited == pair.rejected) return {Verdict::failed, std::nullopt, "editor returned the rejected response unchanged"};

    BridgedPair b;
    b.prompt = pair.prompt;
    b.chosen_bridged = edited;
    b.rejected = pair.rejected;
    b.masks = diff_masks(b.chosen_bridged, b.rejected, vocab.stopword_ids());
    b.provenance = {editor.id(), editor.template_id()};
    b.meta = pair.meta;
    return {Verdict::edited, std::move(b), {}};
}

BridgeResult bridge_dataset(const std::vector<PreferencePair>& pairs, Editor& editor, const Vocabulary& vocab,
                            std::size_t max_in_flight) {
    if (max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
    std::vector<BridgeOutcome> outcomes(pairs.size());
    if (editor.concurrent() && max_in_flight > 1) {
        for (std::size_t start = 0; start < pairs.size(); start += max_in_flight) {
            const std::size_t end = std::min(pairs.size(), start + max_in_flight);
            std::vector<std::future<BridgeOutcome>> inflight;
            for (std::size_t i = start; i < end; ++i)
                inflight.push_back(std::async(std::launch::async, [&, i] { return bridge_pair(pairs[i], editor, vocab); }));
            for (std::size_t i = start; i < end; ++i) outcomes[i] = inflight[i - start].get();
        }
    } else {
        for (std::size_t i = 0; i < pairs.size(); ++i) outcomes[i] = bridge_pair(pairs[i], editor, vocab);
    }

    BridgeResult r;
    r.stats.n_input = pairs.size();
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto& o = outcomes[i];
        if (o.verdict == Verdict::edited) {
            const std::size_t d0 = edit_distance(pairs[i].chosen, pairs[i].rejected);
            const std::size_t d1 = edit_distance(o.bridged->chosen_bridged, o.bridged->rejected);
            before += static_cast<double>(d0);
            after += static_cast<double>(d1);
            if (d1 > d0) ++r.stats.n_distance_increased;
            r.bridged.push_back(std::move(*o.bridged));
            r.kept.push_back(pairs[i]);
        } else {
            (o.verdict == Verdict::good_enough ? r.stats.n_good_enough : r.stats.n_failed) += 1;
            r.filtered.push_back({i, o.verdict, o.reason, pairs[i]});
        }
    }
    r.stats.n_bridged = r.bridged.size();
    if (!r.bridged.empty()) {
        r.stats.mean_edit_distance_before = before / static_cast<double>(r.bridged.size());
        r.stats.mean_edit_distance_after = after / static_cast<double>(r.bridged.size());
    }
    return r;
}

}  // namespace bmc
