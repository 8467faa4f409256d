#pragma once

// Bridging: rewrite the rejected response into a pseudo-preferred one that
// differs from it only where it was wrong, then compute diff masks.

#include "bmc/corpus.hpp"
#include "bmc/diff.hpp"

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bmc {

enum class Verdict { edited, good_enough, failed };
std::string_view verdict_name(Verdict v);

struct EditorRequest {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    std::map<std::string, std::string> meta;
};

struct EditorResponse {
    Verdict verdict = Verdict::failed;
    std::string text;    // rewritten response when verdict == edited
    std::string reason;  // diagnostic for failed
};

class Editor {
public:
    virtual ~Editor() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual std::string template_id() const = 0;
    /// Whether edit() may be called from several threads at once.
    [[nodiscard]] virtual bool concurrent() const { return false; }
    virtual EditorResponse edit(const EditorRequest& req) = 0;
};

/// Offline editor for the synthetic tasks. Rewrites the correct answer in the
/// phrasing of y_l (the phrasing closest to y_l in edit distance), so only the
/// corrupted tokens change. GOOD_ENOUGH when y_l already passes the task oracle.
class OracleEditor final : public Editor {
public:
    /// `task` is "sort" or "arith"; a pair's meta "task" overrides it.
    OracleEditor(const Vocabulary& vocab, std::string task);
    [[nodiscard]] std::string id() const override { return "oracle:" + task_; }
    [[nodiscard]] std::string template_id() const override { return "exact-solver"; }
    [[nodiscard]] bool concurrent() const override { return true; }
    EditorResponse edit(const EditorRequest& req) override;

private:
    const Vocabulary& vocab_;
    std::string task_;
};

struct LlmEditorConfig {
    std::string endpoint;  // full URL of a chat-completions endpoint
    std::string model;
    std::filesystem::path template_file;
    std::string api_key_env = "PREF_BMC_API_KEY";
    int max_retries = 2;
    std::chrono::milliseconds timeout{60000};
    std::chrono::milliseconds backoff{500};  // doubled after each failed attempt
    double temperature = 0.0;
};

/// Substitutes {x}, {y_w} and {y_l} in a single left-to-right pass, so text
/// inserted for one placeholder is never rescanned.
std::string fill_template(const std::string& tmpl, const std::string& x, const std::string& y_w, const std::string& y_l);

/// Reply contract: exactly one fenced block gives the rewritten response; no
/// block and the word GOOD_ENOUGH gives that verdict; anything else fails.
EditorResponse parse_editor_reply(const std::string& reply);

class LlmEditor final : public Editor {
public:
    /// Reads the template and the API key. Throws ConfigError when either is missing.
    explicit LlmEditor(LlmEditorConfig cfg);
    [[nodiscard]] std::string id() const override { return "llm:" + cfg_.model; }
    [[nodiscard]] std::string template_id() const override;
    [[nodiscard]] bool concurrent() const override { return true; }
    EditorResponse edit(const EditorRequest& req) override;

    /// Attempts made by the most recent edit() on this thread.
    [[nodiscard]] static int last_attempts();

private:
    LlmEditorConfig cfg_;
    std::string template_;
    std::string api_key_;
};

struct Provenance {
    std::string editor;
    std::string template_id;
};

struct BridgedPair {
    TokenSeq prompt;
    TokenSeq chosen_bridged;  // ỹ_w
    TokenSeq rejected;        // y_l
    DiffMasks masks;
    Provenance provenance;
    std::map<std::string, std::string> meta;
};

struct BridgeOutcome {
    Verdict verdict = Verdict::failed;
    std::optional<BridgedPair> bridged;
    std::string reason;
};

/// Runs the editor on one pair. Editor exceptions, empty output, and output
/// identical to y_l all become FAILED.
BridgeOutcome bridge_pair(const PreferencePair& pair, Editor& editor, const Vocabulary& vocab);

struct FilteredRecord {
    std::size_t index;
    Verdict verdict;
    std::string reason;
    PreferencePair pair;
};

struct BridgeStats {
    std::size_t n_input = 0;
    std::size_t n_bridged = 0;
    std::size_t n_good_enough = 0;
    std::size_t n_failed = 0;
    double mean_edit_distance_before = 0.0;  // ed(y_w, y_l) over bridged pairs
    double mean_edit_distance_after = 0.0;   // ed(ỹ_w, y_l) over bridged pairs
    std::size_t n_distance_increased = 0;
};

struct BridgeResult {
    std::vector<BridgedPair> bridged;
    /// The original pairs that were bridged, in the same order; baselines
    /// train on these so both arms see the same prompts.
    std::vector<PreferencePair> kept;
    std::vector<FilteredRecord> filtered;
    BridgeStats stats;
};

/// Bridges every pair. Up to `max_in_flight` requests run at once when the
/// editor allows it; results are always in input order.
BridgeResult bridge_dataset(const std::vector<PreferencePair>& pairs, Editor& editor, const Vocabulary& vocab,
                            std::size_t max_in_flight = 4);

}  // namespace bmc
