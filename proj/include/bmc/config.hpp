#pragma once

// Run configuration shared by every subcommand: one JSON file with sections
// corpus, bridging, sft, train, analysis and io, plus a root seed from which
// every other seed is derived.

#include "bmc/bridging.hpp"
#include "bmc/corpus.hpp"
#include "bmc/model.hpp"
#include "bmc/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace bmc {

struct CorpusConfig {
    std::string task = "sort";  // sort | arith
    std::size_t n_pairs = 3000;
    std::size_t n_heldout = 500;
    int n_items = 5;
    int lo = 10;
    int hi = 40;
    double good_enough_frac = 0.1;
    int max_corruptions = 3;
    double swap_frac = 0.5;
    int max_number = 208;
    std::optional<std::filesystem::path> stopwords_file;
};

struct BridgingConfig {
    std::string editor = "oracle";  // oracle | llm
    std::optional<std::filesystem::path> template_file;
    std::string endpoint;
    std::string model;
    std::string api_key_env = "PREF_BMC_API_KEY";
    int max_retries = 2;
    double timeout_s = 60.0;
    std::size_t max_in_flight = 4;
};

struct SftSection {
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t max_seq_len = 48;
    std::size_t epochs = 6;
    double lr = 3e-3;
    std::size_t batch_size = 32;
    double warmup_frac = 0.1;
};

struct AnalysisConfig {
    std::size_t n_buckets = 6;
    std::size_t n_token_traces = 8;
};

struct IoConfig {
    std::filesystem::path out = "run";
    /// Training input; defaults to the bridged or kept pairs under `out`.
    std::optional<std::filesystem::path> train_data;
};

struct RunConfig {
    std::uint64_t seed = 0;
    CorpusConfig corpus;
    BridgingConfig bridging;
    SftSection sft;
    TrainConfig train;
    AnalysisConfig analysis;
    IoConfig io;

    /// Throws ConfigError. Checks ranges, the loss combination and that every
    /// input file named in the config exists.
    void validate() const;
};

/// Relative paths are resolved against `base_dir`. Unknown keys are rejected.
/// train.seed is not accepted: training and SFT seeds derive from `seed`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
nlohmann::json to_json(const RunConfig& cfg);

/// Sets `dotted` (e.g. "train.loss.beta") in `j`, creating objects as needed.
/// The value is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, std::string_view dotted, std::string_view value);

/// Reads `path` (or starts from defaults when empty), applies overrides in
/// order, then parses and validates.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Independent stream seed for one purpose, derived from the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose);

std::set<std::string> stopwords_for(const RunConfig& cfg);
Vocabulary vocab_for(const RunConfig& cfg);
ModelConfig model_config_for(const RunConfig& cfg, std::size_t vocab_size);
SftConfig sft_config_for(const RunConfig& cfg);
/// Training section with its seed derived from the root seed.
TrainConfig train_config_for(const RunConfig& cfg);
LlmEditorConfig llm_config_for(const RunConfig& cfg);

/// Training pairs (training == true) or held-out pairs, per the corpus section.
std::vector<PreferencePair> generate_pairs(const RunConfig& cfg, const Vocabulary& vocab, bool training);

}  // namespace bmc
