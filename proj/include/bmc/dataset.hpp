#pragma once

// JSONL readers and writers for pair datasets, and the training example type
// shared by the trainer and the analysis code.

#include "bmc/bridging.hpp"
#include "bmc/corpus.hpp"
#include "bmc/diff.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace bmc {

/// {"prompt", "chosen", "rejected", "meta"}; texts are space-joined tokens.
nlohmann::json pair_to_json(const PreferencePair& pair);
PreferencePair pair_from_json(const nlohmann::json& j, const Vocabulary& vocab);

/// {"prompt", "chosen_bridged", "rejected", "diff_chosen", "diff_rejected",
///  "provenance", "meta"}; diffs are lists of flagged token indices.
nlohmann::json bridged_to_json(const BridgedPair& pair);
BridgedPair bridged_from_json(const nlohmann::json& j, const Vocabulary& vocab);

nlohmann::json filtered_to_json(const FilteredRecord& rec);

/// One compact JSON object per line, '\n' terminated.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);
/// Throws DataError naming the line on malformed input.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

void save_pairs(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, const Vocabulary& vocab);
void save_bridged(const std::filesystem::path& path, const std::vector<BridgedPair>& pairs);
std::vector<BridgedPair> load_bridged(const std::filesystem::path& path, const Vocabulary& vocab);

/// A pair as the trainer sees it. Masks are present only for bridged data.
struct TrainExample {
    TokenSeq prompt;
    TokenSeq chosen;
    TokenSeq rejected;
    std::optional<DiffMasks> masks;
    std::size_t edit_distance = 0;  // ed(chosen, rejected) in tokens
    std::map<std::string, std::string> meta;
};

TrainExample to_example(const PreferencePair& pair);
TrainExample to_example(const BridgedPair& pair);
std::vector<TrainExample> to_examples(const std::vector<PreferencePair>& pairs);
std::vector<TrainExample> to_examples(const std::vector<BridgedPair>& pairs);

/// Loads either record kind, detected from the keys of the first record.
std::vector<TrainExample> load_examples(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace bmc
