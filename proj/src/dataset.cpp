#include "bmc/dataset.hpp"

#include "bmc/error.hpp"

#include <fstream>

namespace bmc {

using nlohmann::json;

namespace {

std::string text_field(const json& j, const char* key) {
    if (!j.contains(key)) throw DataError(std::string("record is missing field '") + key + "'");
    if (!j.at(key).is_string()) throw DataError(std::string("field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
}

std::map<std::string, std::string> meta_field(const json& j) {
    std::map<std::string, std::string> meta;
    if (!j.contains("meta")) return meta;
    if (!j.at("meta").is_object()) throw DataError("field 'meta' must be an object");
    for (const auto& [k, v] : j.at("meta").items()) {
        if (!v.is_string()) throw DataError("meta value for '" + k + "' must be a string");
        meta[k] = v.get<std::string>();
    }
    return meta;
}

DiffMask mask_field(const json& j, const char* key, std::size_t length) {
    if (!j.contains(key)) throw DataError(std::string("record is missing field '") + key + "'");
    std::vector<int> idx;
    try {
        idx = j.at(key).get<std::vector<int>>();
    } catch (const json::exception&) {
        throw DataError(std::string("field '") + key + "' must be a list of token indices");
    }
    return DiffMask::from_indices(length, idx);
}

}  // namespace

json pair_to_json(const PreferencePair& pair) {
    return {{"prompt", detokenize(pair.prompt)},
            {"chosen", detokenize(pair.chosen)},
            {"rejected", detokenize(pair.rejected)},
            {"meta", pair.meta}};
}

PreferencePair pair_from_json(const json& j, const Vocabulary& vocab) {
    if (!j.is_object()) throw DataError("pair record must be a JSON object");
    PreferencePair p;
    p.prompt = tokenize(text_field(j, "prompt"), vocab);
    p.chosen = tokenize(text_field(j, "chosen"), vocab);
    p.rejected = tokenize(text_field(j, "rejected"), vocab);
    p.meta = meta_field(j);
    validate(p);
    return p;
}

json bridged_to_json(const BridgedPair& pair) {
    return {{"prompt", detokenize(pair.prompt)},
            {"chosen_bridged", detokenize(pair.chosen_bridged)},
            {"rejected", detokenize(pair.rejected)},
            {"diff_chosen", pair.masks.chosen.indices()},
            {"diff_rejected", pair.masks.rejected.indices()},
            {"provenance", {{"editor", pair.provenance.editor}, {"template", pair.provenance.template_id}}},
            {"meta", pair.meta}};
}

BridgedPair bridged_from_json(const json& j, const Vocabulary& vocab) {
    if (!j.is_object()) throw DataError("bridged record must be a JSON object");
    BridgedPair b;
    b.prompt = tokenize(text_field(j, "prompt"), vocab);
    b.chosen_bridged = tokenize(text_field(j, "chosen_bridged"), vocab);
    b.rejected = tokenize(text_field(j, "rejected"), vocab);
    if (b.prompt.empty() || b.chosen_bridged.empty() || b.rejected.empty()) throw DataError("bridged record has an empty sequence");
    b.masks.chosen = mask_field(j, "diff_chosen", b.chosen_bridged.size());
    b.masks.rejected = mask_field(j, "diff_rejected", b.rejected.size());
    if (j.contains("provenance")) {
        const auto& p = j.at("provenance");
        b.provenance.editor = p.value("editor", "");
        b.provenance.template_id = p.value("template", "");
    }
    b.meta = meta_field(j);
    return b;
}

json filtered_to_json(const FilteredRecord& rec) {
    json j = pair_to_json(rec.pair);
    j["index"] = rec.index;
    j["verdict"] = std::string(verdict_name(rec.verdict));
    j["reason"] = rec.reason;
    return j;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (const auto& r : records) out << r.dump() << '\n';
    if (!out) throw ConfigError("write failed: " + path.string());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_pairs(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs) {
    std::vector<json> recs;
    recs.reserve(pairs.size());
    for (const auto& p : pairs) recs.push_back(pair_to_json(p));
    write_jsonl(path, recs);
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::vector<PreferencePair> out;
    std::size_t i = 0;
    for (const auto& j : read_jsonl(path)) {
        ++i;
        try {
            out.push_back(pair_from_json(j, vocab));
        } catch (const DataError& e) {
            throw DataError(path.string() + " record " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

void save_bridged(const std::filesystem::path& path, const std::vector<BridgedPair>& pairs) {
    std::vector<json> recs;
    recs.reserve(pairs.size());
    for (const auto& p : pairs) recs.push_back(bridged_to_json(p));
    write_jsonl(path, recs);
}

std::vector<BridgedPair> load_bridged(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::vector<BridgedPair> out;
    std::size_t i = 0;
    for (const auto& j : read_jsonl(path)) {
        ++i;
        try {
            out.push_back(bridged_from_json(j, vocab));
        } catch (const DataError& e) {
            throw DataError(path.string() + " record " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

TrainExample to_example(const PreferencePair& pair) {
    return {pair.prompt, pair.chosen, pair.rejected, std::nullopt, edit_distance(pair.chosen, pair.rejected), pair.meta};
}

TrainExample to_example(const BridgedPair& pair) {
    return {pair.prompt, pair.chosen_bridged, pair.rejected, pair.masks, edit_distance(pair.chosen_bridged, pair.rejected), pair.meta};
}

std::vector<TrainExample> to_examples(const std::vector<PreferencePair>& pairs) {
    std::vector<TrainExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(to_example(p));
    return out;
}

std::vector<TrainExample> to_examples(const std::vector<BridgedPair>& pairs) {
    std::vector<TrainExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(to_example(p));
    return out;
}

std::vector<TrainExample> load_examples(const std::filesystem::path& path, const Vocabulary& vocab) {
    const auto recs = read_jsonl(path);
    std::vector<TrainExample> out;
    if (recs.empty()) return out;
    const bool bridged = recs.front().contains("chosen_bridged");
    for (std::size_t i = 0; i < recs.size(); ++i) {
        try {
            out.push_back(bridged ? to_example(bridged_from_json(recs[i], vocab)) : to_example(pair_from_json(recs[i], vocab)));
        } catch (const DataError& e) {
            throw DataError(path.string() + " record " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace bmc
