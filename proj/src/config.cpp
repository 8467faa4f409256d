#include "bmc/config.hpp"

#include "bmc/error.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>

namespace bmc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(section + " section must be an object");
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items())
        if (!known.contains(k)) throw ConfigError("unknown " + section + " key '" + k + "'");
}

template <class T>
void read(const json& j, const std::string& section, const char* key, T& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw ConfigError(section + "." + key + " must be a non-negative integer");
    } else if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw ConfigError(section + "." + key + " must be an integer");
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(section + "." + key + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(section + "." + key + " must be a string");
    }
    out = v.get<T>();
}

void read_path(const json& j, const std::string& section, const char* key, const fs::path& base,
               std::optional<fs::path>& out) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    if (!j.at(key).is_string()) throw ConfigError(section + "." + key + " must be a path string");
    const fs::path p = j.at(key).get<std::string>();
    out = p.is_absolute() ? p : base / p;
}

json opt_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

void require_file(const std::optional<fs::path>& p, const std::string& what) {
    if (p && !fs::is_regular_file(*p)) throw ConfigError(what + " not found: " + p->string());
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

void RunConfig::validate() const {
    if (corpus.task != "sort" && corpus.task != "arith")
        throw ConfigError("corpus.task must be 'sort' or 'arith', got '" + corpus.task + "'");
    if (corpus.n_pairs == 0) throw ConfigError("corpus.n_pairs must be positive");
    if (corpus.n_heldout == 0) throw ConfigError("corpus.n_heldout must be positive");
    if (!(corpus.good_enough_frac >= 0.0 && corpus.good_enough_frac <= 1.0))
        throw ConfigError("corpus.good_enough_frac must lie in [0, 1]");
    if (!(corpus.swap_frac >= 0.0 && corpus.swap_frac <= 1.0)) throw ConfigError("corpus.swap_frac must lie in [0, 1]");
    if (corpus.max_corruptions < 1) throw ConfigError("corpus.max_corruptions must be at least 1");
    if (corpus.n_items < 2) throw ConfigError("corpus.n_items must be at least 2");
    if (corpus.lo < 0 || corpus.lo >= corpus.hi) throw ConfigError("corpus range must satisfy 0 <= lo < hi");
    if (corpus.hi > corpus.max_number) throw ConfigError("corpus.hi exceeds corpus.max_number");
    require_file(corpus.stopwords_file, "corpus.stopwords_file");

    if (bridging.editor != "oracle" && bridging.editor != "llm")
        throw ConfigError("bridging.editor must be 'oracle' or 'llm', got '" + bridging.editor + "'");
    if (bridging.max_retries < 0) throw ConfigError("bridging.max_retries must be non-negative");
    if (!(bridging.timeout_s > 0.0)) throw ConfigError("bridging.timeout_s must be positive");
    if (bridging.max_in_flight == 0) throw ConfigError("bridging.max_in_flight must be at least 1");
    require_file(bridging.template_file, "bridging.template_file");
    if (bridging.editor == "llm") {
        if (bridging.endpoint.empty()) throw ConfigError("bridging.endpoint is required for the llm editor");
        if (bridging.model.empty()) throw ConfigError("bridging.model is required for the llm editor");
        if (!bridging.template_file) throw ConfigError("bridging.template_file is required for the llm editor");
    }

    if (sft.d_model == 0 || sft.n_heads == 0 || sft.d_model % sft.n_heads != 0)
        throw ConfigError("sft.d_model must be a positive multiple of sft.n_heads");
    if (sft.n_layers == 0 || sft.max_seq_len < 2) throw ConfigError("sft model dimensions are too small");
    if (!(sft.lr >= 0.0) || !std::isfinite(sft.lr)) throw ConfigError("sft.lr must be a finite non-negative number");
    if (sft.batch_size == 0) throw ConfigError("sft.batch_size must be at least 1");
    if (!(sft.warmup_frac >= 0.0 && sft.warmup_frac < 0.5)) throw ConfigError("sft.warmup_frac must lie in [0, 0.5)");

    train.validate();
    if (analysis.n_buckets == 0) throw ConfigError("analysis.n_buckets must be at least 1");
    require_file(io.train_data, "io.train_data");
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
    check_keys(j, "config", {"seed", "corpus", "bridging", "sft", "train", "analysis", "io"});
    RunConfig c;
    try {
        read(j, "config", "seed", c.seed);
        if (j.contains("corpus")) {
            const json& s = j.at("corpus");
            const std::string n = "corpus";
            check_keys(s, n, {"task", "n_pairs", "n_heldout", "n_items", "lo", "hi", "good_enough_frac",
                              "max_corruptions", "swap_frac", "max_number", "stopwords_file"});
            read(s, n, "task", c.corpus.task);
            read(s, n, "n_pairs", c.corpus.n_pairs);
            read(s, n, "n_heldout", c.corpus.n_heldout);
            read(s, n, "n_items", c.corpus.n_items);
            read(s, n, "lo", c.corpus.lo);
            read(s, n, "hi", c.corpus.hi);
            read(s, n, "good_enough_frac", c.corpus.good_enough_frac);
            read(s, n, "max_corruptions", c.corpus.max_corruptions);
            read(s, n, "swap_frac", c.corpus.swap_frac);
            read(s, n, "max_number", c.corpus.max_number);
            read_path(s, n, "stopwords_file", base_dir, c.corpus.stopwords_file);
        }
        if (j.contains("bridging")) {
            const json& s = j.at("bridging");
            const std::string n = "bridging";
            check_keys(s, n, {"editor", "template_file", "endpoint", "model", "api_key_env", "max_retries", "timeout_s",
                              "max_in_flight"});
            read(s, n, "editor", c.bridging.editor);
            read_path(s, n, "template_file", base_dir, c.bridging.template_file);
            read(s, n, "endpoint", c.bridging.endpoint);
            read(s, n, "model", c.bridging.model);
            read(s, n, "api_key_env", c.bridging.api_key_env);
            read(s, n, "max_retries", c.bridging.max_retries);
            read(s, n, "timeout_s", c.bridging.timeout_s);
            read(s, n, "max_in_flight", c.bridging.max_in_flight);
        }
        if (j.contains("sft")) {
            const json& s = j.at("sft");
            const std::string n = "sft";
            check_keys(s, n, {"d_model", "n_layers", "n_heads", "max_seq_len", "epochs", "lr", "batch_size",
                              "warmup_frac"});
            read(s, n, "d_model", c.sft.d_model);
            read(s, n, "n_layers", c.sft.n_layers);
            read(s, n, "n_heads", c.sft.n_heads);
            read(s, n, "max_seq_len", c.sft.max_seq_len);
            read(s, n, "epochs", c.sft.epochs);
            read(s, n, "lr", c.sft.lr);
            read(s, n, "batch_size", c.sft.batch_size);
            read(s, n, "warmup_frac", c.sft.warmup_frac);
        }
        if (j.contains("train")) {
            if (j.at("train").is_object() && j.at("train").contains("seed"))
                throw ConfigError("train.seed is derived from the root seed; set 'seed' instead");
            c.train = train_config_from_json(j.at("train"));
        }
        if (j.contains("analysis")) {
            const json& s = j.at("analysis");
            check_keys(s, "analysis", {"n_buckets", "n_token_traces"});
            read(s, "analysis", "n_buckets", c.analysis.n_buckets);
            read(s, "analysis", "n_token_traces", c.analysis.n_token_traces);
        }
        if (j.contains("io")) {
            const json& s = j.at("io");
            check_keys(s, "io", {"out", "train_data"});
            std::optional<fs::path> out;
            read_path(s, "io", "out", base_dir, out);
            if (out) c.io.out = *out;
            read_path(s, "io", "train_data", base_dir, c.io.train_data);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    c.train.seed = derive_seed(c.seed, "train");
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    json train = to_json(c.train);
    train.erase("seed");
    return {{"seed", c.seed},
            {"corpus",
             {{"task", c.corpus.task},
              {"n_pairs", c.corpus.n_pairs},
              {"n_heldout", c.corpus.n_heldout},
              {"n_items", c.corpus.n_items},
              {"lo", c.corpus.lo},
              {"hi", c.corpus.hi},
              {"good_enough_frac", c.corpus.good_enough_frac},
              {"max_corruptions", c.corpus.max_corruptions},
              {"swap_frac", c.corpus.swap_frac},
              {"max_number", c.corpus.max_number},
              {"stopwords_file", opt_path(c.corpus.stopwords_file)}}},
            {"bridging",
             {{"editor", c.bridging.editor},
              {"template_file", opt_path(c.bridging.template_file)},
              {"endpoint", c.bridging.endpoint},
              {"model", c.bridging.model},
              {"api_key_env", c.bridging.api_key_env},
              {"max_retries", c.bridging.max_retries},
              {"timeout_s", c.bridging.timeout_s},
              {"max_in_flight", c.bridging.max_in_flight}}},
            {"sft",
             {{"d_model", c.sft.d_model},
              {"n_layers", c.sft.n_layers},
              {"n_heads", c.sft.n_heads},
              {"max_seq_len", c.sft.max_seq_len},
              {"epochs", c.sft.epochs},
              {"lr", c.sft.lr},
              {"batch_size", c.sft.batch_size},
              {"warmup_frac", c.sft.warmup_frac}}},
            {"train", train},
            {"analysis", {{"n_buckets", c.analysis.n_buckets}, {"n_token_traces", c.analysis.n_token_traces}}},
            {"io", {{"out", c.io.out.string()}, {"train_data", opt_path(c.io.train_data)}}}};
}

void apply_override(json& j, std::string_view dotted, std::string_view value) {
    if (dotted.empty()) throw ConfigError("empty override key");
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', start);
        const std::string key(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
        if (key.empty()) throw ConfigError("malformed override key '" + std::string(dotted) + "'");
        if (!node->is_object()) throw ConfigError("override '" + std::string(dotted) + "' descends into a non-object");
        if (dot == std::string_view::npos) {
            json parsed = json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? json(std::string(value)) : parsed;
            return;
        }
        if (!node->contains(key)) (*node)[key] = json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::optional<fs::path>& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    json j = json::object();
    fs::path base = ".";
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot read config " + path->string());
        j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ConfigError("config " + path->string() + " is not valid JSON");
        base = path->parent_path().empty() ? fs::path(".") : path->parent_path();
    }
    for (const auto& [k, v] : overrides) apply_override(j, k, v);
    return run_config_from_json(j, base);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : purpose) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return splitmix(root ^ splitmix(h));
}

std::set<std::string> stopwords_for(const RunConfig& cfg) {
    return cfg.corpus.stopwords_file ? load_stopwords(*cfg.corpus.stopwords_file) : default_stopwords();
}

Vocabulary vocab_for(const RunConfig& cfg) { return Vocabulary::for_tasks(cfg.corpus.max_number, stopwords_for(cfg)); }

ModelConfig model_config_for(const RunConfig& cfg, std::size_t vocab_size) {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.d_model = cfg.sft.d_model;
    m.n_layers = cfg.sft.n_layers;
    m.n_heads = cfg.sft.n_heads;
    m.max_seq_len = cfg.sft.max_seq_len;
    m.seed = derive_seed(cfg.seed, "init");
    return m;
}

SftConfig sft_config_for(const RunConfig& cfg) {
    SftConfig s;
    s.epochs = cfg.sft.epochs;
    s.lr = cfg.sft.lr;
    s.batch_size = cfg.sft.batch_size;
    s.warmup_frac = cfg.sft.warmup_frac;
    s.seed = derive_seed(cfg.seed, "sft");
    return s;
}

TrainConfig train_config_for(const RunConfig& cfg) {
    TrainConfig t = cfg.train;
    t.seed = derive_seed(cfg.seed, "train");
    return t;
}

LlmEditorConfig llm_config_for(const RunConfig& cfg) {
    LlmEditorConfig l;
    l.endpoint = cfg.bridging.endpoint;
    l.model = cfg.bridging.model;
    if (cfg.bridging.template_file) l.template_file = *cfg.bridging.template_file;
    l.api_key_env = cfg.bridging.api_key_env;
    l.max_retries = cfg.bridging.max_retries;
    l.timeout = std::chrono::milliseconds(static_cast<long long>(cfg.bridging.timeout_s * 1000.0));
    return l;
}

std::vector<PreferencePair> generate_pairs(const RunConfig& cfg, const Vocabulary& vocab, bool training) {
    const std::uint64_t seed = derive_seed(cfg.seed, training ? "corpus" : "heldout");
    const std::size_t n = training ? cfg.corpus.n_pairs : cfg.corpus.n_heldout;
    if (cfg.corpus.task == "arith") {
        ArithTaskOptions o;
        o.seed = seed;
        o.n_pairs = n;
        o.good_enough_frac = cfg.corpus.good_enough_frac;
        return gen_arith_task(o, vocab);
    }
    SortTaskOptions o;
    o.n_items = cfg.corpus.n_items;
    o.lo = cfg.corpus.lo;
    o.hi = cfg.corpus.hi;
    o.seed = seed;
    o.n_pairs = n;
    o.good_enough_frac = cfg.corpus.good_enough_frac;
    o.max_corruptions = cfg.corpus.max_corruptions;
    o.swap_frac = cfg.corpus.swap_frac;
    return gen_sort_task(o, vocab);
}

}  // namespace bmc
