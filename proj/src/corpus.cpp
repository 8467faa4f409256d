#include "bmc/corpus.hpp"

#include "bmc/error.hpp"
#include "bmc/rng.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

namespace bmc {

namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};

// Words used by the synthetic prompts and response phrasings.
const std::vector<std::string> kTaskWords = {
    "sort", "descending", ":", ";", ".", ",", "+", "-", "=", "first", "is", "number",
    "sorted", "the", "answer", "and", "so",
};

bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }
bool is_space(unsigned char c) { return c < 128 && std::isspace(c) != 0; }

bool is_numeral(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

std::string join(const std::vector<int>& v, const char* sep) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? sep : "") << v[i];
    return os.str();
}

std::vector<int> numerals(const TokenSeq& seq) {
    std::vector<int> out;
    for (const auto& s : seq.surfaces)
        if (is_numeral(s)) out.push_back(std::stoi(s));
    return out;
}

std::vector<int> parse_sort_prompt(const TokenSeq& prompt) {
    std::vector<int> items = numerals(prompt);
    if (items.size() < 2) throw DataError("sort prompt has fewer than two items");
    return items;
}

struct ArithProblem {
    int a = 0;
    char op = '+';
    int b = 0;
};

ArithProblem parse_arith_prompt(const TokenSeq& prompt) {
    if (prompt.size() != 4 || !is_numeral(prompt.surfaces[0]) || !is_numeral(prompt.surfaces[2]) ||
        (prompt.surfaces[1] != "+" && prompt.surfaces[1] != "-") || prompt.surfaces[3] != "=")
        throw DataError("arith prompt must look like 'a + b =', got '" + detokenize(prompt) + "'");
    return {std::stoi(prompt.surfaces[0]), prompt.surfaces[1][0], std::stoi(prompt.surfaces[2])};
}

int apply(int x, char op, int y) { return op == '+' ? x + y : x - y; }

// Token positions where two equally long sequences differ.
std::string diff_positions(const TokenSeq& a, const TokenSeq& b) {
    if (a.size() != b.size()) throw std::logic_error("renderings differ in length");
    std::vector<int> pos;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.ids[i] != b.ids[i]) pos.push_back(static_cast<int>(i));
    return join(pos, ",");
}

int pick_other_template(Rng& rng, int n_templates, int avoid) {
    int t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_templates - 1)));
    return t >= avoid ? t + 1 : t;
}

}  // namespace

// ---- Vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary(const std::vector<std::string>& tokens, const std::set<std::string>& stopwords) {
    tokens_ = kSpecials;
    tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
    index(stopwords);
}

Vocabulary Vocabulary::from_full_list(const std::vector<std::string>& all_tokens,
                                      const std::set<std::string>& stopwords) {
    if (all_tokens.size() < kSpecials.size() ||
        !std::equal(kSpecials.begin(), kSpecials.end(), all_tokens.begin()))
        throw DataError("vocabulary must start with the reserved special tokens");
    Vocabulary v;
    v.tokens_ = all_tokens;
    v.index(stopwords);
    return v;
}

void Vocabulary::index(const std::set<std::string>& stopwords) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw ConfigError("empty token in vocabulary");
        if (!id_of_.emplace(tokens_[i], static_cast<int>(i)).second)
            throw ConfigError("duplicate token in vocabulary: " + tokens_[i]);
    }
    for (const auto& w : stopwords) {
        auto it = id_of_.find(w);
        if (it != id_of_.end() && it->second >= static_cast<int>(kSpecials.size()))
            stopword_ids_.insert(it->second);
    }
}

Vocabulary Vocabulary::for_tasks(int max_number, const std::set<std::string>& stopwords) {
    if (max_number < 0) throw ConfigError("max_number must be non-negative");
    std::vector<std::string> toks = kTaskWords;
    for (int i = 0; i <= max_number; ++i) toks.push_back(std::to_string(i));
    return Vocabulary(toks, stopwords);
}

int Vocabulary::id_of(std::string_view token) const {
    auto it = id_of_.find(std::string(token));
    return it == id_of_.end() ? kUnk : it->second;
}

std::set<std::string> Vocabulary::stopwords() const {
    std::set<std::string> out;
    for (int id : stopword_ids_) out.insert(token(id));
    return out;
}

// ---- tokenization ---------------------------------------------------------

std::vector<std::string> split_tokens(std::string_view text, TokenizerMode mode) {
    std::vector<std::string> out;
    if (mode == TokenizerMode::character) {
        for (std::size_t i = 0; i < text.size();) {
            const auto c = static_cast<unsigned char>(text[i]);
            std::size_t len = 1;
            if (c >= 0xF0) len = 4;
            else if (c >= 0xE0) len = 3;
            else if (c >= 0xC0) len = 2;
            len = std::min(len, text.size() - i);
            if (!is_space(c)) out.emplace_back(text.substr(i, len));
            i += len;
        }
        return out;
    }
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_space(c) || is_punct(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
            if (is_punct(c)) out.emplace_back(1, ch);
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab, TokenizerMode mode) {
    TokenSeq seq;
    seq.surfaces = split_tokens(text, mode);
    seq.ids.reserve(seq.surfaces.size());
    for (const auto& s : seq.surfaces) seq.ids.push_back(vocab.id_of(s));
    return seq;
}

std::string detokenize(const TokenSeq& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.surfaces.size(); ++i) {
        if (i) out.push_back(' ');
        out += seq.surfaces[i];
    }
    return out;
}

// ---- stopwords ------------------------------------------------------------

std::set<std::string> default_stopwords() {
    return {
        "a",    "an",      "the",    "and",   "or",   "but",   "nor",   "so",    "yet",
        "of",   "in",      "on",     "at",    "to",   "for",   "with",  "by",    "from",
        "as",   "into",    "onto",   "about", "over", "under", "upon",  "between", "through",
        "during", "before", "after", "above", "below", "within", "without", "is", "are",
        "was",  "were",    "be",     "been",  "being", "am",   "it",    "its",   "this",
        "that", "these",   "those",  "than",  "then", "if",
    };
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open stopword file " + path.string());
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue;
        auto e = line.find_last_not_of(" \t\r\n");
        out.insert(line.substr(b, e - b + 1));
    }
    return out;
}

void validate(const PreferencePair& pair) {
    if (pair.prompt.empty()) throw DataError("preference pair has an empty prompt");
    if (pair.chosen.ids == pair.rejected.ids) throw DataError("chosen and rejected responses are identical");
    for (const TokenSeq* s : {&pair.prompt, &pair.chosen, &pair.rejected}) {
        if (s->ids.size() != s->surfaces.size()) throw DataError("token ids and surfaces differ in length");
        for (int id : s->ids)
            if (id == Vocabulary::kPad) throw DataError("PAD inside a token sequence");
    }
}

// ---- sort task ------------------------------------------------------------

std::string render_sort_response(const std::vector<int>& sorted_values, int tmpl) {
    const std::string list = join(sorted_values, " ");
    const std::string first = std::to_string(sorted_values.front());
    switch (tmpl) {
        case 0: return list + " ; first is " + first;
        case 1: return "sorted : " + list + " . the first number is " + first;
        case 2: return "the answer is " + list + " and the first is " + first;
        default: throw ConfigError("unknown sort template " + std::to_string(tmpl));
    }
}

std::vector<PreferencePair> gen_sort_task(const SortTaskOptions& opts, const Vocabulary& vocab) {
    if (opts.n_pairs == 0) throw ConfigError("gen_sort_task: n_pairs must be positive");
    if (opts.n_items < 2) throw ConfigError("gen_sort_task: n_items must be at least 2");
    if (opts.lo >= opts.hi) throw ConfigError("gen_sort_task: value range must satisfy lo < hi");
    if (!(opts.swap_frac >= 0.0 && opts.swap_frac <= 1.0) || !(opts.good_enough_frac >= 0.0 && opts.good_enough_frac <= 1.0))
        throw ConfigError("gen_sort_task: fractions must lie in [0, 1]");
    if (opts.max_corruptions < 1) throw ConfigError("gen_sort_task: max_corruptions must be at least 1");
    if (opts.hi - opts.lo + 1 < opts.n_items) throw ConfigError("gen_sort_task: value range too small for distinct items");
    if (vocab.id_of(std::to_string(opts.hi)) == Vocabulary::kUnk || vocab.id_of(std::to_string(opts.lo)) == Vocabulary::kUnk)
        throw ConfigError("gen_sort_task: vocabulary does not cover the value range");

    Rng rng(opts.seed);
    const int n = opts.n_items;
    std::vector<PreferencePair> out;
    out.reserve(opts.n_pairs);
    for (std::size_t p = 0; p < opts.n_pairs; ++p) {
        std::vector<int> pool(static_cast<std::size_t>(opts.hi - opts.lo + 1));
        std::iota(pool.begin(), pool.end(), opts.lo);
        std::vector<int> items;
        for (int i = 0; i < n; ++i) {
            const std::size_t j = rng.uniform_index(pool.size());
            items.push_back(pool[j]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
        }
        std::vector<int> sorted = items;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());

        const int chosen_t = static_cast<int>(rng.uniform_index(kSortTemplates));
        std::vector<int> corrupted = sorted;
        std::string kind = "none";
        std::string detail;
        int k = 0;
        int rejected_t = static_cast<int>(rng.uniform_index(kSortTemplates));
        if (rng.uniform01() < opts.good_enough_frac) {
            rejected_t = pick_other_template(rng, kSortTemplates, chosen_t);
        } else if (rng.uniform01() < opts.swap_frac) {
            // k disjoint adjacent transpositions separated by at least one item.
            kind = "swap";
            const int feasible = std::max(1, (n + 1) / 3);
            k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(std::min(opts.max_corruptions, feasible))));
            std::vector<int> starts;
            while (static_cast<int>(starts.size()) < k) {
                starts.clear();
                std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
                for (int attempt = 0; attempt < 64 && static_cast<int>(starts.size()) < k; ++attempt) {
                    const int s = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n - 1)));
                    const bool clash = (s > 0 && used[static_cast<std::size_t>(s - 1)]) || used[static_cast<std::size_t>(s)] ||
                                       used[static_cast<std::size_t>(s + 1)] || (s + 2 <= n && used[static_cast<std::size_t>(s + 2)]);
                    if (clash) continue;
                    used[static_cast<std::size_t>(s)] = used[static_cast<std::size_t>(s + 1)] = true;
                    starts.push_back(s);
                }
            }
            std::sort(starts.begin(), starts.end());
            for (int s : starts) {
                std::swap(corrupted[static_cast<std::size_t>(s)], corrupted[static_cast<std::size_t>(s + 1)]);
                detail += (detail.empty() ? "" : ",") + std::to_string(s) + "-" + std::to_string(s + 1);
            }
        } else {
            // A run of k items traded with the k items after it, so the
            // rejected list is locally descending after its first error.
            kind = "run";
            k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(std::min(opts.max_corruptions, n / 2))));
            const int start = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n - 2 * k + 1)));
            std::rotate(corrupted.begin() + start, corrupted.begin() + start + k, corrupted.begin() + start + 2 * k);
            detail = std::to_string(start) + "+" + std::to_string(k) + ">" + std::to_string(k);
        }

        PreferencePair pair;
        pair.prompt = tokenize("sort descending : " + join(items, " "), vocab);
        pair.chosen = tokenize(render_sort_response(sorted, chosen_t), vocab);
        pair.rejected = tokenize(render_sort_response(corrupted, rejected_t), vocab);
        const TokenSeq fixed = tokenize(render_sort_response(sorted, rejected_t), vocab);
        pair.meta = {
            {"task", "sort"},
            {"chosen_template", std::to_string(chosen_t)},
            {"rejected_template", std::to_string(rejected_t)},
            {"corruption", kind},
            {"corruption_detail", detail},
            {"k", std::to_string(k)},
            {"rejected_list", join(corrupted, " ")},
            {"corrupt_positions", diff_positions(pair.rejected, fixed)},
        };
        out.push_back(std::move(pair));
    }
    return out;
}

// ---- arithmetic task ------------------------------------------------------

std::string render_arith_response(int a, char op, int b, int tmpl, int step1_override, int step2_override) {
    const int tens = b - b % 10;
    const int ones = b % 10;
    const int c = step1_override >= 0 ? step1_override : apply(a, op, tens);
    const int ans = step2_override >= 0 ? step2_override : apply(c, op, ones);
    const std::string o(1, op);
    std::ostringstream os;
    os << a << ' ' << o << ' ' << tens << " = " << c;
    switch (tmpl) {
        case 0: os << " ; " << c << ' ' << o << ' ' << ones << " = " << ans << " ; answer " << ans; break;
        case 1: os << " , " << c << ' ' << o << ' ' << ones << " = " << ans << " , so the answer is " << ans; break;
        default: throw ConfigError("unknown arith template " + std::to_string(tmpl));
    }
    return os.str();
}

std::vector<PreferencePair> gen_arith_task(const ArithTaskOptions& opts, const Vocabulary& vocab) {
    if (opts.n_pairs == 0) throw ConfigError("gen_arith_task: n_pairs must be positive");
    if (vocab.id_of("208") == Vocabulary::kUnk) throw ConfigError("gen_arith_task: vocabulary must cover numerals up to 208");
    Rng rng(opts.seed);
    std::vector<PreferencePair> out;
    out.reserve(opts.n_pairs);
    for (std::size_t p = 0; p < opts.n_pairs; ++p) {
        const char op = rng.uniform_index(2) == 0 ? '+' : '-';
        int a = 10 + static_cast<int>(rng.uniform_index(90));
        int b = 10 + static_cast<int>(rng.uniform_index(90));
        if (op == '-' && a < b) std::swap(a, b);
        const int chosen_t = static_cast<int>(rng.uniform_index(kArithTemplates));
        int rejected_t = static_cast<int>(rng.uniform_index(kArithTemplates));
        const int c = apply(a, op, b - b % 10);
        int s1 = -1, s2 = -1;
        std::string kind = "none";
        if (rng.uniform01() < opts.good_enough_frac) {
            rejected_t = pick_other_template(rng, kArithTemplates, chosen_t);
        } else {
            static constexpr int kDeltas[] = {-10, -2, -1, 1, 2, 10};
            const int ones = b % 10;
            const bool first_step = rng.uniform_index(2) == 0;
            kind = first_step ? "step1" : "step2";
            const int base = first_step ? c : apply(c, op, ones);
            for (;;) {
                const int v = base + kDeltas[rng.uniform_index(6)];
                const int final_v = first_step ? apply(v, op, ones) : v;
                if (v < 0 || final_v < 0 || v > 208 || final_v > 208) continue;
                (first_step ? s1 : s2) = v;
                break;
            }
        }
        PreferencePair pair;
        pair.prompt = tokenize(std::to_string(a) + " " + op + " " + std::to_string(b) + " =", vocab);
        pair.chosen = tokenize(render_arith_response(a, op, b, chosen_t), vocab);
        pair.rejected = tokenize(render_arith_response(a, op, b, rejected_t, s1, s2), vocab);
        const TokenSeq fixed = tokenize(render_arith_response(a, op, b, rejected_t), vocab);
        pair.meta = {
            {"task", "arith"},
            {"chosen_template", std::to_string(chosen_t)},
            {"rejected_template", std::to_string(rejected_t)},
            {"corruption", kind},
            {"k", kind == "none" ? "0" : "1"},
            {"corrupt_positions", diff_positions(pair.rejected, fixed)},
        };
        out.push_back(std::move(pair));
    }
    return out;
}

// ---- oracles --------------------------------------------------------------

std::string solve(const std::string& task, const TokenSeq& prompt, int tmpl) {
    if (task == "sort") {
        std::vector<int> v = parse_sort_prompt(prompt);
        std::sort(v.begin(), v.end(), std::greater<>());
        return render_sort_response(v, tmpl);
    }
    if (task == "arith") {
        const ArithProblem pr = parse_arith_prompt(prompt);
        return render_arith_response(pr.a, pr.op, pr.b, tmpl);
    }
    throw ConfigError("unknown task '" + task + "'");
}

bool passes_oracle(const std::string& task, const TokenSeq& prompt, const TokenSeq& response) {
    const std::string ref = solve(task, prompt, 0);
    return numerals(TokenSeq{{}, split_tokens(ref)}) == numerals(response);
}

std::vector<SftExample> sft_examples(const std::vector<PreferencePair>& pairs, const Vocabulary& vocab,
                                     std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SftExample> out;
    out.reserve(pairs.size());
    for (const auto& pair : pairs) {
        auto it = pair.meta.find("task");
        const std::string task = it == pair.meta.end() ? "sort" : it->second;
        const int n_t = task == "arith" ? kArithTemplates : kSortTemplates;
        const int t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_t)));
        out.push_back({pair.prompt, tokenize(solve(task, pair.prompt, t), vocab)});
    }
    return out;
}

}  // namespace bmc
