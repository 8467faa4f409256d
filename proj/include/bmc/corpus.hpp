#pragma once

// Tokenization, stopwords and the synthetic preference-pair generators.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace bmc {

enum class TokenizerMode { word, character };

struct TokenSeq {
    std::vector<int> ids;
    std::vector<std::string> surfaces;

    [[nodiscard]] std::size_t size() const { return ids.size(); }
    [[nodiscard]] bool empty() const { return ids.empty(); }
    /// Equality is by id sequence only.
    bool operator==(const TokenSeq& o) const { return ids == o.ids; }
};

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    /// `tokens` must not repeat or contain the reserved specials; they are
    /// assigned ids starting at 4. Stopwords absent from the vocabulary are ignored.
    explicit Vocabulary(const std::vector<std::string>& tokens,
                        const std::set<std::string>& stopwords = {});

    /// Rebuilds from a full token list (specials included, in id order),
    /// as stored in checkpoints.
    static Vocabulary from_full_list(const std::vector<std::string>& all_tokens,
                                     const std::set<std::string>& stopwords);

    /// Word vocabulary covering both synthetic tasks with numerals 0..max_number.
    static Vocabulary for_tasks(int max_number, const std::set<std::string>& stopwords);

    [[nodiscard]] int id_of(std::string_view token) const;
    [[nodiscard]] const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] std::size_t size() const { return tokens_.size(); }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }
    [[nodiscard]] bool is_stopword(int id) const { return stopword_ids_.contains(id); }
    [[nodiscard]] const std::unordered_set<int>& stopword_ids() const { return stopword_ids_; }
    [[nodiscard]] std::set<std::string> stopwords() const;

private:
    Vocabulary() = default;
    void index(const std::set<std::string>& stopwords);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> id_of_;
    std::unordered_set<int> stopword_ids_;
};

/// Splits on whitespace; every punctuation character becomes its own token.
/// Unknown tokens map to Vocabulary::kUnk and keep their surface.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab,
                  TokenizerMode mode = TokenizerMode::word);
std::string detokenize(const TokenSeq& seq);
/// Surface segmentation without a vocabulary.
std::vector<std::string> split_tokens(std::string_view text, TokenizerMode mode = TokenizerMode::word);

/// Built-in English stopword list (articles, conjunctions, prepositions, copulas).
std::set<std::string> default_stopwords();
/// One token per line, UTF-8. Blank lines are skipped.
std::set<std::string> load_stopwords(const std::filesystem::path& path);

struct PreferencePair {
    TokenSeq prompt;
    TokenSeq chosen;
    TokenSeq rejected;
    std::map<std::string, std::string> meta;
};

/// Throws DataError when the pair violates its invariants.
void validate(const PreferencePair& pair);

// ---- synthetic tasks ------------------------------------------------------

struct SortTaskOptions {
    int n_items = 5;
    int lo = 10;
    int hi = 99;
    std::uint64_t seed = 0;
    std::size_t n_pairs = 100;
    /// Fraction of pairs whose rejected response is already correct (differs
    /// from the chosen one in phrasing only); these exercise the good-enough filter.
    double good_enough_frac = 0.0;
    int max_corruptions = 3;
    /// Probability that a corrupted pair uses adjacent transpositions rather
    /// than a block exchange.
    double swap_frac = 0.5;
};

struct ArithTaskOptions {
    std::uint64_t seed = 0;
    std::size_t n_pairs = 100;
    double good_enough_frac = 0.0;
};

/// Number of response phrasings available for each task.
inline constexpr int kSortTemplates = 3;
inline constexpr int kArithTemplates = 2;

std::vector<PreferencePair> gen_sort_task(const SortTaskOptions& opts, const Vocabulary& vocab);
std::vector<PreferencePair> gen_arith_task(const ArithTaskOptions& opts, const Vocabulary& vocab);

/// Renders a sort response listing `sorted_values` in template `tmpl`; the
/// trailing "first" element is sorted_values.front().
std::string render_sort_response(const std::vector<int>& sorted_values, int tmpl);
std::string render_arith_response(int a, char op, int b, int tmpl, int step1_override = -1,
                                  int step2_override = -1);

/// Correct response in a given phrasing, derived from the prompt alone.
std::string solve(const std::string& task, const TokenSeq& prompt, int tmpl);

/// Exact correctness oracle: the numerals of `response` must equal those of
/// the correct solution, in order. Phrasing words are ignored.
bool passes_oracle(const std::string& task, const TokenSeq& prompt, const TokenSeq& response);

/// Prompt + target sequences for supervised fine-tuning: each prompt paired
/// with a correct answer in a seeded random phrasing.
struct SftExample {
    TokenSeq prompt;
    TokenSeq target;
};
std::vector<SftExample> sft_examples(const std::vector<PreferencePair>& pairs, const Vocabulary& vocab,
                                     std::uint64_t seed);

}  // namespace bmc
