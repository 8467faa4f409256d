#pragma once

// Unit-cost Levenshtein alignment over token ids and the diff masks built on it.

#include "bmc/corpus.hpp"

#include <cstddef>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

namespace bmc {

enum class EditOp { match, subst, insert, del };

struct AlignStep {
    EditOp op;
    int src;  // index into the source, -1 for insert
    int tgt;  // index into the target, -1 for delete
    bool operator==(const AlignStep&) const = default;
};

struct Alignment {
    std::vector<AlignStep> ops;
    std::size_t cost = 0;
};

std::size_t edit_distance(std::span<const int> a, std::span<const int> b);
inline std::size_t edit_distance(const TokenSeq& a, const TokenSeq& b) { return edit_distance(a.ids, b.ids); }

/// Minimal-cost script turning `source` into `target`. Backtrace ties prefer
/// MATCH/SUBST, then DELETE, then INSERT, walking from the end.
Alignment align(std::span<const int> source, std::span<const int> target);
inline Alignment align(const TokenSeq& a, const TokenSeq& b) { return align(a.ids, b.ids); }

/// Replays an alignment on `source`; used to check that a script is valid.
std::vector<int> apply_alignment(const Alignment& al, std::span<const int> source, std::span<const int> target);

struct DiffMask {
    std::vector<bool> flags;
    /// Maximal runs of flagged positions as [start, end).
    std::vector<std::pair<std::size_t, std::size_t>> spans;

    static DiffMask from_flags(std::vector<bool> flags);
    static DiffMask from_indices(std::size_t length, std::span<const int> indices);
    [[nodiscard]] std::vector<int> indices() const;
    [[nodiscard]] std::size_t count() const;
    [[nodiscard]] std::size_t size() const { return flags.size(); }
    [[nodiscard]] bool empty() const { return spans.empty(); }
    bool operator==(const DiffMask&) const = default;
};

struct DiffMasks {
    DiffMask chosen;    // diff(ỹ_w | y_l), over the chosen response
    DiffMask rejected;  // diff(y_l | ỹ_w), over the rejected response
};

/// Aligns y_l (source) to ỹ_w (target). Target positions that are SUBST or
/// INSERT and source positions that are SUBST or DELETE are flagged; flagged
/// stopwords are then cleared. Throws DataError on empty input.
DiffMasks diff_masks(const TokenSeq& chosen, const TokenSeq& rejected,
                     const std::unordered_set<int>& stopword_ids);

}  // namespace bmc
