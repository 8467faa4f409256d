#include "bmc/diff.hpp"

#include "bmc/error.hpp"

#include <algorithm>
#include <stdexcept>

namespace bmc {

namespace {

// Full (n+1) x (m+1) cost table, row-major.
std::vector<std::size_t> cost_table(std::span<const int> a, std::span<const int> b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            at(i, j) = std::min({at(i - 1, j - 1) + (a[i - 1] != b[j - 1] ? 1u : 0u), at(i - 1, j) + 1, at(i, j - 1) + 1});
    return d;
}

}  // namespace

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
    if (a.size() < b.size()) std::swap(a, b);
    // Two-row DP over the shorter sequence.
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j - 1] + (a[i - 1] != b[j - 1] ? 1u : 0u), prev[j] + 1, cur[j - 1] + 1});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

Alignment align(std::span<const int> source, std::span<const int> target) {
    const std::size_t n = source.size(), m = target.size();
    const auto d = cost_table(source, target);
    auto at = [&](std::size_t i, std::size_t j) { return d[i * (m + 1) + j]; };
    Alignment al;
    al.cost = at(n, m);
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            const bool same = source[i - 1] == target[j - 1];
            if (at(i, j) == at(i - 1, j - 1) + (same ? 0u : 1u)) {
                al.ops.push_back({same ? EditOp::match : EditOp::subst, static_cast<int>(i - 1), static_cast<int>(j - 1)});
                --i;
                --j;
                continue;
            }
        }
        if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            al.ops.push_back({EditOp::del, static_cast<int>(i - 1), -1});
            --i;
        } else {
            al.ops.push_back({EditOp::insert, -1, static_cast<int>(j - 1)});
            --j;
        }
    }
    std::reverse(al.ops.begin(), al.ops.end());
    return al;
}

std::vector<int> apply_alignment(const Alignment& al, std::span<const int> source, std::span<const int> target) {
    std::vector<int> out;
    std::size_t next_src = 0;
    for (const AlignStep& s : al.ops) {
        if (s.src >= 0) {
            if (static_cast<std::size_t>(s.src) != next_src) throw std::logic_error("alignment skips source tokens");
            ++next_src;
        }
        switch (s.op) {
            case EditOp::match: out.push_back(source[static_cast<std::size_t>(s.src)]); break;
            case EditOp::subst:
            case EditOp::insert: out.push_back(target[static_cast<std::size_t>(s.tgt)]); break;
            case EditOp::del: break;
        }
    }
    if (next_src != source.size()) throw std::logic_error("alignment does not consume the source");
    return out;
}

DiffMask DiffMask::from_flags(std::vector<bool> flags) {
    DiffMask m;
    m.flags = std::move(flags);
    for (std::size_t i = 0; i < m.flags.size();) {
        if (!m.flags[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < m.flags.size() && m.flags[j]) ++j;
        m.spans.emplace_back(i, j);
        i = j;
    }
    return m;
}

DiffMask DiffMask::from_indices(std::size_t length, std::span<const int> indices) {
    std::vector<bool> flags(length, false);
    for (int i : indices) {
        if (i < 0 || static_cast<std::size_t>(i) >= length)
            throw DataError("diff index " + std::to_string(i) + " outside response of length " + std::to_string(length));
        flags[static_cast<std::size_t>(i)] = true;
    }
    return from_flags(std::move(flags));
}

std::vector<int> DiffMask::indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < flags.size(); ++i)
        if (flags[i]) out.push_back(static_cast<int>(i));
    return out;
}

std::size_t DiffMask::count() const { return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true)); }

DiffMasks diff_masks(const TokenSeq& chosen, const TokenSeq& rejected, const std::unordered_set<int>& stopword_ids) {
    if (chosen.empty() || rejected.empty()) throw DataError("diff_masks requires two nonempty sequences");
    const Alignment al = align(rejected.ids, chosen.ids);
    std::vector<bool> fc(chosen.size(), false), fr(rejected.size(), false);
    for (const AlignStep& s : al.ops) {
        if (s.op == EditOp::subst || s.op == EditOp::insert) fc[static_cast<std::size_t>(s.tgt)] = true;
        if (s.op == EditOp::subst || s.op == EditOp::del) fr[static_cast<std::size_t>(s.src)] = true;
    }
    for (std::size_t i = 0; i < fc.size(); ++i)
        if (stopword_ids.contains(chosen.ids[i])) fc[i] = false;
    for (std::size_t i = 0; i < fr.size(); ++i)
        if (stopword_ids.contains(rejected.ids[i])) fr[i] = false;
    return {DiffMask::from_flags(std::move(fc)), DiffMask::from_flags(std::move(fr))};
}

}  // namespace bmc
