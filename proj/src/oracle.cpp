#include "bmc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace bmc::oracle {

namespace {

enum class Op { diag, del, ins };

struct Search {
    std::span<const int> s, t;
    std::vector<std::pair<Op, bool>> path, best_path;  // (op, changed)
    std::size_t best = std::numeric_limits<std::size_t>::max();

    void run(std::size_t i, std::size_t j, std::size_t cost) {
        const std::size_t bound = i > j ? i - j : j - i;
        if (cost + bound >= best) return;
        if (i == 0 && j == 0) {
            best = cost;
            best_path = path;
            return;
        }
        if (i > 0 && j > 0) {
            const bool changed = s[i - 1] != t[j - 1];
            path.emplace_back(Op::diag, changed);
            run(i - 1, j - 1, cost + (changed ? 1 : 0));
            path.pop_back();
        }
        if (i > 0) {
            path.emplace_back(Op::del, true);
            run(i - 1, j, cost + 1);
            path.pop_back();
        }
        if (j > 0) {
            path.emplace_back(Op::ins, true);
            run(i, j - 1, cost + 1);
            path.pop_back();
        }
    }
};

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double kl_rows(const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& q) {
    double s = 0.0;
    for (std::size_t r = 0; r < p.size(); ++r)
        for (std::size_t v = 0; v < p[r].size(); ++v) s += std::exp(p[r][v]) * (p[r][v] - q[r][v]);
    return s;
}

struct Side {
    double ratio = 0.0;  // Σ λ (logp - ref)
    double logp = 0.0;   // Σ λ logp
    double weight = 0.0; // Σ λ
    double length = 0.0;
};

Side side(const std::vector<double>& lp, const std::vector<double>& ref, const std::vector<bool>& mask, bool weighted,
          double delta) {
    Side s;
    s.length = static_cast<double>(lp.size());
    for (std::size_t t = 0; t < lp.size(); ++t) {
        const double w = weighted ? lambda(std::exp(lp[t]), mask[t], delta) : 1.0;
        s.ratio += w * (lp[t] - ref[t]);
        s.logp += w * lp[t];
        s.weight += w;
    }
    return s;
}

}  // namespace

BruteDiff brute_force_diff(std::span<const int> source, std::span<const int> target) {
    Search search{source, target, {}, {}, std::numeric_limits<std::size_t>::max()};
    search.run(source.size(), target.size(), 0);
    BruteDiff out;
    out.distance = search.best;
    out.source_flags.assign(source.size(), false);
    out.target_flags.assign(target.size(), false);
    std::size_t i = source.size(), j = target.size();
    for (const auto& [op, changed] : search.best_path) {
        switch (op) {
            case Op::diag:
                --i, --j;
                if (changed) out.source_flags[i] = out.target_flags[j] = true;
                break;
            case Op::del: out.source_flags[--i] = true; break;
            case Op::ins: out.target_flags[--j] = true; break;
        }
    }
    return out;
}

std::size_t furthest_reaching_distance(std::span<const int> a, std::span<const int> b) {
    const long n = static_cast<long>(a.size()), m = static_cast<long>(b.size());
    constexpr long kNone = std::numeric_limits<long>::min() / 2;
    const long offset = n + m + 1;
    // row[k + offset]: furthest row i reached on diagonal k = j - i.
    std::vector<long> row(static_cast<std::size_t>(2 * offset + 1), kNone);
    auto at = [&](long k) -> long& { return row[static_cast<std::size_t>(k + offset)]; };
    auto slide = [&](long i, long k) {
        while (i < n && i + k < m && a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i + k)]) ++i;
        return i;
    };
    at(0) = slide(0, 0);
    for (long d = 0;; ++d) {
        if (at(m - n) >= n) return static_cast<std::size_t>(d);
        std::vector<long> next(row.size(), kNone);
        for (long k = std::max(-d - 1, -n); k <= std::min(d + 1, m); ++k) {
            long i = kNone;
            if (at(k) != kNone) i = std::max(i, at(k) + 1);              // substitution
            if (k - 1 >= -n && at(k - 1) != kNone) i = std::max(i, at(k - 1));  // insertion
            if (k + 1 <= m && at(k + 1) != kNone) i = std::max(i, at(k + 1) + 1);  // deletion
            if (i == kNone) continue;
            i = std::min({i, n, m - k});
            next[static_cast<std::size_t>(k + offset)] = slide(i, k);
        }
        row = std::move(next);
    }
}

double lambda(double prob, bool flagged, double delta) {
    if (!flagged) return 1.0;
    return 1.0 + std::min(1.0 / std::max(prob, 1e-12), delta);
}

double loss(const LossSpec& spec, std::span<const PlainPair> batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const bool weighted = spec.method == Method::DPO_BMC || spec.bmc_wrap;
    const double b = spec.beta;
    double z_ref = 0.0;
    if (spec.method == Method::KTO) {
        for (const auto& p : batch) z_ref += b * kl_rows(p.dist_l, p.ref_dist_l);
        z_ref = std::max(0.0, z_ref / static_cast<double>(batch.size()));
    }
    double total = 0.0;
    for (const auto& p : batch) {
        const Side w = side(p.logp_w, p.ref_w, p.mask_w, weighted, spec.delta);
        const Side l = side(p.logp_l, p.ref_l, p.mask_l, weighted, spec.delta);
        double v = 0.0;
        switch (spec.method) {
            case Method::DPO:
            case Method::DPO_BMC: v = -log_sigmoid(b * (w.ratio - l.ratio)); break;
            case Method::IPO: {
                const double h = w.ratio - l.ratio - 1.0 / (2.0 * spec.tau);
                v = h * h;
                break;
            }
            case Method::KTO:
                v = spec.lambda_w * (1.0 - sigmoid(b * w.ratio - z_ref)) + spec.lambda_l * (1.0 - sigmoid(z_ref - b * l.ratio));
                break;
            case Method::ORPO: {
                const double mw = w.logp / w.weight, ml = l.logp / l.weight;
                const double odds_w = std::log(std::exp(mw) / (1.0 - std::exp(mw)));
                const double odds_l = std::log(std::exp(ml) / (1.0 - std::exp(ml)));
                v = -mw - spec.lambda_orpo * log_sigmoid(odds_w - odds_l);
                break;
            }
            case Method::TDPO: {
                const double kl_w = kl_rows(p.ref_dist_w, p.dist_w), kl_l = kl_rows(p.ref_dist_l, p.dist_l);
                v = -log_sigmoid(b * w.ratio - b * l.ratio - spec.alpha * (b * kl_l - b * kl_w));
                break;
            }
            case Method::R_DPO:
                v = -log_sigmoid(b * w.ratio - b * l.ratio - (spec.alpha * w.length - spec.alpha * l.length));
                break;
            case Method::SIMPO: v = -log_sigmoid(b / w.weight * w.logp - b / l.weight * l.logp - spec.gamma); break;
            case Method::FIGA: {
                double up = 0.0, down = 0.0;
                for (std::size_t t = 0; t < p.logp_w.size(); ++t)
                    if (p.mask_w[t]) up += p.logp_w[t];
                for (std::size_t t = 0; t < p.logp_l.size(); ++t)
                    if (p.mask_l[t]) down += p.logp_l[t];
                v = -spec.alpha * up + spec.beta * down;
                break;
            }
        }
        total += v;
    }
    return total / static_cast<double>(batch.size());
}

}  // namespace bmc::oracle
