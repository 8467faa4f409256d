#include "bmc/analysis.hpp"

#include "bmc/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace bmc {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- rewards and KL ---------------------------------------------------------

namespace {

TokenRewardTrace trace(const Policy& policy, const PolicySnapshot& ref, const TokenSeq& prompt, const TokenSeq& response,
                       const DiffMask* mask, double beta) {
    const auto lp = logprobs(policy, prompt, response);
    const auto lr = logprobs_ref(ref, prompt, response);
    TokenRewardTrace t;
    t.tokens = response.surfaces;
    t.rewards.resize(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) t.rewards[i] = beta * (lp[i] - lr[i]);
    t.flags = mask ? mask->flags : std::vector<bool>(lp.size(), false);
    return t;
}

}  // namespace

PairRewardTraces token_rewards(const Policy& policy, const PolicySnapshot& ref, const TrainExample& ex, double beta) {
    return {trace(policy, ref, ex.prompt, ex.chosen, ex.masks ? &ex.masks->chosen : nullptr, beta),
            trace(policy, ref, ex.prompt, ex.rejected, ex.masks ? &ex.masks->rejected : nullptr, beta)};
}

SeqRewardReport seq_reward_report(const Policy& policy, const PolicySnapshot& ref, const std::vector<TrainExample>& data,
                                  double beta) {
    if (data.empty()) throw DataError("seq_reward_report: no pairs");
    SeqRewardReport r;
    std::size_t wins = 0;
    for (const auto& ex : data) {
        const PairRewardTraces t = token_rewards(policy, ref, ex, beta);
        const double rw = std::accumulate(t.chosen.rewards.begin(), t.chosen.rewards.end(), 0.0);
        const double rl = std::accumulate(t.rejected.rewards.begin(), t.rejected.rewards.end(), 0.0);
        r.margins.push_back(rw - rl);
        if (rw - rl > 0.0) ++wins;
    }
    r.mean_margin = std::accumulate(r.margins.begin(), r.margins.end(), 0.0) / static_cast<double>(r.margins.size());
    r.accuracy = static_cast<double>(wins) / static_cast<double>(r.margins.size());
    return r;
}

double seq_kl_to_ref(const Policy& policy, const PolicySnapshot& ref, const TokenSeq& prompt, const TokenSeq& response) {
    const ad::Tensor p = log_distributions(policy, prompt, response);
    const ad::Tensor q = log_distributions(ref.policy(), prompt, response);
    double kl = 0.0;
    for (std::size_t i = 0; i < p.data.size(); ++i) kl += std::exp(p.data[i]) * (p.data[i] - q.data[i]);
    // Rounding can leave a tiny negative sum when the two models agree.
    return std::max(kl, 0.0);
}

std::vector<KlPoint> kl_track(const std::vector<PolicyCheckpoint>& checkpoints, const PolicySnapshot& ref,
                              const std::vector<TrainExample>& heldout) {
    if (heldout.empty()) throw DataError("kl_track: no held-out winners");
    std::vector<KlPoint> out;
    for (const auto& c : checkpoints) {
        double s = 0.0;
        for (const auto& ex : heldout) s += seq_kl_to_ref(c.policy, ref, ex.prompt, ex.chosen);
        out.push_back({c.step, s / static_cast<double>(heldout.size())});
    }
    return out;
}

// ---- span profile -----------------------------------------------------------

SpanProfile span_logp_profile(const Policy& policy, const std::vector<TrainExample>& data) {
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (const auto& ex : data) {
        if (!ex.masks || ex.masks->rejected.spans.empty()) continue;
        const auto lp = logprobs(policy, ex.prompt, ex.rejected);
        for (const auto& [b, e] : ex.masks->rejected.spans)
            for (std::size_t k = b; k < e; ++k) {
                auto& [sum, n] = acc[k - b + 1];
                sum += -lp[k];
                ++n;
            }
    }
    if (acc.empty()) throw DataError("span_logp_profile: no diff spans in the data");
    SpanProfile p;
    for (const auto& [pos, v] : acc) {
        p.positions.push_back(pos);
        p.mean_nll.push_back(v.first / static_cast<double>(v.second));
        p.counts.push_back(v.second);
    }
    return p;
}

// ---- gradient-norm buckets --------------------------------------------------

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    return rank;
}

BucketSummary summarize(std::vector<double> norms, std::vector<double> eds, std::vector<std::size_t> counts) {
    BucketSummary s;
    s.mean_grad_norm = std::move(norms);
    s.mean_edit_distance = std::move(eds);
    s.counts = std::move(counts);
    std::vector<double> index(s.mean_grad_norm.size());
    std::iota(index.begin(), index.end(), 0.0);
    if (auto rho = spearman(index, s.mean_grad_norm)) {
        s.spearman = *rho;
        s.spearman_defined = true;
    }
    const double n = static_cast<double>(s.mean_grad_norm.size());
    const double mean = std::accumulate(s.mean_grad_norm.begin(), s.mean_grad_norm.end(), 0.0) / n;
    double var = 0.0;
    for (double x : s.mean_grad_norm) var += (x - mean) * (x - mean);
    var /= n;
    s.coefficient_of_variation = mean != 0.0 ? std::sqrt(var) / mean : 0.0;
    return s;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
    if (x.size() < 2) return std::nullopt;
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

BucketSummary grad_norm_buckets(const std::vector<StepLog>& logs, std::size_t n_buckets) {
    if (n_buckets == 0) throw ConfigError("grad_norm_buckets: n_buckets must be positive");
    if (logs.size() < n_buckets)
        throw DataError("grad_norm_buckets: " + std::to_string(logs.size()) + " steps cannot fill " + std::to_string(n_buckets) +
                        " buckets");
    std::vector<std::size_t> idx(logs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return logs[a].mean_edit_distance < logs[b].mean_edit_distance;
    });
    std::vector<double> norms, eds;
    std::vector<std::size_t> counts;
    for (std::size_t b = 0; b < n_buckets; ++b) {
        const std::size_t lo = b * logs.size() / n_buckets, hi = (b + 1) * logs.size() / n_buckets;
        double sn = 0.0, se = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            sn += logs[idx[k]].grad_norm;
            se += logs[idx[k]].mean_edit_distance;
        }
        const double c = static_cast<double>(hi - lo);
        norms.push_back(sn / c);
        eds.push_back(se / c);
        counts.push_back(hi - lo);
    }
    return summarize(std::move(norms), std::move(eds), std::move(counts));
}

BucketSummary grad_norm_buckets(const std::vector<std::vector<StepLog>>& runs) {
    if (runs.empty()) throw DataError("grad_norm_buckets: no runs");
    std::vector<double> norms, eds;
    std::vector<std::size_t> counts;
    for (std::size_t b = 0; b < runs.size(); ++b) {
        if (runs[b].empty()) throw DataError("grad_norm_buckets: bucket " + std::to_string(b) + " has no steps");
        double sn = 0.0, se = 0.0;
        for (const auto& l : runs[b]) {
            sn += l.grad_norm;
            se += l.mean_edit_distance;
        }
        const double c = static_cast<double>(runs[b].size());
        norms.push_back(sn / c);
        eds.push_back(se / c);
        counts.push_back(runs[b].size());
    }
    return summarize(std::move(norms), std::move(eds), std::move(counts));
}

// ---- reports ------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json trace_json(const TokenRewardTrace& t) {
    std::vector<int> flags;
    for (bool f : t.flags) flags.push_back(f ? 1 : 0);
    return {{"tokens", t.tokens}, {"rewards", t.rewards}, {"flags", flags}};
}

TokenRewardTrace trace_from_json(const json& j) {
    TokenRewardTrace t;
    t.tokens = j.at("tokens").get<std::vector<std::string>>();
    t.rewards = j.at("rewards").get<std::vector<double>>();
    for (int f : j.at("flags").get<std::vector<int>>()) t.flags.push_back(f != 0);
    return t;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p, const std::string& header) {
    std::istringstream in(read_file(p));
    std::string line;
    if (!std::getline(in, line) || line != header) throw DataError(p.string() + ": unexpected header");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) cells.push_back(c);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

std::vector<fs::path> emit_report(const fs::path& dir, const ReportData& data) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create report directory " + dir.string());

    std::map<std::string, std::string> files;
    if (!data.traces.empty()) {
        json pairs = json::array();
        for (const auto& t : data.traces) pairs.push_back({{"chosen", trace_json(t.chosen)}, {"rejected", trace_json(t.rejected)}});
        files["token_rewards.json"] = json{{"schema_version", kReportSchemaVersion}, {"pairs", pairs}}.dump(2) + "\n";
    }
    if (data.seq) {
        files["seq_rewards.json"] = json{{"schema_version", kReportSchemaVersion},
                                         {"n_pairs", data.seq->margins.size()},
                                         {"mean_margin", data.seq->mean_margin},
                                         {"accuracy", data.seq->accuracy},
                                         {"margins", data.seq->margins}}
                                        .dump(2) +
                                    "\n";
    }
    if (!data.kl.empty()) {
        std::string s = "step,kl\n";
        for (const auto& k : data.kl) s += std::to_string(k.step) + "," + num(k.kl) + "\n";
        files["kl.csv"] = s;
    }
    if (data.span) {
        std::string s = "position,mean_nll,count\n";
        for (std::size_t i = 0; i < data.span->positions.size(); ++i)
            s += std::to_string(data.span->positions[i]) + "," + num(data.span->mean_nll[i]) + "," +
                 std::to_string(data.span->counts[i]) + "\n";
        files["span_profile.csv"] = s;
    }
    if (data.buckets) {
        const auto& b = *data.buckets;
        std::string s = "bucket,mean_edit_distance,mean_grad_norm,count\n";
        for (std::size_t i = 0; i < b.mean_grad_norm.size(); ++i)
            s += std::to_string(i) + "," + num(b.mean_edit_distance[i]) + "," + num(b.mean_grad_norm[i]) + "," +
                 std::to_string(b.counts[i]) + "\n";
        files["buckets.csv"] = s;
        files["bucket_stats.json"] = json{{"schema_version", kReportSchemaVersion},
                                          {"spearman", b.spearman},
                                          {"spearman_defined", b.spearman_defined},
                                          {"coefficient_of_variation", b.coefficient_of_variation}}
                                         .dump(2) +
                                     "\n";
    }

    json manifest = {{"schema_version", kReportSchemaVersion}, {"files", json::array()}};
    std::vector<fs::path> written;
    for (const auto& [name, bytes] : files) {
        const fs::path p = dir / name;
        std::ofstream out(p, std::ios::binary);
        if (!out || !(out << bytes)) throw ConfigError("cannot write " + p.string());
        manifest["files"].push_back({{"path", name}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
        written.push_back(p);
    }
    const fs::path mp = dir / "manifest.json";
    std::ofstream out(mp, std::ios::binary);
    if (!out || !(out << manifest.dump(2) << "\n")) throw ConfigError("cannot write " + mp.string());
    written.push_back(mp);
    return written;
}

ReportData load_report(const fs::path& dir) {
    ReportData d;
    try {
        if (fs::exists(dir / "token_rewards.json")) {
            const json j = json::parse(read_file(dir / "token_rewards.json"));
            for (const auto& p : j.at("pairs")) d.traces.push_back({trace_from_json(p.at("chosen")), trace_from_json(p.at("rejected"))});
        }
        if (fs::exists(dir / "seq_rewards.json")) {
            const json j = json::parse(read_file(dir / "seq_rewards.json"));
            d.seq = SeqRewardReport{j.at("margins").get<std::vector<double>>(), j.at("mean_margin").get<double>(),
                                    j.at("accuracy").get<double>()};
        }
        if (fs::exists(dir / "kl.csv"))
            for (const auto& r : read_csv(dir / "kl.csv", "step,kl")) d.kl.push_back({std::stoul(r.at(0)), std::stod(r.at(1))});
        if (fs::exists(dir / "span_profile.csv")) {
            SpanProfile s;
            for (const auto& r : read_csv(dir / "span_profile.csv", "position,mean_nll,count")) {
                s.positions.push_back(std::stoul(r.at(0)));
                s.mean_nll.push_back(std::stod(r.at(1)));
                s.counts.push_back(std::stoul(r.at(2)));
            }
            d.span = s;
        }
        if (fs::exists(dir / "buckets.csv")) {
            BucketSummary b;
            for (const auto& r : read_csv(dir / "buckets.csv", "bucket,mean_edit_distance,mean_grad_norm,count")) {
                b.mean_edit_distance.push_back(std::stod(r.at(1)));
                b.mean_grad_norm.push_back(std::stod(r.at(2)));
                b.counts.push_back(std::stoul(r.at(3)));
            }
            const json j = json::parse(read_file(dir / "bucket_stats.json"));
            b.spearman = j.at("spearman").get<double>();
            b.spearman_defined = j.at("spearman_defined").get<bool>();
            b.coefficient_of_variation = j.at("coefficient_of_variation").get<double>();
            d.buckets = b;
        }
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("malformed report in " + dir.string() + ": " + e.what());
    }
    return d;
}

}  // namespace bmc
