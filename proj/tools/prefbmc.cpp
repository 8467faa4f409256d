// prefbmc: command-line front end for the preference-optimization pipeline.
//
// Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numeric failure,
// 4 external-service failure.

#include "bmc/error.hpp"
#include "bmc/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Pulls `--section.key value` and `--section.key=value` out of argv; CLI11
// handles the rest.
std::vector<std::string> split_dotted(int argc, char** argv, Overrides& out) {
    std::vector<std::string> rest;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        const bool dotted = a.rfind("--", 0) == 0 && a.find('.') != std::string::npos &&
                            a.find('.') < a.find('=');
        if (!dotted) {
            rest.push_back(a);
            continue;
        }
        const std::size_t eq = a.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
        } else if (i + 1 < argc) {
            out.emplace_back(a.substr(2), argv[++i]);
        } else {
            throw CLI::ArgumentMismatch(a + " needs a value");
        }
    }
    return rest;
}

void print_stats(const char* name, const bmc::BridgeStats& s) {
    std::printf("%s: %zu pairs, %zu bridged, %zu good-enough, %zu failed, mean edit distance %.3f -> %.3f, "
                "%zu increased\n",
                name, s.n_input, s.n_bridged, s.n_good_enough, s.n_failed, s.mean_edit_distance_before,
                s.mean_edit_distance_after, s.n_distance_increased);
}

int run(const std::string& cmd, const bmc::RunConfig& cfg) {
    if (cmd == "gen-data") {
        const auto s = bmc::gen_data(cfg);
        std::printf("wrote %zu training and %zu held-out pairs to %s\n", s.n_pairs, s.n_heldout, cfg.io.out.c_str());
    } else if (cmd == "bridge") {
        const auto s = bmc::bridge(cfg);
        print_stats("train", s.train);
        print_stats("heldout", s.heldout);
    } else if (cmd == "sft") {
        const auto s = bmc::run_sft(cfg);
        std::printf("sft: %zu parameters, final loss %.4f, held-out solve rate %.3f\n", s.n_parameters, s.final_loss,
                    s.solve_rate);
    } else if (cmd == "train") {
        const auto s = bmc::run_train(cfg);
        std::printf("train %s: %zu steps, final loss %.4f -> %s\n", cfg.train.loss.label().c_str(), s.steps,
                    s.final_loss, s.dir.c_str());
    } else if (cmd == "eval") {
        const auto s = bmc::run_eval(cfg);
        std::printf("eval %s: reward accuracy %.4f, mean margin %.4f, final KL %.4f -> %s\n",
                    cfg.train.loss.label().c_str(), s.accuracy, s.mean_margin, s.final_kl, s.dir.c_str());
    } else if (cmd == "report") {
        for (const auto& p : bmc::run_report(cfg)) std::printf("%s\n", p.c_str());
    } else if (cmd == "check") {
        bool ok = true;
        for (const auto& r : bmc::run_check(cfg)) {
            std::printf("%-18s %s  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.detail.c_str());
            ok = ok && r.passed;
        }
        if (!ok) return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preference optimization with bridged pairs and confidence-weighted token losses"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::optional<std::string> config, out, editor, method;
    std::optional<std::uint64_t> seed;
    std::optional<double> delta, beta;
    app.add_option("--config", config, "Run config (JSON)");
    app.add_option("--seed", seed, "Root seed");
    app.add_option("--out", out, "Run directory (io.out)");
    app.add_option("--editor", editor, "Bridging editor")->check(CLI::IsMember({"oracle", "llm"}));
    app.add_option("--method", method, "Loss method (train.loss.method)");
    app.add_option("--delta", delta, "Emphasis ceiling (train.loss.delta)");
    app.add_option("--beta", beta, "Reward scale (train.loss.beta)");
    app.footer("Any config field can be overridden as --section.key VALUE, e.g. --train.lr 1e-4.");

    const std::vector<std::pair<const char*, const char*>> commands = {
        {"gen-data", "Generate training and held-out preference pairs"},
        {"bridge", "Rewrite rejected responses into pseudo-preferred ones and compute diff masks"},
        {"sft", "Supervised fine-tuning of the starting policy"},
        {"train", "Preference optimization from the SFT checkpoint"},
        {"eval", "Sequence rewards, KL to the reference, span profile and token rewards"},
        {"report", "Report files with checksums, including edit-distance buckets"},
        {"check", "Gradient, reduction, decomposition, diff and weighting self-checks"}};
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    Overrides overrides;
    try {
        std::vector<std::string> rest = split_dotted(argc, argv, overrides);
        std::reverse(rest.begin(), rest.end());
        app.parse(rest);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    // Named flags win over dotted ones, which win over the file.
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (out) overrides.emplace_back("io.out", nlohmann::json(std::filesystem::absolute(*out).string()).dump());
    if (editor) overrides.emplace_back("bridging.editor", *editor);
    if (method) overrides.emplace_back("train.loss.method", *method);
    if (delta) overrides.emplace_back("train.loss.delta", nlohmann::json(*delta).dump());
    if (beta) overrides.emplace_back("train.loss.beta", nlohmann::json(*beta).dump());

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        const bmc::RunConfig cfg = bmc::load_run_config(config, overrides);
        return run(cmd, cfg);
    } catch (const bmc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const bmc::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const bmc::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const bmc::ExternalError& e) {
        std::cerr << "external service failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
