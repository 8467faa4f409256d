#pragma once

// The end-to-end pipeline behind the command-line subcommands. Every stage
// reads its inputs from and writes its outputs to the run directory io.out:
//
//   pairs.jsonl, heldout.jsonl                       gen-data
//   bridged.jsonl, kept.jsonl, filtered.jsonl,
//   heldout_bridged.jsonl, heldout_kept.jsonl,
//   bridge_stats.json                                bridge
//   sft.ckpt, sft_log.csv, sft_metrics.json          sft
//   <method>/policy.ckpt, steps.csv, config.json,
//   <method>/checkpoints/step_<N>.ckpt               train
//   <method>/eval/...                                eval
//   <method>/report/...                              report
//   check.json                                       check
//
// <method> is the lower-cased loss label, e.g. dpo, dpo_bmc, ipo_bmc.

#include "bmc/analysis.hpp"
#include "bmc/bridging.hpp"
#include "bmc/check.hpp"
#include "bmc/config.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace bmc {

struct RunPaths {
    std::filesystem::path out;

    [[nodiscard]] std::filesystem::path pairs() const { return out / "pairs.jsonl"; }
    [[nodiscard]] std::filesystem::path heldout() const { return out / "heldout.jsonl"; }
    [[nodiscard]] std::filesystem::path bridged() const { return out / "bridged.jsonl"; }
    [[nodiscard]] std::filesystem::path kept() const { return out / "kept.jsonl"; }
    [[nodiscard]] std::filesystem::path filtered() const { return out / "filtered.jsonl"; }
    [[nodiscard]] std::filesystem::path heldout_bridged() const { return out / "heldout_bridged.jsonl"; }
    [[nodiscard]] std::filesystem::path heldout_kept() const { return out / "heldout_kept.jsonl"; }
    [[nodiscard]] std::filesystem::path bridge_stats() const { return out / "bridge_stats.json"; }
    [[nodiscard]] std::filesystem::path sft_checkpoint() const { return out / "sft.ckpt"; }
    [[nodiscard]] std::filesystem::path sft_log() const { return out / "sft_log.csv"; }
    [[nodiscard]] std::filesystem::path sft_metrics() const { return out / "sft_metrics.json"; }
    [[nodiscard]] std::filesystem::path check() const { return out / "check.json"; }
    [[nodiscard]] std::filesystem::path run_dir(const LossSpec& spec) const;
};

/// Lower-cased loss label with '+' replaced by '_'.
std::string run_slug(const LossSpec& spec);

/// Oracle or LLM editor as selected by the bridging section.
std::unique_ptr<Editor> make_editor(const RunConfig& cfg, const Vocabulary& vocab);

struct GenDataSummary {
    std::size_t n_pairs = 0;
    std::size_t n_heldout = 0;
};
GenDataSummary gen_data(const RunConfig& cfg);

struct BridgeSummary {
    BridgeStats train;
    BridgeStats heldout;
};
/// Bridges the training and held-out pairs. Throws ExternalError when an LLM
/// editor fails on every request.
BridgeSummary bridge(const RunConfig& cfg, Editor* editor = nullptr);

struct SftSummary {
    std::size_t n_parameters = 0;
    double final_loss = 0.0;
    double solve_rate = 0.0;  // greedy decoding on up to 200 held-out prompts
};
SftSummary run_sft(const RunConfig& cfg);

struct TrainSummary {
    std::filesystem::path dir;
    std::size_t steps = 0;
    double final_loss = 0.0;
};
/// On a non-finite loss or gradient the last good policy is saved as
/// policy.partial.ckpt and TrainingAborted propagates.
TrainSummary run_train(const RunConfig& cfg);

struct EvalSummary {
    std::filesystem::path dir;
    double accuracy = 0.0;
    double mean_margin = 0.0;
    double final_kl = 0.0;
};
EvalSummary run_eval(const RunConfig& cfg);

/// Eval outputs plus the edit-distance bucket summary of the step logs.
std::vector<std::filesystem::path> run_report(const RunConfig& cfg);

/// Runs every self-check suite and writes check.json.
std::vector<check::Result> run_check(const RunConfig& cfg);

}  // namespace bmc
