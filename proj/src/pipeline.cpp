#include "bmc/pipeline.hpp"

#include "bmc/dataset.hpp"
#include "bmc/error.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>

namespace bmc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void require_input(const fs::path& p, const char* producer) {
    if (!fs::exists(p)) throw DataError("missing " + p.string() + " (run `" + producer + "` first)");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

json stats_json(const BridgeStats& s) {
    return {{"n_input", s.n_input},
            {"n_bridged", s.n_bridged},
            {"n_good_enough", s.n_good_enough},
            {"n_failed", s.n_failed},
            {"mean_edit_distance_before", s.mean_edit_distance_before},
            {"mean_edit_distance_after", s.mean_edit_distance_after},
            {"n_distance_increased", s.n_distance_increased}};
}

struct LoadedModel {
    Checkpoint ckpt;
    Vocabulary vocab;
};

LoadedModel load_model(const fs::path& path) {
    Checkpoint ck = load_checkpoint(path);
    Vocabulary v = Vocabulary::from_full_list(ck.vocab, ck.stopwords);
    return {std::move(ck), std::move(v)};
}

fs::path step_checkpoint(const fs::path& dir, std::size_t step) {
    char name[48];
    std::snprintf(name, sizeof name, "step_%08zu.ckpt", step);
    return dir / "checkpoints" / name;
}

std::vector<TrainExample> load_optional_examples(const fs::path& path, const Vocabulary& vocab) {
    return fs::exists(path) ? load_examples(path, vocab) : std::vector<TrainExample>{};
}

}  // namespace

std::string run_slug(const LossSpec& spec) {
    std::string s = spec.label();
    for (char& c : s) c = c == '+' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

fs::path RunPaths::run_dir(const LossSpec& spec) const { return out / run_slug(spec); }

std::unique_ptr<Editor> make_editor(const RunConfig& cfg, const Vocabulary& vocab) {
    if (cfg.bridging.editor == "llm") return std::make_unique<LlmEditor>(llm_config_for(cfg));
    return std::make_unique<OracleEditor>(vocab, cfg.corpus.task);
}

GenDataSummary gen_data(const RunConfig& cfg) {
    const RunPaths paths{cfg.io.out};
    const Vocabulary vocab = vocab_for(cfg);
    const auto train = generate_pairs(cfg, vocab, true);
    const auto heldout = generate_pairs(cfg, vocab, false);
    save_pairs(paths.pairs(), train);
    save_pairs(paths.heldout(), heldout);
    return {train.size(), heldout.size()};
}

BridgeSummary bridge(const RunConfig& cfg, Editor* editor) {
    const RunPaths paths{cfg.io.out};
    require_input(paths.pairs(), "gen-data");
    require_input(paths.heldout(), "gen-data");
    const Vocabulary vocab = vocab_for(cfg);
    std::unique_ptr<Editor> owned;
    if (!editor) {
        owned = make_editor(cfg, vocab);
        editor = owned.get();
    }
    const bool remote = cfg.bridging.editor == "llm";
    auto run = [&](const fs::path& input) {
        BridgeResult r = bridge_dataset(load_pairs(input, vocab), *editor, vocab, cfg.bridging.max_in_flight);
        if (remote && r.stats.n_input > 0 && r.stats.n_failed == r.stats.n_input) {
            const std::string why = r.filtered.empty() ? std::string() : ": " + r.filtered.front().reason;
            throw ExternalError("editor failed on every pair of " + input.string() + why);
        }
        return r;
    };
    const BridgeResult train = run(paths.pairs());
    const BridgeResult held = run(paths.heldout());

    save_bridged(paths.bridged(), train.bridged);
    save_pairs(paths.kept(), train.kept);
    std::vector<json> filtered;
    for (const auto& f : train.filtered) filtered.push_back(filtered_to_json(f));
    write_jsonl(paths.filtered(), filtered);
    save_bridged(paths.heldout_bridged(), held.bridged);
    save_pairs(paths.heldout_kept(), held.kept);
    write_text(paths.bridge_stats(),
               json{{"editor", editor->id()},
                    {"template", editor->template_id()},
                    {"train", stats_json(train.stats)},
                    {"heldout", stats_json(held.stats)}}
                       .dump(2) +
                   "\n");
    return {train.stats, held.stats};
}

SftSummary run_sft(const RunConfig& cfg) {
    const RunPaths paths{cfg.io.out};
    require_input(paths.pairs(), "gen-data");
    const Vocabulary vocab = vocab_for(cfg);
    const auto pairs = load_pairs(paths.pairs(), vocab);
    Policy policy = init_policy(model_config_for(cfg, vocab.size()));
    const SftReport rep = sft_train(policy, sft_examples(pairs, vocab, derive_seed(cfg.seed, "sft_data")), sft_config_for(cfg));

    SftSummary s;
    s.n_parameters = policy.num_parameters();
    s.final_loss = rep.step_loss.empty() ? 0.0 : rep.step_loss.back();
    if (fs::exists(paths.heldout())) {
        auto held = load_pairs(paths.heldout(), vocab);
        held.resize(std::min<std::size_t>(held.size(), 200));
        if (!held.empty()) s.solve_rate = solve_rate(policy, held, vocab);
    }

    save_checkpoint(paths.sft_checkpoint(), {policy, vocab.tokens(), vocab.stopwords(), {{"stage", "sft"}}});
    std::string log = "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < rep.step_loss.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, rep.step_loss[i]);
        log += buf;
    }
    write_text(paths.sft_log(), log);
    write_text(paths.sft_metrics(), json{{"n_parameters", s.n_parameters},
                                         {"final_loss", s.final_loss},
                                         {"heldout_solve_rate", s.solve_rate}}
                                            .dump(2) +
                                        "\n");
    return s;
}

TrainSummary run_train(const RunConfig& cfg) {
    const RunPaths paths{cfg.io.out};
    require_input(paths.sft_checkpoint(), "sft");
    const TrainConfig tc = train_config_for(cfg);
    const fs::path data_path =
        cfg.io.train_data ? *cfg.io.train_data : (tc.loss.needs_masks() ? paths.bridged() : paths.kept());
    require_input(data_path, "bridge");

    const LoadedModel sft = load_model(paths.sft_checkpoint());
    const auto data = load_examples(data_path, sft.vocab);
    if (data.empty()) throw DataError(data_path.string() + " holds no training pairs");
    const fs::path dir = paths.run_dir(tc.loss);
    fs::create_directories(dir);

    TrainResult res;
    try {
        res = train(sft.ckpt.policy, snapshot(sft.ckpt.policy), data, tc);
    } catch (const TrainingAborted& e) {
        save_checkpoint(dir / "policy.partial.ckpt", {e.last_good(), sft.ckpt.vocab, sft.ckpt.stopwords,
                                                      {{"stage", "train"}, {"aborted_at_step", e.step()}}});
        throw;
    }

    fs::remove_all(dir / "checkpoints");
    fs::remove(dir / "policy.partial.ckpt");
    const json extra = {{"stage", "train"}, {"loss", run_slug(tc.loss)}, {"steps", res.logs.size()}};
    save_checkpoint(dir / "policy.ckpt", {res.policy, sft.ckpt.vocab, sft.ckpt.stopwords, extra});
    for (const auto& c : res.checkpoints) {
        if (c.step == 0) continue;
        save_checkpoint(step_checkpoint(dir, c.step), {c.policy, sft.ckpt.vocab, sft.ckpt.stopwords, {{"step", c.step}}});
    }
    write_step_logs(dir / "steps.csv", res.logs);
    json resolved = to_json(cfg);
    resolved["train"]["seed"] = tc.seed;
    resolved["train_data"] = data_path.string();
    write_text(dir / "config.json", resolved.dump(2) + "\n");
    return {dir, res.logs.size(), res.logs.empty() ? 0.0 : res.logs.back().loss};
}

EvalSummary run_eval(const RunConfig& cfg) {
    const RunPaths paths{cfg.io.out};
    const LossSpec& spec = cfg.train.loss;
    const fs::path dir = paths.run_dir(spec);
    require_input(paths.sft_checkpoint(), "sft");
    require_input(dir / "policy.ckpt", "train");
    require_input(paths.heldout_kept(), "bridge");

    const LoadedModel sft = load_model(paths.sft_checkpoint());
    const PolicySnapshot ref = snapshot(sft.ckpt.policy);
    const Policy policy = load_checkpoint(dir / "policy.ckpt").policy;
    const auto held_kept = load_examples(paths.heldout_kept(), sft.vocab);
    const auto held_bridged = load_optional_examples(paths.heldout_bridged(), sft.vocab);
    if (held_kept.empty()) throw DataError(paths.heldout_kept().string() + " holds no pairs");

    std::vector<PolicyCheckpoint> checkpoints{{0, sft.ckpt.policy}};
    if (fs::exists(dir / "checkpoints")) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir / "checkpoints")) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const Checkpoint ck = load_checkpoint(f);
            checkpoints.push_back({ck.extra.value("step", std::size_t{0}), ck.policy});
        }
    }
    if (checkpoints.size() == 1) checkpoints.push_back({1, policy});

    ReportData data;
    data.seq = seq_reward_report(policy, ref, held_kept, spec.beta);
    data.kl = kl_track(checkpoints, ref, held_kept);
    const std::vector<TrainExample>& traced = held_bridged.empty() ? held_kept : held_bridged;
    for (std::size_t i = 0; i < std::min(cfg.analysis.n_token_traces, traced.size()); ++i)
        data.traces.push_back(token_rewards(policy, ref, traced[i], spec.beta));
    if (!held_bridged.empty()) data.span = span_logp_profile(policy, held_bridged);

    emit_report(dir / "eval", data);
    return {dir / "eval", data.seq->accuracy, data.seq->mean_margin, data.kl.back().kl};
}

std::vector<fs::path> run_report(const RunConfig& cfg) {
    const RunPaths paths{cfg.io.out};
    const fs::path dir = paths.run_dir(cfg.train.loss);
    require_input(dir / "eval" / "manifest.json", "eval");
    require_input(dir / "steps.csv", "train");
    ReportData data = load_report(dir / "eval");
    const auto logs = read_step_logs(dir / "steps.csv");
    if (logs.size() >= cfg.analysis.n_buckets) data.buckets = grad_norm_buckets(logs, cfg.analysis.n_buckets);
    return emit_report(dir / "report", data);
}

std::vector<check::Result> run_check(const RunConfig& cfg) {
    const auto results = check::run_all();
    json j = {{"passed", std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; })},
              {"suites", json::array()}};
    for (const auto& r : results) j["suites"].push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    write_text(RunPaths{cfg.io.out}.check(), j.dump(2) + "\n");
    return results;
}

}  // namespace bmc
