#include "bmc/trainer.hpp"

#include "bmc/error.hpp"
#include "bmc/optim.hpp"
#include "bmc/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace bmc {

using nlohmann::json;

void TrainConfig::validate() const {
    loss.validate();
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite non-negative number");
    if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
    if (!(warmup_frac >= 0.0 && warmup_frac < 0.5)) throw ConfigError("train.warmup_frac must lie in [0, 0.5)");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
}

json to_json(const TrainConfig& c) {
    return {{"loss", to_json(c.loss)},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"warmup_frac", c.warmup_frac},
            {"seed", c.seed},
            {"grad_clip", c.grad_clip ? json(*c.grad_clip) : json(nullptr)},
            {"single_thread", c.single_thread},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
    static const std::set<std::string> known = {"loss",     "lr",        "batch_size",    "epochs",          "warmup_frac",
                                                "seed",     "grad_clip", "single_thread", "checkpoint_every"};
    if (!j.is_object()) throw ConfigError("train section must be an object");
    for (const auto& [k, _] : j.items())
        if (!known.contains(k)) throw ConfigError("unknown train key '" + k + "'");
    TrainConfig c;
    try {
        if (j.contains("loss")) c.loss = loss_spec_from_json(j.at("loss"));
        c.lr = j.value("lr", c.lr);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
        c.seed = j.value("seed", c.seed);
        if (j.contains("grad_clip") && !j.at("grad_clip").is_null()) c.grad_clip = j.at("grad_clip").get<double>();
        c.single_thread = j.value("single_thread", c.single_thread);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid train section: ") + e.what());
    }
    c.validate();
    return c;
}

namespace {

struct RefCache {
    std::vector<double> chosen_logp, rejected_logp;
    std::optional<ad::Tensor> chosen_dist, rejected_dist;
};

void check_data(const std::vector<TrainExample>& data, const LossSpec& spec) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        if (ex.prompt.empty() || ex.chosen.empty() || ex.rejected.empty())
            throw DataError("training example " + std::to_string(i) + " has an empty sequence");
        if (spec.needs_masks() && !ex.masks)
            throw DataError(spec.label() + " requires diff masks; training example " + std::to_string(i) +
                            " is missing field 'diff_chosen' (train on bridged data)");
    }
}

}  // namespace

TrainResult train(const Policy& policy, const std::vector<TrainExample>& data, const TrainConfig& cfg) {
    return train(policy, snapshot(policy), data, cfg);
}

TrainResult train(const Policy& policy, const PolicySnapshot& ref, const std::vector<TrainExample>& data,
                  const TrainConfig& cfg) {
    cfg.validate();
    check_data(data, cfg.loss);
    TrainResult result{policy, {}, {}, ref.fingerprint()};
    result.checkpoints.push_back({0, policy});
    if (cfg.epochs == 0 || data.empty()) return result;

    const bool dists = cfg.loss.needs_distributions();
    std::vector<RefCache> cache(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        cache[i].chosen_logp = logprobs_ref(ref, ex.prompt, ex.chosen);
        cache[i].rejected_logp = logprobs_ref(ref, ex.prompt, ex.rejected);
        if (dists) {
            cache[i].chosen_dist = log_distributions(ref.policy(), ex.prompt, ex.chosen);
            cache[i].rejected_dist = log_distributions(ref.policy(), ex.prompt, ex.rejected);
        }
    }

    Policy& pol = result.policy;
    const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = steps_per_epoch * cfg.epochs;
    const auto warmup = static_cast<std::size_t>(cfg.warmup_frac * static_cast<double>(total));
    Rng rng(cfg.seed);
    AdamState adam;
    std::vector<std::size_t> order(data.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order.begin(), order.end());
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            ad::Tape tape;
            const auto params = bind(tape, pol, true);
            std::vector<PairTerms> batch;
            double ed_sum = 0.0;
            const std::size_t begin = s * cfg.batch_size;
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            for (std::size_t j = begin; j < end; ++j) {
                const std::size_t i = order[j];
                const TrainExample& ex = data[i];
                const ResponseScores w = score_response(tape, pol.config, params, ex.prompt, ex.chosen);
                const ResponseScores l = score_response(tape, pol.config, params, ex.prompt, ex.rejected);
                PairTerms t;
                t.chosen_logp = w.token_logp;
                t.rejected_logp = l.token_logp;
                t.chosen_ref = cache[i].chosen_logp;
                t.rejected_ref = cache[i].rejected_logp;
                if (ex.masks) {
                    t.chosen_mask = ex.masks->chosen;
                    t.rejected_mask = ex.masks->rejected;
                }
                if (dists) {
                    t.chosen_logdist = w.log_dist;
                    t.rejected_logdist = l.log_dist;
                    t.chosen_ref_logdist = cache[i].chosen_dist;
                    t.rejected_ref_logdist = cache[i].rejected_dist;
                }
                batch.push_back(std::move(t));
                ed_sum += static_cast<double>(ex.edit_distance);
            }
            const ad::Var loss = batch_loss(tape, cfg.loss, batch);
            if (!std::isfinite(loss.item()))
                throw TrainingAborted("non-finite loss at step " + std::to_string(step), pol, step);
            std::vector<ad::Tensor> grads = ad::grad(loss, params);
            const double norm = cfg.grad_clip ? clip_by_global_norm(grads, *cfg.grad_clip) : global_norm(grads);
            if (!std::isfinite(norm)) throw TrainingAborted("non-finite gradient at step " + std::to_string(step), pol, step);
            const double lr = cosine_lr(step, total, warmup, cfg.lr);
            adam_step(pol.params, grads, adam, lr);
            result.logs.push_back({step, loss.item(), norm, lr, ed_sum / static_cast<double>(end - begin)});
            if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total)
                result.checkpoints.push_back({step + 1, pol});
        }
    }
    result.checkpoints.push_back({total, pol});
    if (ref.fingerprint() != result.ref_fingerprint) throw NumericError("reference model changed during training");
    return result;
}

void write_step_logs(const std::filesystem::path& path, const std::vector<StepLog>& logs) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "step,loss,grad_norm,lr,mean_edit_distance\n";
    char buf[160];
    for (const auto& l : logs) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", l.step, l.loss, l.grad_norm, l.lr, l.mean_edit_distance);
        out << buf;
    }
}

std::vector<StepLog> read_step_logs(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "step,loss,grad_norm,lr,mean_edit_distance")
        throw DataError(path.string() + ": unexpected step-log header");
    std::vector<StepLog> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        StepLog l;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &l.step, &l.loss, &l.grad_norm, &l.lr, &l.mean_edit_distance) != 5)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed step log");
        out.push_back(l);
    }
    return out;
}

}  // namespace bmc
