#pragma once

// Offline preference-optimization loop: seeded mini-batches, Adam with a
// warmup + cosine schedule, per-step logging.

#include "bmc/dataset.hpp"
#include "bmc/error.hpp"
#include "bmc/losses.hpp"
#include "bmc/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

namespace bmc {

struct TrainConfig {
    LossSpec loss;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    double warmup_frac = 0.1;
    std::uint64_t seed = 0;
    std::optional<double> grad_clip;
    bool single_thread = true;
    /// Keep a policy copy every this many steps (0 = only start and end).
    std::size_t checkpoint_every = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Unknown keys are rejected; "loss" is parsed with loss_spec_from_json.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepLog {
    std::size_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;  // before clipping
    double lr = 0.0;
    double mean_edit_distance = 0.0;
};

struct PolicyCheckpoint {
    std::size_t step;  // number of updates applied
    Policy policy;
};

struct TrainResult {
    Policy policy;
    std::vector<StepLog> logs;
    /// Step 0, every checkpoint_every steps, and the final step.
    std::vector<PolicyCheckpoint> checkpoints;
    std::uint64_t ref_fingerprint = 0;
};

/// Thrown on a non-finite loss or gradient; carries the last finite policy.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, Policy last_good, std::size_t step)
        : NumericError(what), last_good_(std::move(last_good)), step_(step) {}
    [[nodiscard]] const Policy& last_good() const { return last_good_; }
    [[nodiscard]] std::size_t step() const { return step_; }

private:
    Policy last_good_;
    std::size_t step_;
};

/// Trains a copy of `policy` against a reference snapshot of it taken before
/// step 0. Throws DataError when the objective needs masks the data lacks.
TrainResult train(const Policy& policy, const std::vector<TrainExample>& data, const TrainConfig& cfg);

/// Same, with an explicit reference model.
TrainResult train(const Policy& policy, const PolicySnapshot& ref, const std::vector<TrainExample>& data,
                  const TrainConfig& cfg);

/// Header: step,loss,grad_norm,lr,mean_edit_distance. Values use %.17g.
void write_step_logs(const std::filesystem::path& path, const std::vector<StepLog>& logs);
std::vector<StepLog> read_step_logs(const std::filesystem::path& path);

}  // namespace bmc
