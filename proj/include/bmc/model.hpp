#pragma once

// Tiny causal language model: pre-norm transformer with learned positional
// embeddings and an untied output head.
//
// Parameter count, with d = d_model, f = 4d, L = max_seq_len, V = vocab_size:
//   V·d + L·d                      token and position embeddings
// + n_layers · (12d² + 13d)        per block: 2 layer norms (4d), Q/K/V/O
//                                  projections (4d² + 4d), MLP (8d² + 5d)
// + 2d                             final layer norm
// + d·V + V                        output head

#include "bmc/autodiff.hpp"
#include "bmc/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace bmc {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t max_seq_len = 128;
    std::uint64_t seed = 0;

    void validate() const;
    [[nodiscard]] std::size_t d_ff() const { return 4 * d_model; }
};

std::size_t parameter_count(const ModelConfig& cfg);

struct Policy {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<ad::Tensor> params;

    [[nodiscard]] std::size_t num_parameters() const;
};

/// Deterministic scaled-uniform initialization from config.seed.
Policy init_policy(const ModelConfig& cfg);

/// FNV-1a over shapes and raw parameter bytes.
std::uint64_t fingerprint(const Policy& policy);

/// Immutable deep copy of a policy; serves as the reference model.
class PolicySnapshot {
public:
    explicit PolicySnapshot(const Policy& policy) : policy_(std::make_shared<const Policy>(policy)) {}
    [[nodiscard]] const Policy& policy() const { return *policy_; }
    [[nodiscard]] std::uint64_t fingerprint() const { return bmc::fingerprint(*policy_); }

private:
    std::shared_ptr<const Policy> policy_;
};

inline PolicySnapshot snapshot(const Policy& policy) { return PolicySnapshot(policy); }

/// Parameters placed on a tape, in Policy::params order.
std::vector<ad::Var> bind(ad::Tape& tape, const Policy& policy, bool requires_grad);

struct ResponseScores {
    ad::Var token_logp;  // [R]: log π(y_t | y_<t, x)
    ad::Var log_dist;    // [R, V]: full next-token log distribution at each response position
};

/// Teacher-forced forward over BOS + prompt + response. Throws DataError when
/// the response is empty or the total length exceeds max_seq_len.
ResponseScores score_response(ad::Tape& tape, const ModelConfig& cfg, std::span<const ad::Var> params,
                              const TokenSeq& prompt, const TokenSeq& response);

/// Per-token log-probabilities without recording gradients.
std::vector<double> logprobs(const Policy& policy, const TokenSeq& prompt, const TokenSeq& response);
inline std::vector<double> logprobs_ref(const PolicySnapshot& ref, const TokenSeq& prompt, const TokenSeq& response) {
    return logprobs(ref.policy(), prompt, response);
}
/// Full [R, V] log distributions without recording gradients.
ad::Tensor log_distributions(const Policy& policy, const TokenSeq& prompt, const TokenSeq& response);

/// Greedy decoding until EOS or max_new_tokens.
TokenSeq greedy_decode(const Policy& policy, const TokenSeq& prompt, const Vocabulary& vocab,
                       std::size_t max_new_tokens);

/// Response followed by EOS, as used for supervised targets.
TokenSeq with_eos(const TokenSeq& response);

// ---- supervised fine-tuning -----------------------------------------------

struct SftConfig {
    std::size_t epochs = 3;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    double warmup_frac = 0.1;
    std::uint64_t seed = 0;
};

struct SftReport {
    std::vector<double> step_loss;   // mean token cross-entropy per step
    std::vector<double> epoch_loss;  // mean of step losses per epoch
};

/// Next-token cross-entropy on targets (EOS appended); prompt tokens carry no loss.
SftReport sft_train(Policy& policy, const std::vector<SftExample>& data, const SftConfig& cfg);

/// Fraction of prompts whose greedy completion passes the task oracle.
double solve_rate(const Policy& policy, const std::vector<PreferencePair>& pairs, const Vocabulary& vocab);

// ---- checkpoints ----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    Policy policy;
    std::vector<std::string> vocab;  // full token list, specials first
    std::set<std::string> stopwords;
    nlohmann::json extra = nlohmann::json::object();
};

/// Layout: 8-byte magic "PBMCKPT1", u64 little-endian header length, JSON
/// header (version, config, vocab, stopwords, tensor table, extra), then every
/// tensor as little-endian float64 in table order.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bmc
