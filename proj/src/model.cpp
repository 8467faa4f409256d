#include "bmc/model.hpp"

#include "bmc/error.hpp"
#include "bmc/optim.hpp"
#include "bmc/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bmc {

namespace {

constexpr std::size_t kPerLayer = 16;
constexpr char kMagic[] = "PBMCKPT1";

// Offsets inside a block's parameter group.
enum LayerParam : std::size_t {
    kLn1G, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo, kLn2G, kLn2B, kW1, kB1, kW2, kB2,
};

std::size_t layer_base(std::size_t layer) { return 2 + layer * kPerLayer; }

// Log-softmax rows [first_row, n) of the network applied to `ids`.
ad::Var forward_rows(const ModelConfig& cfg, std::span<const ad::Var> p, std::span<const int> ids, std::size_t first_row) {
    using namespace ad;
    const std::size_t n = ids.size();
    const std::size_t d = cfg.d_model;
    const std::size_t dh = d / cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Var h = embedding(p[0], ids) + slice_rows(p[1], 0, n);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::size_t b = layer_base(l);
        Var a = layer_norm(h, p[b + kLn1G], p[b + kLn1B]);
        Var q = add_row(matmul(a, p[b + kWq]), p[b + kBq]);
        Var k = add_row(matmul(a, p[b + kWk]), p[b + kBk]);
        Var v = add_row(matmul(a, p[b + kWv]), p[b + kBv]);
        std::vector<Var> heads;
        heads.reserve(cfg.n_heads);
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            Var qh = slice_cols(q, hd * dh, dh);
            Var kh = slice_cols(k, hd * dh, dh);
            Var vh = slice_cols(v, hd * dh, dh);
            heads.push_back(matmul(causal_softmax(matmul_nt(qh, kh), att_scale), vh));
        }
        Var attn = cfg.n_heads == 1 ? heads.front() : concat_cols(heads);
        h = h + add_row(matmul(attn, p[b + kWo]), p[b + kBo]);
        Var m = layer_norm(h, p[b + kLn2G], p[b + kLn2B]);
        Var ff = relu(add_row(matmul(m, p[b + kW1]), p[b + kB1]));
        h = h + add_row(matmul(ff, p[b + kW2]), p[b + kB2]);
    }
    const std::size_t fb = layer_base(cfg.n_layers);
    Var top = slice_rows(h, first_row, n - first_row);
    top = layer_norm(top, p[fb], p[fb + 1]);
    Var logits = add_row(matmul(top, p[fb + 2]), p[fb + 3]);
    return log_softmax(logits);
}

std::vector<int> input_ids(const TokenSeq& prompt, const TokenSeq& response) {
    std::vector<int> ids;
    ids.reserve(prompt.size() + response.size());
    ids.push_back(Vocabulary::kBos);
    ids.insert(ids.end(), prompt.ids.begin(), prompt.ids.end());
    ids.insert(ids.end(), response.ids.begin(), response.ids.end() - 1);
    return ids;
}

void check_lengths(const ModelConfig& cfg, const TokenSeq& prompt, const TokenSeq& response) {
    if (response.empty()) throw DataError("cannot score an empty response");
    const std::size_t total = 1 + prompt.size() + response.size();
    if (total > cfg.max_seq_len)
        throw DataError("sequence length " + std::to_string(total) + " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    for (const TokenSeq* s : {&prompt, &response})
        for (int id : s->ids)
            if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) throw DataError("token id outside the model vocabulary");
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 5) throw ConfigError("vocab_size must cover the special tokens plus content");
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || max_seq_len < 2)
        throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t d = c.d_model, v = c.vocab_size;
    return v * d + c.max_seq_len * d + c.n_layers * (12 * d * d + 13 * d) + 2 * d + d * v + v;
}

std::size_t Policy::num_parameters() const {
    std::size_t n = 0;
    for (const auto& t : params) n += t.size();
    return n;
}

Policy init_policy(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Policy pol;
    pol.config = cfg;
    const std::size_t d = cfg.d_model, f = cfg.d_ff(), v = cfg.vocab_size;
    auto uniform = [&](std::vector<std::size_t> shape, double a) {
        ad::Tensor t = ad::Tensor::zeros(std::move(shape));
        for (double& x : t.data) x = rng.uniform(-a, a);
        return t;
    };
    auto add = [&](std::string name, ad::Tensor t) {
        pol.names.push_back(std::move(name));
        pol.params.push_back(std::move(t));
    };
    const double emb = 1.0 / std::sqrt(static_cast<double>(d));
    const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    add("tok_emb", uniform({v, d}, emb));
    add("pos_emb", uniform({cfg.max_seq_len, d}, emb));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "block" + std::to_string(l) + ".";
        add(pre + "ln1.gain", ad::Tensor::filled({d}, 1.0));
        add(pre + "ln1.bias", ad::Tensor::zeros({d}));
        for (const char* w : {"q", "k", "v"}) {
            add(pre + "attn.w" + w, uniform({d, d}, emb));
            add(pre + "attn.b" + w, ad::Tensor::zeros({d}));
        }
        add(pre + "attn.wo", uniform({d, d}, emb * resid));
        add(pre + "attn.bo", ad::Tensor::zeros({d}));
        add(pre + "ln2.gain", ad::Tensor::filled({d}, 1.0));
        add(pre + "ln2.bias", ad::Tensor::zeros({d}));
        add(pre + "mlp.w1", uniform({d, f}, emb));
        add(pre + "mlp.b1", ad::Tensor::zeros({f}));
        add(pre + "mlp.w2", uniform({f, d}, resid / std::sqrt(static_cast<double>(f))));
        add(pre + "mlp.b2", ad::Tensor::zeros({d}));
    }
    add("ln_f.gain", ad::Tensor::filled({d}, 1.0));
    add("ln_f.bias", ad::Tensor::zeros({d}));
    add("head.w", uniform({d, v}, emb));
    add("head.b", ad::Tensor::zeros({v}));
    return pol;
}

std::uint64_t fingerprint(const Policy& policy) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* data, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& t : policy.params) {
        for (std::size_t s : t.shape) mix(&s, sizeof s);
        mix(t.data.data(), t.data.size() * sizeof(double));
    }
    return h;
}

std::vector<ad::Var> bind(ad::Tape& tape, const Policy& policy, bool requires_grad) {
    std::vector<ad::Var> vars;
    vars.reserve(policy.params.size());
    for (const auto& t : policy.params) vars.push_back(tape.leaf(t, requires_grad));
    return vars;
}

ResponseScores score_response(ad::Tape& tape, const ModelConfig& cfg, std::span<const ad::Var> params,
                              const TokenSeq& prompt, const TokenSeq& response) {
    (void)tape;
    check_lengths(cfg, prompt, response);
    const std::vector<int> ids = input_ids(prompt, response);
    ad::Var dist = forward_rows(cfg, params, ids, prompt.size());
    ad::Var lp = ad::gather(dist, response.ids);
    return {lp, dist};
}

std::vector<double> logprobs(const Policy& policy, const TokenSeq& prompt, const TokenSeq& response) {
    ad::Tape tape;
    auto params = bind(tape, policy, false);
    return score_response(tape, policy.config, params, prompt, response).token_logp.value().data;
}

ad::Tensor log_distributions(const Policy& policy, const TokenSeq& prompt, const TokenSeq& response) {
    ad::Tape tape;
    auto params = bind(tape, policy, false);
    return score_response(tape, policy.config, params, prompt, response).log_dist.value();
}

TokenSeq with_eos(const TokenSeq& response) {
    TokenSeq out = response;
    out.ids.push_back(Vocabulary::kEos);
    out.surfaces.emplace_back("<eos>");
    return out;
}

TokenSeq greedy_decode(const Policy& policy, const TokenSeq& prompt, const Vocabulary& vocab, std::size_t max_new_tokens) {
    TokenSeq out;
    std::vector<int> ids{Vocabulary::kBos};
    ids.insert(ids.end(), prompt.ids.begin(), prompt.ids.end());
    for (std::size_t step = 0; step < max_new_tokens && ids.size() < policy.config.max_seq_len; ++step) {
        ad::Tape tape;
        auto params = bind(tape, policy, false);
        const ad::Tensor& row = forward_rows(policy.config, params, ids, ids.size() - 1).value();
        int best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row.data[c] > row.data[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        if (best == Vocabulary::kEos) break;
        out.ids.push_back(best);
        out.surfaces.push_back(vocab.token(best));
        ids.push_back(best);
    }
    return out;
}

SftReport sft_train(Policy& policy, const std::vector<SftExample>& data, const SftConfig& cfg) {
    SftReport report;
    if (cfg.epochs == 0 || data.empty()) return report;
    if (cfg.batch_size == 0) throw ConfigError("sft batch_size must be positive");
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
        double epoch_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            ad::Tape tape;
            auto params = bind(tape, policy, true);
            std::vector<ad::Var> nll;
            std::size_t n_tokens = 0;
            const std::size_t end = std::min(order.size(), (s + 1) * cfg.batch_size);
            for (std::size_t j = s * cfg.batch_size; j < end; ++j) {
                const SftExample& ex = data[order[j]];
                const TokenSeq target = with_eos(ex.target);
                nll.push_back(ad::sum(score_response(tape, policy.config, params, ex.prompt, target).token_logp));
                n_tokens += target.size();
            }
            ad::Var loss = ad::scale(ad::sum(ad::stack(nll)), -1.0 / static_cast<double>(n_tokens));
            if (!std::isfinite(loss.item())) throw NumericError("non-finite SFT loss at step " + std::to_string(step));
            const std::vector<ad::Tensor> grads = ad::grad(loss, params);
            adam_step(policy.params, grads, adam, cosine_lr(step, total, warmup, cfg.lr));
            report.step_loss.push_back(loss.item());
            epoch_sum += loss.item();
        }
        report.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    }
    return report;
}

double solve_rate(const Policy& policy, const std::vector<PreferencePair>& pairs, const Vocabulary& vocab) {
    if (pairs.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& pair : pairs) {
        auto it = pair.meta.find("task");
        const std::string task = it == pair.meta.end() ? "sort" : it->second;
        const TokenSeq out = greedy_decode(policy, pair.prompt, vocab, 48);
        if (passes_oracle(task, pair.prompt, out)) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

// ---- checkpoints ----------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    const Policy& p = ckpt.policy;
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["config"] = {
        {"vocab_size", p.config.vocab_size}, {"d_model", p.config.d_model},     {"n_layers", p.config.n_layers},
        {"n_heads", p.config.n_heads},       {"max_seq_len", p.config.max_seq_len}, {"seed", p.config.seed},
    };
    header["vocab"] = ckpt.vocab;
    header["stopwords"] = ckpt.stopwords;
    nlohmann::json table = nlohmann::json::array();
    for (std::size_t i = 0; i < p.params.size(); ++i) table.push_back({{"name", p.names[i]}, {"shape", p.params[i].shape}});
    header["tensors"] = table;
    header["extra"] = ckpt.extra;
    const std::string hs = header.dump();
    std::string out(kMagic, 8);
    const std::uint64_t len = hs.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out += hs;
    for (const auto& t : p.params) out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 8, kMagic) != 0) throw DataError("not a checkpoint file (bad magic)");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, sizeof len);
    if (16 + len > bytes.size()) throw DataError("truncated checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (!header.contains("version")) throw DataError("checkpoint header lacks a version field");
    if (header["version"].get<int>() != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + header["version"].dump());
    Checkpoint ck;
    const auto& c = header.at("config");
    ck.policy.config = ModelConfig{c.at("vocab_size"), c.at("d_model"), c.at("n_layers"),
                                   c.at("n_heads"),    c.at("max_seq_len"), c.at("seed")};
    ck.vocab = header.at("vocab").get<std::vector<std::string>>();
    ck.stopwords = header.at("stopwords").get<std::set<std::string>>();
    ck.extra = header.value("extra", nlohmann::json::object());
    std::size_t off = 16 + len;
    for (const auto& entry : header.at("tensors")) {
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        ad::Tensor t = ad::Tensor::zeros(shape);
        const std::size_t nbytes = t.data.size() * sizeof(double);
        if (off + nbytes > bytes.size()) throw DataError("truncated checkpoint tensor data");
        std::memcpy(t.data.data(), bytes.data() + off, nbytes);
        off += nbytes;
        ck.policy.names.push_back(entry.at("name"));
        ck.policy.params.push_back(std::move(t));
    }
    if (off != bytes.size()) throw DataError("trailing bytes after checkpoint tensors");
    const Policy ref = init_policy(ck.policy.config);
    if (ref.names != ck.policy.names) throw DataError("checkpoint tensor table does not match its config");
    for (std::size_t i = 0; i < ref.params.size(); ++i)
        if (ref.params[i].shape != ck.policy.params[i].shape) throw DataError("checkpoint tensor shape mismatch: " + ref.names[i]);
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace bmc
