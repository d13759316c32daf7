#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfz/config.hpp"
#include "hfz/dataset.hpp"
#include "hfz/embedding.hpp"
#include "hfz/error.hpp"
#include "hfz/flat_params.hpp"
#include "hfz/hypernet.hpp"
#include "hfz/idx.hpp"
#include "hfz/mlp.hpp"
#include "hfz/partition.hpp"
#include "hfz/rng.hpp"

namespace hfz {

/// One client's materialized data. Participating clients carry a train/test
/// split; non-participating clients carry their whole share in `test` and an
/// empty train set (they never train).
struct ClientData {
    int id = 0;
    Dataset train;
    Dataset test;
};

struct FederatedData {
    Dataset global_test;
    std::vector<ClientData> participating;
    std::vector<ClientData> non_participating;
};

inline Dataset make_dataset(const FLConfig& cfg) {
    if (cfg.dataset == "synthetic")
        return synth_shifted(cfg.synth_classes, cfg.synth_per_class, cfg.synth_dim,
                             cfg.synth_spread, cfg.seed, cfg.synth_noise_ramp);
    return load_idx(cfg.idx_images, cfg.idx_labels);
}

/// Materializes client datasets from a partition of `main`. `holdout` is the
/// pre-partition i.i.d. split used as the global test set.
inline FederatedData build_federated_data(const FLConfig& cfg, const Dataset& main,
                                          const Dataset& holdout, const Partition& part) {
    if (part.n_participating != cfg.n_participating ||
        part.m_nonparticipating != cfg.m_nonparticipating)
        throw ConfigError("partition was built for " + std::to_string(part.n_participating) + "+" +
                          std::to_string(part.m_nonparticipating) + " clients, config wants " +
                          std::to_string(cfg.n_participating) + "+" +
                          std::to_string(cfg.m_nonparticipating));
    part.validate(main.size());
    FederatedData fd;
    fd.global_test = holdout;
    for (int i = 0; i < cfg.n_participating; ++i) {
        const auto& idx = part.client_indices[static_cast<std::size_t>(i)];
        auto [tr, te] = split_client(idx, cfg.test_fraction, cfg.seed,
                                     static_cast<std::uint32_t>(i));
        fd.participating.push_back({i, select(main, tr), select(main, te)});
    }
    for (int j = 0; j < cfg.m_nonparticipating; ++j) {
        const int id = cfg.n_participating + j;
        const auto& idx = part.client_indices[static_cast<std::size_t>(id)];
        Dataset empty;
        empty.features = Tensor({0, main.feature_dim()});
        empty.num_classes = main.num_classes;
        fd.non_participating.push_back({id, std::move(empty), select(main, idx)});
    }
    return fd;
}

/// Server-side parameter state. Which blocks are live depends on the method:
/// hyperfedzero holds theta_f/theta_noisy/theta_h, opt1 holds
/// theta_f/theta_noisy/theta_c, fedavg and fedavg_ft hold theta_c, and local
/// holds one theta_c per participating client (never aggregated).
struct GlobalState {
    Method method = Method::fedavg;
    MlpArch classifier;
    MlpArch extractor_arch;
    ExtractorParams extractor;
    HypernetParams hypernet;
    FlatParams theta_c;
    std::vector<FlatParams> local_models;
    int round = 0;
};

/// Server init from stream (seed, {server, 0, init}). Draw order is
/// method-dependent but fixed: extractor (theta_f then theta_noisy), then
/// hypernet for hyperfedzero; extractor then theta_c for opt1; theta_c alone
/// for the classifier baselines. The local baseline initializes one theta_c
/// and copies it to every client, like a distributed global init.
inline GlobalState init_state(const FLConfig& cfg, std::int64_t feature_dim,
                              std::int64_t num_classes) {
    GlobalState g;
    g.method = parse_method(cfg.method);
    RngStream rng(cfg.seed, {kServer, 0, purpose::init});
    switch (g.method) {
        case Method::hyperfedzero:
            g.classifier = cfg.classifier_arch(feature_dim, num_classes);
            g.extractor_arch = cfg.extractor_arch(feature_dim);
            g.extractor = init_extractor(g.extractor_arch, rng);
            g.hypernet = init_hypernet(cfg.embed_dim, cfg.d_chunk, cfg.chunk_size,
                                       cfg.trunk_hidden, g.classifier, rng);
            break;
        case Method::opt1:
            g.classifier = cfg.opt1_arch(feature_dim, num_classes);
            g.extractor_arch = cfg.extractor_arch(feature_dim);
            g.extractor = init_extractor(g.extractor_arch, rng);
            g.theta_c = init_mlp(g.classifier, "theta_c", rng);
            break;
        case Method::fedavg:
        case Method::fedavg_ft:
            g.classifier = cfg.classifier_arch(feature_dim, num_classes);
            g.theta_c = init_mlp(g.classifier, "theta_c", rng);
            break;
        case Method::local:
            g.classifier = cfg.classifier_arch(feature_dim, num_classes);
            g.theta_c = init_mlp(g.classifier, "theta_c", rng);
            g.local_models.assign(static_cast<std::size_t>(cfg.n_participating), g.theta_c);
            break;
    }
    return g;
}

/// One local SGD iteration's record. loss == cross_entropy + penalty by
/// construction.
struct TrainStepReport {
    double loss = 0.0;
    double cross_entropy = 0.0;
    double penalty = 0.0;
    double grad_norm = 0.0;
};

/// A client's round output: updated copies of the method's blocks (in the
/// method's fixed block order) plus per-iteration reports.
struct LocalUpdate {
    std::vector<FlatParams> blocks;
    std::vector<TrainStepReport> reports;
    std::int64_t train_size = 0;
};

namespace detail {

/// batch_size distinct indices into [0, n): identity order when the batch
/// covers the whole set, otherwise a partial Fisher-Yates draw.
inline std::vector<std::int64_t> sample_batch(std::int64_t n, int batch_size, RngStream& rng) {
    if (n < 1) throw ContractError("cannot sample a batch from an empty train set");
    std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    if (batch_size >= n) return pool;
    for (int i = 0; i < batch_size; ++i) {
        const std::int64_t j = i + rng.uniform_int(n - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(batch_size));
    return pool;
}

inline std::pair<Tensor, std::vector<int>> make_batch(const Dataset& d,
                                                      const std::vector<std::int64_t>& idx) {
    Tensor x({static_cast<std::int64_t>(idx.size()), d.feature_dim()});
    std::vector<int> y;
    y.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::int64_t j = 0; j < d.feature_dim(); ++j)
            x.at(static_cast<std::int64_t>(i), j) = d.features.at(idx[i], j);
        y.push_back(d.labels[static_cast<std::size_t>(idx[i])]);
    }
    return {std::move(x), std::move(y)};
}

inline double l2_norm(const std::vector<const std::vector<double>*>& grads) {
    double s = 0.0;
    for (const auto* g : grads)
        for (double v : *g) s += v * v;
    return std::sqrt(s);
}

/// Plain-classifier SGD loop shared by fedavg, fedavg_ft, local, and the
/// fine-tuning adaptor. Returns the updated copy.
inline FlatParams classifier_sgd(const MlpArch& arch, FlatParams theta, const Dataset& data,
                                 int iters, double lr, int batch_size, RngStream& batch_rng,
                                 std::vector<TrainStepReport>& reports) {
    for (int k = 0; k < iters; ++k) {
        const auto idx = sample_batch(data.size(), batch_size, batch_rng);
        auto [x, y] = make_batch(data, idx);
        Tape tape;
        LiftedParams lc = lift(tape, theta);
        Var logits = mlp_forward(tape, arch, lc, tape.constant(std::move(x)));
        Var ce = tape.cross_entropy(logits, y);
        tape.backward(ce);
        const std::vector<double> g = collect_grads(tape, lc);
        TrainStepReport r;
        r.loss = r.cross_entropy = tape.value(ce).item();
        r.grad_norm = l2_norm({&g});
        reports.push_back(r);
        sgd_step(theta, g, lr);
    }
    return theta;
}

} // namespace detail

/// Alg.-style local round for the hypernetwork method: K iterations of
/// extract (train mode) -> generate per-sample classifiers -> forward ->
/// cross-entropy + balancing penalty -> one SGD step on theta_f,
/// theta_noisy, and theta_h simultaneously. Globals are copied, never
/// mutated. Streams: (seed, {client, round, batch}) for batch selection and
/// (seed, {client, round, noise}) for the noise sample.
inline LocalUpdate local_train_hyperfedzero(const ClientData& client, const GlobalState& g,
                                            const FLConfig& cfg, int round) {
    FlatParams f = g.extractor.theta_f;
    FlatParams nz = g.extractor.theta_noisy;
    FlatParams h = g.hypernet.theta_h;
    const std::uint32_t cid = static_cast<std::uint32_t>(client.id);
    RngStream batch_rng(cfg.seed, {cid, static_cast<std::uint32_t>(round), purpose::batch});
    RngStream noise_rng(cfg.seed, {cid, static_cast<std::uint32_t>(round), purpose::noise});
    LocalUpdate up;
    up.train_size = client.train.size();
    for (int k = 0; k < cfg.local_iters; ++k) {
        const auto idx = detail::sample_batch(client.train.size(), cfg.batch_size, batch_rng);
        auto [x, y] = detail::make_batch(client.train, idx);
        Tape tape;
        LiftedParams lf = lift(tape, f);
        LiftedParams ln = lift(tape, nz);
        LiftedParams lh = lift(tape, h);
        Var xv = tape.constant(std::move(x));
        Var e = extract_train(tape, g.extractor_arch, lf, ln, xv, noise_rng, cfg.scalar_noise);
        Var gen = generate_batch(tape, g.hypernet, lh, e);
        Var logits = forward_generated(tape, g.classifier, xv, gen);
        Var ce = tape.cross_entropy(logits, y);
        Var pen = balancing_penalty(tape, e, cfg.alpha, cfg.beta);
        Var loss = tape.add(ce, pen);
        tape.backward(loss);
        const std::vector<double> gf = collect_grads(tape, lf);
        const std::vector<double> gn = collect_grads(tape, ln);
        const std::vector<double> gh = collect_grads(tape, lh);
        TrainStepReport r;
        r.loss = tape.value(loss).item();
        r.cross_entropy = tape.value(ce).item();
        r.penalty = tape.value(pen).item();
        r.grad_norm = detail::l2_norm({&gf, &gn, &gh});
        up.reports.push_back(r);
        sgd_step(f, gf, cfg.lr);
        sgd_step(nz, gn, cfg.lr);
        sgd_step(h, gh, cfg.lr);
    }
    up.blocks = {std::move(f), std::move(nz), std::move(h)};
    return up;
}

/// FedAvg local round: K iterations of plain cross-entropy SGD on theta_c.
inline LocalUpdate local_train_fedavg(const ClientData& client, const FlatParams& global_theta_c,
                                      const MlpArch& arch, const FLConfig& cfg, int round) {
    RngStream batch_rng(cfg.seed, {static_cast<std::uint32_t>(client.id),
                                   static_cast<std::uint32_t>(round), purpose::batch});
    LocalUpdate up;
    up.train_size = client.train.size();
    up.blocks.push_back(detail::classifier_sgd(arch, global_theta_c, client.train, cfg.local_iters,
                                               cfg.lr, cfg.batch_size, batch_rng, up.reports));
    return up;
}

/// Input-conditioning baseline round: the shared classifier sees [x || e]
/// and theta_f/theta_noisy/theta_c train jointly under the same loss as the
/// hypernetwork method.
inline LocalUpdate local_train_opt1(const ClientData& client, const GlobalState& g,
                                    const FLConfig& cfg, int round) {
    FlatParams f = g.extractor.theta_f;
    FlatParams nz = g.extractor.theta_noisy;
    FlatParams c = g.theta_c;
    const std::uint32_t cid = static_cast<std::uint32_t>(client.id);
    RngStream batch_rng(cfg.seed, {cid, static_cast<std::uint32_t>(round), purpose::batch});
    RngStream noise_rng(cfg.seed, {cid, static_cast<std::uint32_t>(round), purpose::noise});
    LocalUpdate up;
    up.train_size = client.train.size();
    for (int k = 0; k < cfg.local_iters; ++k) {
        const auto idx = detail::sample_batch(client.train.size(), cfg.batch_size, batch_rng);
        auto [x, y] = detail::make_batch(client.train, idx);
        Tape tape;
        LiftedParams lf = lift(tape, f);
        LiftedParams ln = lift(tape, nz);
        LiftedParams lc = lift(tape, c);
        Var xv = tape.constant(std::move(x));
        Var e = extract_train(tape, g.extractor_arch, lf, ln, xv, noise_rng, cfg.scalar_noise);
        Var logits = forward_opt1(tape, g.classifier, lc, xv, e);
        Var ce = tape.cross_entropy(logits, y);
        Var pen = balancing_penalty(tape, e, cfg.alpha, cfg.beta);
        Var loss = tape.add(ce, pen);
        tape.backward(loss);
        const std::vector<double> gf = collect_grads(tape, lf);
        const std::vector<double> gn = collect_grads(tape, ln);
        const std::vector<double> gc = collect_grads(tape, lc);
        TrainStepReport r;
        r.loss = tape.value(loss).item();
        r.cross_entropy = tape.value(ce).item();
        r.penalty = tape.value(pen).item();
        r.grad_norm = detail::l2_norm({&gf, &gn, &gc});
        up.reports.push_back(r);
        sgd_step(f, gf, cfg.lr);
        sgd_step(nz, gn, cfg.lr);
        sgd_step(c, gc, cfg.lr);
    }
    up.blocks = {std::move(f), std::move(nz), std::move(c)};
    return up;
}

/// Dispatch for one client's local round.
inline LocalUpdate local_train(const ClientData& client, const GlobalState& g, const FLConfig& cfg,
                               int round) {
    switch (g.method) {
        case Method::hyperfedzero: return local_train_hyperfedzero(client, g, cfg, round);
        case Method::opt1: return local_train_opt1(client, g, cfg, round);
        case Method::fedavg:
        case Method::fedavg_ft: return local_train_fedavg(client, g.theta_c, g.classifier, cfg, round);
        case Method::local:
            return local_train_fedavg(client,
                                      g.local_models[static_cast<std::size_t>(client.id)],
                                      g.classifier, cfg, round);
    }
    throw ContractError("invalid method in local_train");
}

/// Normalized aggregation weights w_i = |D_i| / sum |D_k|.
struct AggregationWeights {
    std::vector<double> weights;

    static AggregationWeights from_sizes(const std::vector<std::int64_t>& sizes) {
        if (sizes.empty()) throw ContractError("aggregation needs >= 1 client");
        double sum = 0.0;
        for (std::int64_t s : sizes) {
            if (s < 1) throw ContractError("aggregation sizes must be positive");
            sum += static_cast<double>(s);
        }
        AggregationWeights w;
        double check = 0.0;
        for (std::int64_t s : sizes) {
            w.weights.push_back(static_cast<double>(s) / sum);
            check += w.weights.back();
        }
        if (std::fabs(check - 1.0) > 1e-12)
            throw NumericError("aggregation weights sum to " + std::to_string(check));
        return w;
    }
};

/// Server aggregation: per-block weighted average across client updates.
/// client_blocks[i] holds client i's blocks in the method's fixed order.
inline std::vector<FlatParams> aggregate(const std::vector<std::vector<FlatParams>>& client_blocks,
                                         const std::vector<std::int64_t>& sizes) {
    if (client_blocks.empty() || client_blocks.size() != sizes.size())
        throw ContractError("aggregate needs matching non-empty client lists");
    const AggregationWeights w = AggregationWeights::from_sizes(sizes);
    const std::size_t n_blocks = client_blocks.front().size();
    std::vector<FlatParams> out;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        std::vector<const FlatParams*> ptrs;
        for (const auto& cb : client_blocks) {
            if (cb.size() != n_blocks) throw ShapeError("aggregate: ragged client block lists");
            ptrs.push_back(&cb[b]);
        }
        out.push_back(weighted_average(ptrs, w.weights));
    }
    return out;
}

/// Install aggregated blocks back into the global state (method block order).
inline void install_blocks(GlobalState& g, std::vector<FlatParams> blocks) {
    switch (g.method) {
        case Method::hyperfedzero:
            if (blocks.size() != 3) throw ContractError("hyperfedzero expects 3 blocks");
            g.extractor.theta_f = std::move(blocks[0]);
            g.extractor.theta_noisy = std::move(blocks[1]);
            g.hypernet.theta_h = std::move(blocks[2]);
            break;
        case Method::opt1:
            if (blocks.size() != 3) throw ContractError("opt1 expects 3 blocks");
            g.extractor.theta_f = std::move(blocks[0]);
            g.extractor.theta_noisy = std::move(blocks[1]);
            g.theta_c = std::move(blocks[2]);
            break;
        case Method::fedavg:
        case Method::fedavg_ft:
            if (blocks.size() != 1) throw ContractError("fedavg expects 1 block");
            g.theta_c = std::move(blocks[0]);
            break;
        case Method::local:
            throw ContractError("local method never aggregates");
    }
    FlatParams::bump_writes();
}

/// Counts fedavg_ft_adapt invocations; the hypernetwork path must leave it
/// untouched.
inline std::atomic<std::uint64_t>& ft_adapt_counter() {
    static std::atomic<std::uint64_t> calls{0};
    return calls;
}

/// FedAvg-FT personalization: K further local iterations on the evaluation
/// client's train split, on a copy. Used for that baseline's pACC only.
/// Stream (seed, {client, rounds, batch}), i.e. one round past training.
inline FlatParams fedavg_ft_adapt(const FlatParams& global_theta_c, const MlpArch& arch,
                                  const ClientData& client, const FLConfig& cfg) {
    ++ft_adapt_counter();
    RngStream batch_rng(cfg.seed, {static_cast<std::uint32_t>(client.id),
                                   static_cast<std::uint32_t>(cfg.rounds), purpose::batch});
    std::vector<TrainStepReport> reports;
    return detail::classifier_sgd(arch, global_theta_c, client.train, cfg.local_iters, cfg.lr,
                                  cfg.batch_size, batch_rng, reports);
}

// ---- checkpointing ----

namespace detail {

inline nlohmann::json block_to_json(const FlatParams& p) {
    nlohmann::json j;
    j["name"] = p.name;
    nlohmann::json m = nlohmann::json::array();
    for (const auto& e : p.manifest) m.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
    j["manifest"] = m;
    j["data"] = p.data;
    return j;
}

inline void block_from_json(const nlohmann::json& j, FlatParams& into) {
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != into.data.size())
        throw FormatError("checkpoint block '" + into.name + "' has " +
                          std::to_string(data.size()) + " values, expected " +
                          std::to_string(into.data.size()));
    into.data = data;
    FlatParams::bump_writes();
}

} // namespace detail

/// Versioned JSON checkpoint of the global state. Blocks are stored with
/// their manifests so a reader can audit the layout.
inline void save_state(const GlobalState& g, const FLConfig& cfg, const std::string& path) {
    nlohmann::json j;
    j["format"] = "hfz-checkpoint";
    j["version"] = 1;
    j["method"] = method_name(g.method);
    j["round"] = g.round;
    j["fingerprint"] = config_fingerprint(cfg);
    nlohmann::json blocks = nlohmann::json::object();
    switch (g.method) {
        case Method::hyperfedzero:
            blocks["theta_f"] = detail::block_to_json(g.extractor.theta_f);
            blocks["theta_noisy"] = detail::block_to_json(g.extractor.theta_noisy);
            blocks["theta_h"] = detail::block_to_json(g.hypernet.theta_h);
            break;
        case Method::opt1:
            blocks["theta_f"] = detail::block_to_json(g.extractor.theta_f);
            blocks["theta_noisy"] = detail::block_to_json(g.extractor.theta_noisy);
            blocks["theta_c"] = detail::block_to_json(g.theta_c);
            break;
        case Method::fedavg:
        case Method::fedavg_ft: blocks["theta_c"] = detail::block_to_json(g.theta_c); break;
        case Method::local: {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& m : g.local_models) arr.push_back(detail::block_to_json(m));
            blocks["local_models"] = arr;
            break;
        }
    }
    j["blocks"] = blocks;
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    out << j.dump() << "\n";
}

/// Rebuilds state from cfg (for shapes and metadata), then overwrites block
/// values from the checkpoint. Method and block sizes must match.
inline GlobalState load_state(const std::string& path, const FLConfig& cfg,
                              std::int64_t feature_dim, std::int64_t num_classes) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint " + path + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "hfz-checkpoint")
            throw FormatError("not a checkpoint file: " + path);
        if (j.at("version").get<int>() != 1)
            throw FormatError("unsupported checkpoint version in " + path);
        if (j.at("method").get<std::string>() != cfg.method)
            throw ConfigError("checkpoint method '" + j.at("method").get<std::string>() +
                              "' does not match config method '" + cfg.method + "'");
        GlobalState g = init_state(cfg, feature_dim, num_classes);
        g.round = j.at("round").get<int>();
        const auto& blocks = j.at("blocks");
        switch (g.method) {
            case Method::hyperfedzero:
                detail::block_from_json(blocks.at("theta_f"), g.extractor.theta_f);
                detail::block_from_json(blocks.at("theta_noisy"), g.extractor.theta_noisy);
                detail::block_from_json(blocks.at("theta_h"), g.hypernet.theta_h);
                break;
            case Method::opt1:
                detail::block_from_json(blocks.at("theta_f"), g.extractor.theta_f);
                detail::block_from_json(blocks.at("theta_noisy"), g.extractor.theta_noisy);
                detail::block_from_json(blocks.at("theta_c"), g.theta_c);
                break;
            case Method::fedavg:
            case Method::fedavg_ft:
                detail::block_from_json(blocks.at("theta_c"), g.theta_c);
                break;
            case Method::local: {
                const auto& arr = blocks.at("local_models");
                if (arr.size() != g.local_models.size())
                    throw FormatError("checkpoint holds " + std::to_string(arr.size()) +
                                      " local models, expected " +
                                      std::to_string(g.local_models.size()));
                for (std::size_t i = 0; i < g.local_models.size(); ++i)
                    detail::block_from_json(arr[i], g.local_models[i]);
                break;
            }
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint " + path + " missing fields: " + e.what());
    }
}

} // namespace hfz
