#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hfz/config.hpp"
#include "hfz/federation.hpp"
#include "hfz/metrics.hpp"

namespace hfz {

struct TrainResult {
    GlobalState state;
    MetricsReport metrics;
};

/// Runs the agreed pipeline end to end: E rounds of distribute -> every
/// participating client trains locally (all of them; participation ratio is
/// 1) -> aggregate. Metrics are captured every cfg.eval_interval rounds and
/// at the end. Client execution order never affects results because every
/// random draw is label-addressed, so cfg.parallel_clients only changes the
/// schedule.
inline TrainResult run_training(const FLConfig& cfg, const FederatedData& fd) {
    cfg.validate();
    const std::int64_t feature_dim = fd.global_test.feature_dim();
    const std::int64_t num_classes = fd.global_test.num_classes;
    TrainResult res;
    res.state = init_state(cfg, feature_dim, num_classes);
    GlobalState& g = res.state;
    MetricsReport& m = res.metrics;
    m.fingerprint = config_fingerprint(cfg);

    const std::uint64_t ft_calls_before = ft_adapt_counter().load();
    const int n = cfg.n_participating;
    std::uint64_t forward_total = 0, backward_total = 0;
    std::size_t trace_consumed = 0;

    for (int round = 0; round < cfg.rounds; ++round) {
        std::vector<LocalUpdate> updates(static_cast<std::size_t>(n));
        std::vector<std::exception_ptr> failures(static_cast<std::size_t>(n));
        auto run_client = [&](int i) {
            try {
                updates[static_cast<std::size_t>(i)] =
                    local_train(fd.participating[static_cast<std::size_t>(i)], g, cfg, round);
            } catch (...) {
                failures[static_cast<std::size_t>(i)] = std::current_exception();
            }
        };
        if (cfg.parallel_clients) {
            std::vector<std::thread> pool;
            pool.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) pool.emplace_back(run_client, i);
            for (auto& t : pool) t.join();
        } else {
            for (int i = 0; i < n; ++i) run_client(i);
        }
        for (int i = 0; i < n; ++i) {
            if (!failures[static_cast<std::size_t>(i)]) continue;
            try {
                std::rethrow_exception(failures[static_cast<std::size_t>(i)]);
            } catch (const NumericError& e) {
                throw NumericError("round " + std::to_string(round) + ", client " +
                                   std::to_string(i) + ": " + e.what());
            }
        }

        double loss_sum = 0.0, pen_sum = 0.0;
        std::int64_t steps = 0;
        for (const auto& up : updates) {
            forward_total += up.reports.size();
            backward_total += up.reports.size();
            for (const auto& r : up.reports) {
                loss_sum += r.loss;
                pen_sum += r.penalty;
                ++steps;
            }
        }
        m.round_loss.push_back(loss_sum / static_cast<double>(steps));
        m.round_penalty.push_back(pen_sum / static_cast<double>(steps));

        if (g.method == Method::local) {
            for (int i = 0; i < n; ++i)
                g.local_models[static_cast<std::size_t>(i)] =
                    std::move(updates[static_cast<std::size_t>(i)].blocks[0]);
            FlatParams::bump_writes();
        } else {
            std::vector<std::vector<FlatParams>> client_blocks;
            std::vector<std::int64_t> sizes;
            for (auto& up : updates) {
                client_blocks.push_back(std::move(up.blocks));
                sizes.push_back(up.train_size);
            }
            install_blocks(g, aggregate(client_blocks, sizes));
        }
        g.round = round + 1;

        const bool last = round + 1 == cfg.rounds;
        if ((round + 1) % cfg.eval_interval == 0 || last) {
            EvalPoint p;
            p.round = round + 1;
            p.gacc = evaluate_gacc(g, fd.global_test);
            p.pacc = evaluate_pacc(g, fd.participating, cfg,
                                   last ? &m.pacc_per_client : nullptr);
            if (!fd.non_participating.empty())
                p.zacc = evaluate_zacc(g, fd.non_participating,
                                       last ? &m.zacc_per_client : nullptr);
            double ls = 0.0, ps = 0.0;
            const std::size_t upto = m.round_loss.size();
            for (std::size_t r = trace_consumed; r < upto; ++r) {
                ls += m.round_loss[r];
                ps += m.round_penalty[r];
            }
            p.mean_loss = ls / static_cast<double>(upto - trace_consumed);
            p.mean_penalty = ps / static_cast<double>(upto - trace_consumed);
            trace_consumed = upto;
            p.forward_passes = forward_total;
            p.backward_passes = backward_total;
            if (last && (g.method == Method::hyperfedzero || g.method == Method::opt1)) {
                std::vector<Tensor> embs;
                for (auto& ce : client_embeddings(g, fd.participating))
                    embs.push_back(std::move(ce.values));
                p.has_collapse = true;
                p.collapse = collapse_metric(embs);
            }
            m.history.push_back(p);
        }
    }
    if (g.method == Method::hyperfedzero && ft_adapt_counter().load() != ft_calls_before)
        throw ContractError("fine-tuning adaptor ran on the hyperfedzero path");
    return res;
}

/// Convenience pipeline: dataset -> holdout -> partition -> clients.
inline FederatedData prepare_data(const FLConfig& cfg) {
    const Dataset source = make_dataset(cfg);
    auto [main, holdout] = holdout_split(source, cfg.holdout_fraction, cfg.seed);
    const Partition part = dirichlet_partition(main, cfg.n_participating, cfg.m_nonparticipating,
                                               cfg.alpha_d, cfg.min_per_client, cfg.seed);
    return build_federated_data(cfg, main, holdout, part);
}

/// Sweep description: every axis key must name a real config field.
struct ExperimentSpec {
    FLConfig base;
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
};

struct CellResult {
    std::vector<std::string> axis_values;
    int seeds = 0;
    double gacc_mean = 0.0, gacc_std = 0.0;
    double pacc_mean = 0.0, pacc_std = 0.0;
    double zacc_mean = 0.0, zacc_std = 0.0;
};

struct ExperimentResult {
    std::vector<CellResult> cells;
    int new_runs = 0;
    std::string table_path;
};

namespace detail {

inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw FormatError("cannot write " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

/// Final gacc/pacc/zacc of a completed run, parsed back from its CSV.
inline void read_final_metrics(const std::string& path, double& gacc, double& pacc,
                               double& zacc) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open run file " + path);
    std::string line, last;
    std::getline(in, line);  // header
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    if (last.empty()) throw FormatError("run file " + path + " has no data rows");
    std::vector<std::string> cells;
    std::stringstream ss(last);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) throw FormatError("run file " + path + " has a short row");
    gacc = std::strtod(cells[2].c_str(), nullptr);
    pacc = std::strtod(cells[3].c_str(), nullptr);
    zacc = cells[4].empty() ? 0.0 : std::strtod(cells[4].c_str(), nullptr);
}

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    sd = 0.0;
    if (v.size() > 1) {
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    }
}

} // namespace detail

/// Executes one configured run and writes its metrics CSV plus a JSON
/// sidecar carrying the full config, both atomically.
inline MetricsReport run_single(const FLConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const std::string fp = config_fingerprint(cfg);
    const FederatedData fd = prepare_data(cfg);
    TrainResult res = run_training(cfg, fd);
    std::ostringstream csv;
    write_metrics_csv(res.metrics, csv);
    std::filesystem::create_directories(out_dir);
    detail::write_file_atomic(out_dir + "/run-" + fp + ".csv", csv.str());
    nlohmann::json side;
    side["fingerprint"] = fp;
    for (const auto& f : detail::config_fields()) side["config"][f.name] = f.get(cfg);
    detail::write_file_atomic(out_dir + "/run-" + fp + ".json", side.dump(2) + "\n");
    return res.metrics;
}

/// Cartesian product of sweep axes x seeds. Completed cells (matched by
/// config fingerprint in out_dir) are skipped, so interrupted sweeps resume.
/// Writes sweep.csv with per-cell means and sample standard deviations over
/// seeds.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
    if (spec.seeds.empty()) throw ConfigError("experiment needs >= 1 seed");
    for (const auto& axis : spec.axes) {
        FLConfig probe = spec.base;
        if (axis.second.empty()) throw ConfigError("sweep axis '" + axis.first + "' has no values");
        apply_override(probe, axis.first + "=" + axis.second.front());
    }
    std::filesystem::create_directories(spec.out_dir);

    std::vector<std::size_t> cursor(spec.axes.size(), 0);
    ExperimentResult result;
    bool done = false;
    while (!done) {
        FLConfig cell_cfg = spec.base;
        CellResult cell;
        for (std::size_t a = 0; a < spec.axes.size(); ++a) {
            const std::string& value = spec.axes[a].second[cursor[a]];
            apply_override(cell_cfg, spec.axes[a].first + "=" + value);
            cell.axis_values.push_back(value);
        }
        std::vector<double> gaccs, paccs, zaccs;
        for (std::uint64_t seed : spec.seeds) {
            FLConfig run_cfg = cell_cfg;
            run_cfg.seed = seed;
            run_cfg.validate();
            const std::string fp = config_fingerprint(run_cfg);
            const std::string run_path = spec.out_dir + "/run-" + fp + ".csv";
            if (!std::filesystem::exists(run_path)) {
                run_single(run_cfg, spec.out_dir);
                ++result.new_runs;
            }
            double gacc = 0, pacc = 0, zacc = 0;
            detail::read_final_metrics(run_path, gacc, pacc, zacc);
            gaccs.push_back(gacc);
            paccs.push_back(pacc);
            zaccs.push_back(zacc);
        }
        cell.seeds = static_cast<int>(spec.seeds.size());
        detail::mean_std(gaccs, cell.gacc_mean, cell.gacc_std);
        detail::mean_std(paccs, cell.pacc_mean, cell.pacc_std);
        detail::mean_std(zaccs, cell.zacc_mean, cell.zacc_std);
        result.cells.push_back(std::move(cell));

        done = true;
        for (std::size_t a = spec.axes.size(); a-- > 0;) {
            if (++cursor[a] < spec.axes[a].second.size()) {
                done = false;
                break;
            }
            cursor[a] = 0;
        }
        if (spec.axes.empty()) done = true;
    }

    std::ostringstream table;
    for (const auto& axis : spec.axes) table << axis.first << ',';
    table << "seeds,gacc_mean,gacc_std,pacc_mean,pacc_std,zacc_mean,zacc_std\n";
    char buf[32];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& cell : result.cells) {
        for (const auto& v : cell.axis_values) table << v << ',';
        table << cell.seeds << ',' << num(cell.gacc_mean) << ',' << num(cell.gacc_std) << ','
              << num(cell.pacc_mean) << ',' << num(cell.pacc_std) << ',' << num(cell.zacc_mean)
              << ',' << num(cell.zacc_std) << "\n";
    }
    result.table_path = spec.out_dir + "/sweep.csv";
    detail::write_file_atomic(result.table_path, table.str());
    return result;
}

/// Results directory override: the HFZ_RESULTS_ROOT environment variable
/// wins over the configured/requested directory.
inline std::string results_root(const std::string& requested) {
    const char* env = std::getenv("HFZ_RESULTS_ROOT");
    return (env && *env) ? std::string(env) : requested;
}

} // namespace hfz
