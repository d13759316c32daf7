#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hfz/experiment.hpp"

namespace {

hfz::FLConfig load_with_overrides(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
    hfz::FLConfig cfg = config_path.empty() ? hfz::FLConfig() : hfz::load_config(config_path);
    for (const auto& kv : overrides) hfz::apply_override(cfg, kv);
    cfg.validate();
    return cfg;
}

struct PreparedRun {
    hfz::Dataset main;
    hfz::Dataset holdout;
    hfz::Partition partition;
    hfz::FederatedData fd;
};

PreparedRun prepare(const hfz::FLConfig& cfg, const std::string& partition_path) {
    PreparedRun r;
    const hfz::Dataset source = hfz::make_dataset(cfg);
    auto split = hfz::holdout_split(source, cfg.holdout_fraction, cfg.seed);
    r.main = std::move(split.first);
    r.holdout = std::move(split.second);
    if (partition_path.empty()) {
        r.partition = hfz::dirichlet_partition(r.main, cfg.n_participating,
                                               cfg.m_nonparticipating, cfg.alpha_d,
                                               cfg.min_per_client, cfg.seed);
    } else {
        r.partition = hfz::load_partition(partition_path, r.main.size());
    }
    r.fd = hfz::build_federated_data(cfg, r.main, r.holdout, r.partition);
    return r;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

int cmd_partition(const hfz::FLConfig& cfg, const std::string& out_path) {
    const hfz::Dataset source = hfz::make_dataset(cfg);
    auto [main, holdout] = hfz::holdout_split(source, cfg.holdout_fraction, cfg.seed);
    const hfz::Partition part =
        hfz::dirichlet_partition(main, cfg.n_participating, cfg.m_nonparticipating, cfg.alpha_d,
                                 cfg.min_per_client, cfg.seed);
    hfz::save_partition(part, out_path);
    std::cout << "wrote " << out_path << ": " << part.num_clients() << " clients over "
              << main.size() << " samples (holdout " << holdout.size() << ")\n";
    for (int c = 0; c < part.num_clients(); ++c)
        std::cout << "  client " << c
                  << (c < part.n_participating ? " (participating): " : " (zero-shot): ")
                  << part.client_indices[static_cast<std::size_t>(c)].size() << " samples\n";
    return 0;
}

int cmd_train(const hfz::FLConfig& cfg, const std::string& out_dir,
              const std::string& partition_path) {
    const std::string dir = hfz::results_root(out_dir);
    PreparedRun r = prepare(cfg, partition_path);
    hfz::TrainResult res = hfz::run_training(cfg, r.fd);

    std::filesystem::create_directories(dir);
    const std::string fp = hfz::config_fingerprint(cfg);
    std::ostringstream csv;
    hfz::write_metrics_csv(res.metrics, csv);
    hfz::detail::write_file_atomic(dir + "/run-" + fp + ".csv", csv.str());
    nlohmann::json side;
    side["fingerprint"] = fp;
    for (const auto& f : hfz::detail::config_fields()) side["config"][f.name] = f.get(cfg);
    hfz::detail::write_file_atomic(dir + "/run-" + fp + ".json", side.dump(2) + "\n");
    const std::string ckpt = dir + "/checkpoint-" + fp + ".json";
    hfz::save_state(res.state, cfg, ckpt);

    const hfz::EvalPoint& p = res.metrics.final_point();
    std::cout << "method=" << cfg.method << " rounds=" << p.round << " gacc=" << fmt(p.gacc)
              << " pacc=" << fmt(p.pacc) << " zacc=" << fmt(p.zacc) << "\n";
    std::cout << "metrics: " << dir + "/run-" + fp + ".csv" << "\n";
    std::cout << "checkpoint: " << ckpt << "\n";
    return 0;
}

int cmd_eval(const hfz::FLConfig& cfg, std::string checkpoint, const std::string& out_dir,
             const std::string& partition_path) {
    PreparedRun r = prepare(cfg, partition_path);
    if (checkpoint.empty())
        checkpoint = hfz::results_root(out_dir) + "/checkpoint-" + hfz::config_fingerprint(cfg) +
                     ".json";
    const hfz::GlobalState g =
        hfz::load_state(checkpoint, cfg, r.main.feature_dim(), r.main.num_classes);
    const double gacc = hfz::evaluate_gacc(g, r.fd.global_test);
    const double pacc = hfz::evaluate_pacc(g, r.fd.participating, cfg);
    std::cout << "gacc=" << fmt(gacc) << "\n";
    std::cout << "pacc=" << fmt(pacc) << "\n";
    if (!r.fd.non_participating.empty())
        std::cout << "zacc=" << fmt(hfz::evaluate_zacc(g, r.fd.non_participating)) << "\n";
    return 0;
}

int cmd_ablate(const hfz::FLConfig& base, const std::vector<std::string>& sweep_args,
               const std::string& seeds_arg, const std::string& out_dir) {
    hfz::ExperimentSpec spec;
    spec.base = base;
    spec.out_dir = hfz::results_root(out_dir);
    for (const auto& s : sweep_args) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw hfz::ConfigError("--sweep expects key=v1,v2,... got '" + s + "'");
        std::vector<std::string> values;
        std::stringstream ss(s.substr(eq + 1));
        std::string v;
        while (std::getline(ss, v, ',')) values.push_back(v);
        spec.axes.emplace_back(s.substr(0, eq), std::move(values));
    }
    std::stringstream ss(seeds_arg);
    std::string v;
    while (std::getline(ss, v, ','))
        spec.seeds.push_back(static_cast<std::uint64_t>(hfz::detail::parse_i64(v, "seeds")));
    const hfz::ExperimentResult res = hfz::run_experiment(spec);
    std::cout << res.new_runs << " new runs, " << res.cells.size() << " table rows\n";
    std::cout << "table: " << res.table_path << "\n";
    return 0;
}

int cmd_export_embeddings(const hfz::FLConfig& cfg, std::string checkpoint,
                          const std::string& out_dir, const std::string& partition_path,
                          const std::string& out_path) {
    PreparedRun r = prepare(cfg, partition_path);
    if (checkpoint.empty())
        checkpoint = hfz::results_root(out_dir) + "/checkpoint-" + hfz::config_fingerprint(cfg) +
                     ".json";
    const hfz::GlobalState g =
        hfz::load_state(checkpoint, cfg, r.main.feature_dim(), r.main.num_classes);
    std::vector<hfz::ClientData> all = r.fd.participating;
    all.insert(all.end(), r.fd.non_participating.begin(), r.fd.non_participating.end());
    const auto embs = hfz::client_embeddings(g, all);
    std::ofstream out(out_path);
    if (!out) throw hfz::FormatError("cannot write " + out_path);
    hfz::export_embeddings(embs, out);
    std::cout << "wrote " << out_path << " (" << embs.size() << " clients)\n";
    return 0;
}

int cmd_budget(const hfz::FLConfig& cfg, bool as_json) {
    std::int64_t feature_dim = 0, num_classes = 0;
    if (cfg.dataset == "synthetic") {
        feature_dim = cfg.synth_dim;
        num_classes = cfg.synth_classes;
    } else {
        const hfz::Dataset d = hfz::make_dataset(cfg);
        feature_dim = d.feature_dim();
        num_classes = d.num_classes;
    }
    const hfz::MlpArch classifier = cfg.classifier_arch(feature_dim, num_classes);
    const hfz::MlpArch extractor = cfg.extractor_arch(feature_dim);
    std::vector<std::int64_t> trunk_dims{cfg.embed_dim + cfg.d_chunk};
    trunk_dims.insert(trunk_dims.end(), cfg.trunk_hidden.begin(), cfg.trunk_hidden.end());
    trunk_dims.push_back(cfg.chunk_size);
    const hfz::BudgetReport r =
        hfz::param_budget(classifier, extractor, hfz::MlpArch(trunk_dims), cfg.d_chunk);
    if (as_json) {
        nlohmann::json j;
        j["theta_f"] = r.theta_f;
        j["theta_noisy"] = r.theta_noisy;
        j["theta_h"] = r.theta_h;
        j["generated_side"] = r.generated_side;
        j["theta_c"] = r.theta_c;
        j["ratio"] = r.ratio;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "theta_f        " << r.theta_f << "\n"
                  << "theta_noisy    " << r.theta_noisy << "\n"
                  << "theta_h        " << r.theta_h << "\n"
                  << "generated side " << r.generated_side << "\n"
                  << "theta_c        " << r.theta_c << "\n"
                  << "ratio          " << fmt(r.ratio) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic federated hypernetwork benchmark"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "results", partition_path, checkpoint_path;
    std::string partition_out = "partition.json", embeddings_out = "embeddings.csv";
    std::string seeds_arg = "1,2,3";
    std::vector<std::string> overrides, sweep_args;
    bool budget_json = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key = value lines)");
        sub->add_option("overrides", overrides, "config overrides as key=value");
    };

    CLI::App* sub_partition = app.add_subcommand("partition", "write a Dirichlet partition file");
    add_common(sub_partition);
    sub_partition->add_option("--out", partition_out, "partition file path");

    CLI::App* sub_train = app.add_subcommand("train", "run federated training");
    add_common(sub_train);
    sub_train->add_option("--dir", out_dir, "results directory");
    sub_train->add_option("--partition", partition_path, "reuse a partition file");

    CLI::App* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(sub_eval);
    sub_eval->add_option("--checkpoint", checkpoint_path, "checkpoint path");
    sub_eval->add_option("--dir", out_dir, "results directory (for the default checkpoint path)");
    sub_eval->add_option("--partition", partition_path, "reuse a partition file");

    CLI::App* sub_ablate = app.add_subcommand("ablate", "run a config sweep");
    add_common(sub_ablate);
    sub_ablate->add_option("--sweep", sweep_args, "sweep axis key=v1,v2,... (repeatable)");
    sub_ablate->add_option("--seeds", seeds_arg, "comma-separated seed list");
    sub_ablate->add_option("--dir", out_dir, "results directory");

    CLI::App* sub_export = app.add_subcommand("export-embeddings", "write embedding CSV");
    add_common(sub_export);
    sub_export->add_option("--checkpoint", checkpoint_path, "checkpoint path");
    sub_export->add_option("--dir", out_dir, "results directory (for the default checkpoint path)");
    sub_export->add_option("--partition", partition_path, "reuse a partition file");
    sub_export->add_option("--out", embeddings_out, "output CSV path");

    CLI::App* sub_budget = app.add_subcommand("budget", "report the parameter budget");
    add_common(sub_budget);
    sub_budget->add_flag("--json", budget_json, "print JSON instead of text");

    CLI11_PARSE(app, argc, argv);

    try {
        const hfz::FLConfig cfg = load_with_overrides(config_path, overrides);
        if (sub_partition->parsed()) return cmd_partition(cfg, partition_out);
        if (sub_train->parsed()) return cmd_train(cfg, out_dir, partition_path);
        if (sub_eval->parsed()) return cmd_eval(cfg, checkpoint_path, out_dir, partition_path);
        if (sub_ablate->parsed()) return cmd_ablate(cfg, sweep_args, seeds_arg, out_dir);
        if (sub_export->parsed())
            return cmd_export_embeddings(cfg, checkpoint_path, out_dir, partition_path,
                                         embeddings_out);
        if (sub_budget->parsed()) return cmd_budget(cfg, budget_json);
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const hfz::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const hfz::FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const hfz::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const hfz::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
