#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hfz/experiment.hpp"

using hfz::FederatedData;
using hfz::FLConfig;
using hfz::MetricsReport;
using hfz::TrainResult;

namespace {

FLConfig tiny_cfg(const std::string& method) {
    FLConfig c;
    c.method = method;
    c.n_participating = 2;
    c.m_nonparticipating = 1;
    c.rounds = 5;
    c.local_iters = 2;
    c.lr = 0.05;
    c.batch_size = 8;
    c.eval_interval = 2;
    c.seed = 11;
    c.synth_classes = 3;
    c.synth_per_class = 40;
    c.synth_dim = 2;
    c.synth_spread = 4.0;
    c.alpha_d = 1.0;
    c.min_per_client = 4;
    c.embed_dim = 3;
    c.extractor_hidden = {4};
    c.chunk_size = 6;
    c.d_chunk = 2;
    c.trunk_hidden = {5};
    c.classifier_hidden = {4};
    return c;
}

std::string fresh_dir(const std::string& tag) {
    const std::string dir = testing::TempDir() + tag;
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in) << path;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(RunTraining, ScheduleCountersAndTraces) {
    FLConfig cfg = tiny_cfg("hyperfedzero");
    FederatedData fd = hfz::prepare_data(cfg);
    TrainResult res = hfz::run_training(cfg, fd);
    const MetricsReport& m = res.metrics;

    // rounds=5, eval_interval=2: snapshots at rounds 2, 4, and the final 5.
    ASSERT_EQ(m.history.size(), 3u);
    EXPECT_EQ(m.history[0].round, 2);
    EXPECT_EQ(m.history[1].round, 4);
    EXPECT_EQ(m.history[2].round, 5);
    EXPECT_EQ(m.round_loss.size(), 5u);
    EXPECT_EQ(m.round_penalty.size(), 5u);

    // Counters are cumulative N * K * rounds on both sides.
    EXPECT_EQ(m.history[0].forward_passes, 2u * 2u * 2u);
    EXPECT_EQ(m.history[2].forward_passes, 2u * 2u * 5u);
    EXPECT_EQ(m.history[2].backward_passes, m.history[2].forward_passes);

    // Each snapshot's mean_loss covers exactly the rounds since the previous
    // snapshot.
    const double w0 = (m.round_loss[0] + m.round_loss[1]) / 2.0;
    const double w2 = m.round_loss[4];
    EXPECT_NEAR(m.history[0].mean_loss, w0, 1e-12);
    EXPECT_NEAR(m.history[2].mean_loss, w2, 1e-12);

    EXPECT_EQ(m.pacc_per_client.size(), 2u);
    EXPECT_EQ(m.zacc_per_client.size(), 1u);
    EXPECT_TRUE(m.history.back().has_collapse);
    EXPECT_GE(m.history.back().collapse, 0.0);
    EXPECT_EQ(res.state.round, 5);
    EXPECT_EQ(m.fingerprint, hfz::config_fingerprint(cfg));
}

TEST(RunTraining, FedavgHasNoCollapseOrPenalty) {
    FLConfig cfg = tiny_cfg("fedavg");
    FederatedData fd = hfz::prepare_data(cfg);
    TrainResult res = hfz::run_training(cfg, fd);
    EXPECT_FALSE(res.metrics.history.back().has_collapse);
    for (double p : res.metrics.round_penalty) EXPECT_EQ(p, 0.0);
}

TEST(RunTraining, ParallelMatchesSerialBitwise) {
    for (const char* method : {"hyperfedzero", "fedavg", "local"}) {
        FLConfig serial = tiny_cfg(method);
        FederatedData fd = hfz::prepare_data(serial);
        FLConfig parallel = serial;
        parallel.parallel_clients = true;

        TrainResult a = hfz::run_training(serial, fd);
        TrainResult b = hfz::run_training(parallel, fd);
        // parallel_clients is part of the fingerprint, so compare the rows
        // after the fingerprint column instead of whole CSV lines.
        std::ostringstream ca, cb;
        hfz::write_metrics_csv(a.metrics, ca);
        hfz::write_metrics_csv(b.metrics, cb);
        std::istringstream la(ca.str()), lb(cb.str());
        std::string ra, rb;
        while (std::getline(la, ra) && std::getline(lb, rb)) {
            EXPECT_EQ(ra.substr(ra.find(',')), rb.substr(rb.find(','))) << method;
        }
        EXPECT_EQ(a.state.theta_c.data, b.state.theta_c.data) << method;
        EXPECT_EQ(a.state.extractor.theta_f.data, b.state.extractor.theta_f.data) << method;
        EXPECT_EQ(a.state.hypernet.theta_h.data, b.state.hypernet.theta_h.data) << method;
        for (std::size_t i = 0; i < a.state.local_models.size(); ++i)
            EXPECT_EQ(a.state.local_models[i].data, b.state.local_models[i].data) << method;
    }
}

TEST(RunTraining, NumericFailureNamesRoundAndClient) {
    FLConfig cfg = tiny_cfg("fedavg");
    cfg.lr = 1e150;  // guaranteed overflow within the first rounds
    cfg.rounds = 3;
    FederatedData fd = hfz::prepare_data(cfg);
    try {
        hfz::run_training(cfg, fd);
        FAIL() << "expected NumericError";
    } catch (const hfz::NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("round"), std::string::npos);
        EXPECT_NE(msg.find("client"), std::string::npos);
    }
}

TEST(RunSingle, WritesDeterministicArtifacts) {
    FLConfig cfg = tiny_cfg("fedavg");
    const std::string dir = fresh_dir("single");
    MetricsReport m = hfz::run_single(cfg, dir);
    const std::string fp = hfz::config_fingerprint(cfg);
    const std::string csv_path = dir + "/run-" + fp + ".csv";
    const std::string side_path = dir + "/run-" + fp + ".json";
    ASSERT_TRUE(std::filesystem::exists(csv_path));
    ASSERT_TRUE(std::filesystem::exists(side_path));

    const std::string first = slurp(csv_path);
    hfz::run_single(cfg, dir);
    EXPECT_EQ(slurp(csv_path), first);  // rerun is byte-identical

    std::ostringstream want;
    hfz::write_metrics_csv(m, want);
    EXPECT_EQ(first, want.str());

    const std::string side = slurp(side_path);
    EXPECT_NE(side.find("\"fingerprint\": \"" + fp + "\""), std::string::npos);
    EXPECT_NE(side.find("\"method\": \"fedavg\""), std::string::npos);

    double gacc = 0, pacc = 0, zacc = 0;
    hfz::detail::read_final_metrics(csv_path, gacc, pacc, zacc);
    EXPECT_DOUBLE_EQ(gacc, m.final_point().gacc);
    EXPECT_DOUBLE_EQ(pacc, m.final_point().pacc);
    EXPECT_DOUBLE_EQ(zacc, m.final_point().zacc);
}

TEST(ReadFinalMetrics, Errors) {
    double g, p, z;
    EXPECT_THROW(hfz::detail::read_final_metrics(testing::TempDir() + "nope.csv", g, p, z),
                 hfz::FormatError);
    const std::string header_only = testing::TempDir() + "header.csv";
    std::ofstream(header_only) << "fingerprint,round,gacc\n";
    EXPECT_THROW(hfz::detail::read_final_metrics(header_only, g, p, z), hfz::FormatError);
}

TEST(RunExperiment, SweepAndResume) {
    hfz::ExperimentSpec spec;
    spec.base = tiny_cfg("fedavg");
    spec.base.rounds = 3;
    spec.axes = {{"lr", {"0.01", "0.1"}}};
    spec.seeds = {1, 2};
    spec.out_dir = fresh_dir("sweep");

    hfz::ExperimentResult r1 = hfz::run_experiment(spec);
    EXPECT_EQ(r1.new_runs, 4);
    ASSERT_EQ(r1.cells.size(), 2u);
    EXPECT_EQ(r1.cells[0].axis_values, (std::vector<std::string>{"0.01"}));
    EXPECT_EQ(r1.cells[1].axis_values, (std::vector<std::string>{"0.1"}));
    EXPECT_EQ(r1.cells[0].seeds, 2);
    ASSERT_TRUE(std::filesystem::exists(r1.table_path));

    const std::string table = slurp(r1.table_path);
    EXPECT_EQ(table.substr(0, table.find('\n')),
              "lr,seeds,gacc_mean,gacc_std,pacc_mean,pacc_std,zacc_mean,zacc_std");

    // Means must agree with the per-run files.
    for (std::size_t c = 0; c < 2; ++c) {
        double sum = 0;
        for (std::uint64_t seed : spec.seeds) {
            FLConfig run_cfg = spec.base;
            hfz::apply_override(run_cfg, "lr=" + r1.cells[c].axis_values[0]);
            run_cfg.seed = seed;
            double gacc = 0, pacc = 0, zacc = 0;
            hfz::detail::read_final_metrics(
                spec.out_dir + "/run-" + hfz::config_fingerprint(run_cfg) + ".csv", gacc, pacc,
                zacc);
            sum += gacc;
        }
        EXPECT_NEAR(r1.cells[c].gacc_mean, sum / 2.0, 1e-12);
    }

    // A second pass finds every run on disk.
    hfz::ExperimentResult r2 = hfz::run_experiment(spec);
    EXPECT_EQ(r2.new_runs, 0);
    ASSERT_EQ(r2.cells.size(), 2u);
    EXPECT_DOUBLE_EQ(r2.cells[0].gacc_mean, r1.cells[0].gacc_mean);
    EXPECT_DOUBLE_EQ(r2.cells[1].zacc_mean, r1.cells[1].zacc_mean);

    hfz::ExperimentSpec bad = spec;
    bad.axes = {{"warp", {"1"}}};
    EXPECT_THROW(hfz::run_experiment(bad), hfz::ConfigError);
    bad = spec;
    bad.seeds.clear();
    EXPECT_THROW(hfz::run_experiment(bad), hfz::ConfigError);
}

TEST(ResultsRoot, EnvOverride) {
    unsetenv("HFZ_RESULTS_ROOT");
    EXPECT_EQ(hfz::results_root("results"), "results");
    setenv("HFZ_RESULTS_ROOT", "/tmp/elsewhere", 1);
    EXPECT_EQ(hfz::results_root("results"), "/tmp/elsewhere");
    unsetenv("HFZ_RESULTS_ROOT");
}
