#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "hfz/embedding.hpp"
#include "hfz/federation.hpp"
#include "hfz/hypernet.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

inline int argmax_row(const Tensor& logits, std::int64_t row) {
    int best = 0;
    for (std::int64_t j = 1; j < logits.cols(); ++j)
        if (logits.at(row, j) > logits.at(row, best)) best = static_cast<int>(j);
    return best;
}

/// Evaluation-mode logits for a batch under the state's method. The
/// hypernetwork path extracts noise-free embeddings and runs each sample
/// through its own generated classifier. `local_model` selects the model for
/// the local baseline; other methods ignore it.
inline Tensor eval_logits(const GlobalState& g, const Tensor& x, int local_model = 0) {
    switch (g.method) {
        case Method::hyperfedzero: {
            Tensor e = extract_eval(g.extractor_arch, g.extractor.theta_f, x);
            Tensor gen = generate_eval(g.hypernet, e);
            return forward_generated_eval(g.classifier, x, gen);
        }
        case Method::opt1: {
            Tensor e = extract_eval(g.extractor_arch, g.extractor.theta_f, x);
            return forward_opt1_eval(g.classifier, g.theta_c, x, e);
        }
        case Method::fedavg:
        case Method::fedavg_ft: return mlp_eval(g.classifier, g.theta_c, x);
        case Method::local:
            return mlp_eval(g.classifier,
                            g.local_models[static_cast<std::size_t>(local_model)], x);
    }
    throw ContractError("invalid method in eval_logits");
}

/// Top-1 accuracy (percentage) of the state on a dataset. Ties resolve to
/// the lowest class index.
inline double top1_accuracy(const GlobalState& g, const Dataset& data, int local_model = 0) {
    if (data.size() < 1) throw ContractError("accuracy on an empty dataset");
    const Tensor logits = eval_logits(g, data.features, local_model);
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < data.size(); ++i)
        if (argmax_row(logits, i) == data.labels[static_cast<std::size_t>(i)]) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Mean accuracy over the local baseline's per-client models on one dataset;
/// identity for single-model methods. The local baseline has no global
/// model, so dataset-level metrics average over its client models.
inline double model_mean_accuracy(const GlobalState& g, const Dataset& data) {
    if (g.method != Method::local) return top1_accuracy(g, data);
    double sum = 0.0;
    for (std::size_t m = 0; m < g.local_models.size(); ++m)
        sum += top1_accuracy(g, data, static_cast<int>(m));
    return sum / static_cast<double>(g.local_models.size());
}

/// Accuracy on the pre-partition i.i.d. holdout.
inline double evaluate_gacc(const GlobalState& g, const Dataset& global_test) {
    if (global_test.size() < 1) throw ContractError("gACC needs a non-empty global test set");
    return model_mean_accuracy(g, global_test);
}

/// Unweighted mean of participating clients' local-test accuracies. The
/// fedavg_ft baseline personalizes a copy per client before measuring; the
/// local baseline evaluates each client's own model.
inline double evaluate_pacc(const GlobalState& g, const std::vector<ClientData>& participating,
                            const FLConfig& cfg, std::vector<double>* per_client = nullptr) {
    if (participating.empty()) throw ContractError("pACC needs >= 1 participating client");
    double sum = 0.0;
    for (const ClientData& c : participating) {
        if (c.test.size() < 1)
            throw ContractError("client " + std::to_string(c.id) + " has an empty test split");
        double acc = 0.0;
        if (g.method == Method::fedavg_ft) {
            GlobalState adapted = g;
            adapted.theta_c = fedavg_ft_adapt(g.theta_c, g.classifier, c, cfg);
            acc = top1_accuracy(adapted, c.test);
        } else if (g.method == Method::local) {
            acc = top1_accuracy(g, c.test, c.id);
        } else {
            acc = top1_accuracy(g, c.test);
        }
        if (per_client) per_client->push_back(acc);
        sum += acc;
    }
    return sum / static_cast<double>(participating.size());
}

/// Unweighted mean of non-participating clients' whole-set accuracies.
/// Strictly zero-shot: the call asserts that no backward pass runs and no
/// parameter write happens while it executes.
inline double evaluate_zacc(const GlobalState& g,
                            const std::vector<ClientData>& non_participating,
                            std::vector<double>* per_client = nullptr) {
    if (non_participating.empty()) throw ContractError("zACC needs >= 1 non-participating client");
    const std::uint64_t backward_before = Tape::backward_count();
    const std::uint64_t writes_before = FlatParams::write_count();
    double sum = 0.0;
    for (const ClientData& c : non_participating) {
        const double acc = model_mean_accuracy(g, c.test);
        if (per_client) per_client->push_back(acc);
        sum += acc;
    }
    if (Tape::backward_count() != backward_before)
        throw ContractError("zACC evaluation triggered a backward pass");
    if (FlatParams::write_count() != writes_before)
        throw ContractError("zACC evaluation wrote to parameters");
    return sum / static_cast<double>(non_participating.size());
}

/// One evaluation snapshot. Counters are cumulative training passes up to
/// this round; collapse is filled only when the method has an extractor.
struct EvalPoint {
    int round = 0;
    double gacc = 0.0;
    double pacc = 0.0;
    double zacc = 0.0;
    double mean_loss = 0.0;
    double mean_penalty = 0.0;
    std::uint64_t forward_passes = 0;
    std::uint64_t backward_passes = 0;
    bool has_collapse = false;
    double collapse = 0.0;
};

struct MetricsReport {
    std::string fingerprint;
    std::vector<EvalPoint> history;
    std::vector<double> round_loss;
    std::vector<double> round_penalty;
    std::vector<double> pacc_per_client;
    std::vector<double> zacc_per_client;

    const EvalPoint& final_point() const {
        if (history.empty()) throw ContractError("metrics report has no evaluation points");
        return history.back();
    }
};

/// RFC-4180-style CSV, one row per evaluation point, every row carrying the
/// config fingerprint. Doubles print as %.17g so reruns are bit-comparable.
inline void write_metrics_csv(const MetricsReport& m, std::ostream& out) {
    out << "fingerprint,round,gacc,pacc,zacc,mean_loss,mean_penalty,collapse,forward_passes,"
           "backward_passes\n";
    char buf[32];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const EvalPoint& p : m.history) {
        out << m.fingerprint << ',' << p.round << ',' << num(p.gacc) << ',' << num(p.pacc) << ','
            << num(p.zacc) << ',' << num(p.mean_loss) << ',' << num(p.mean_penalty) << ','
            << (p.has_collapse ? num(p.collapse) : std::string()) << ',' << p.forward_passes
            << ',' << p.backward_passes << "\n";
    }
}

/// Eval-mode embeddings of each participating client's train split; input
/// to collapse_metric and the embedding export.
inline std::vector<ClientEmbeddings> client_embeddings(const GlobalState& g,
                                                       const std::vector<ClientData>& clients) {
    if (g.method != Method::hyperfedzero && g.method != Method::opt1)
        throw ContractError("method " + std::string(method_name(g.method)) +
                            " has no embedding extractor");
    std::vector<ClientEmbeddings> out;
    for (const ClientData& c : clients) {
        const Dataset& d = c.train.size() > 0 ? c.train : c.test;
        ClientEmbeddings ce;
        ce.client_id = c.id;
        ce.labels = d.labels;
        ce.values = extract_eval(g.extractor_arch, g.extractor.theta_f, d.features);
        out.push_back(std::move(ce));
    }
    return out;
}

} // namespace hfz
