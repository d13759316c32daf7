#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <vector>

#include "hfz/autodiff.hpp"
#include "hfz/error.hpp"
#include "hfz/mlp.hpp"
#include "hfz/rng.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

/// The distribution extractor: a main network f and a noisy network of the
/// same architecture, both ending in a width-P head. Embeddings are
/// softmax(f(x)) at evaluation time and softmax(f(x) + z * softplus(noisy(x)))
/// during training, with z standard normal.
struct ExtractorParams {
    MlpArch arch;
    FlatParams theta_f;
    FlatParams theta_noisy;

    std::int64_t P() const { return arch.out_dim(); }
};

/// Draw order: theta_f in manifest order, then theta_noisy, from one stream.
inline ExtractorParams init_extractor(const MlpArch& arch, RngStream& rng) {
    ExtractorParams p;
    p.arch = arch;
    p.theta_f = init_mlp(arch, "theta_f", rng);
    p.theta_noisy = init_mlp(arch, "theta_noisy", rng);
    return p;
}

/// Training-mode extraction on the tape. Draws the noise sample z from
/// `rng`: B*P gaussians row-major, or B gaussians broadcast across the row
/// when scalar_noise is set. z is a constant on the tape, so gradients flow
/// only into the two networks.
inline Var extract_train(Tape& tape, const MlpArch& arch, const LiftedParams& f,
                         const LiftedParams& noisy, Var x, RngStream& rng,
                         bool scalar_noise = false) {
    const std::int64_t B = tape.value(x).rows();
    const std::int64_t P = arch.out_dim();
    Var logits = mlp_forward(tape, arch, f, x);
    Var scale = tape.softplus(mlp_forward(tape, arch, noisy, x));
    Tensor z({B, P});
    if (scalar_noise) {
        for (std::int64_t i = 0; i < B; ++i) {
            const double zi = rng.gaussian();
            for (std::int64_t j = 0; j < P; ++j) z.at(i, j) = zi;
        }
    } else {
        for (std::int64_t i = 0; i < z.size(); ++i) z[i] = rng.gaussian();
    }
    Var noise = tape.mul(tape.constant(std::move(z)), scale);
    return tape.softmax_rows(tape.add(logits, noise));
}

/// Evaluation-mode extraction: deterministic, noise-free, tape-free.
inline Tensor extract_eval(const MlpArch& arch, const FlatParams& theta_f, const Tensor& x) {
    Tensor logits = mlp_eval(arch, theta_f, x);
    Tensor e(logits.shape());
    for (std::int64_t i = 0; i < logits.rows(); ++i)
        Tape::softmax_row(logits.data() + i * logits.cols(), e.data() + i * e.cols(),
                          logits.cols());
    return e;
}

/// Row-simplex check shared by tests and evaluation paths.
inline void check_embedding(const Tensor& e, double tol = 1e-9) {
    if (e.ndim() != 2) throw ShapeError("embedding must be [B x P]");
    for (std::int64_t i = 0; i < e.rows(); ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < e.cols(); ++j) {
            if (!(e.at(i, j) > 0.0))
                throw NumericError("embedding row " + std::to_string(i) + " not strictly positive");
            sum += e.at(i, j);
        }
        if (std::fabs(sum - 1.0) > tol)
            throw NumericError("embedding row " + std::to_string(i) + " sums to " +
                               std::to_string(sum));
    }
}

/// alpha * var(s)/mean(s) + beta * mean_batch(sum_p -e_p ln e_p), where s is
/// the per-dimension importance vector (column sums of e over the batch) and
/// var is the population variance of its P entries. 0 ln 0 is taken as 0.
inline Var balancing_penalty(Tape& tape, Var e, double alpha, double beta) {
    if (!(alpha >= 0.0) || !(beta >= 0.0))
        throw ConfigError("penalty coefficients must be finite and >= 0");
    const Tensor& ev = tape.value(e);
    const double P = static_cast<double>(ev.cols());
    const double B = static_cast<double>(ev.rows());

    Var s = tape.sum_axis0(e);
    Var mean = tape.mul(tape.sum_all(s), tape.constant(Tensor::scalar(1.0 / P)));
    Var centered = tape.sub(s, mean);
    Var var = tape.mul(tape.sum_all(tape.mul(centered, centered)),
                       tape.constant(Tensor::scalar(1.0 / P)));
    Var importance_term = tape.div(var, mean);

    Var neg_entropy = tape.sum_all(tape.xlogx(e));
    Var entropy_term = tape.mul(tape.neg(neg_entropy), tape.constant(Tensor::scalar(1.0 / B)));

    return tape.add(tape.mul(tape.constant(Tensor::scalar(alpha)), importance_term),
                    tape.mul(tape.constant(Tensor::scalar(beta)), entropy_term));
}

/// Tape-free penalty for reporting. Same arithmetic as balancing_penalty.
inline double balancing_penalty_value(const Tensor& e, double alpha, double beta) {
    if (!(alpha >= 0.0) || !(beta >= 0.0))
        throw ConfigError("penalty coefficients must be finite and >= 0");
    const std::int64_t B = e.rows(), P = e.cols();
    std::vector<double> s(static_cast<std::size_t>(P), 0.0);
    double neg_entropy = 0.0;
    for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t j = 0; j < P; ++j) {
            const double v = e.at(i, j);
            s[static_cast<std::size_t>(j)] += v;
            if (v > 0.0) neg_entropy += v * std::log(v);
        }
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(P);
    double var = 0.0;
    for (double v : s) var += (v - mean) * (v - mean);
    var /= static_cast<double>(P);
    return alpha * var / mean + beta * (-neg_entropy / static_cast<double>(B));
}

/// Mean pairwise Euclidean distance between per-client mean embeddings.
/// Near zero means the embedding space has collapsed.
inline double collapse_metric(const std::vector<Tensor>& per_client_embeddings) {
    if (per_client_embeddings.size() < 2)
        throw ContractError("collapse_metric needs >= 2 clients");
    const std::int64_t P = per_client_embeddings.front().cols();
    std::vector<std::vector<double>> means;
    for (const Tensor& e : per_client_embeddings) {
        if (e.ndim() != 2 || e.rows() < 1 || e.cols() != P)
            throw ShapeError("collapse_metric needs non-empty [B x P] embeddings");
        std::vector<double> m(static_cast<std::size_t>(P), 0.0);
        for (std::int64_t i = 0; i < e.rows(); ++i)
            for (std::int64_t j = 0; j < P; ++j) m[static_cast<std::size_t>(j)] += e.at(i, j);
        for (auto& v : m) v /= static_cast<double>(e.rows());
        means.push_back(std::move(m));
    }
    double total = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t a = 0; a < means.size(); ++a)
        for (std::size_t b = a + 1; b < means.size(); ++b) {
            double d2 = 0.0;
            for (std::int64_t j = 0; j < P; ++j) {
                const double d = means[a][static_cast<std::size_t>(j)] -
                                 means[b][static_cast<std::size_t>(j)];
                d2 += d * d;
            }
            total += std::sqrt(d2);
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

/// One client's evaluation-mode embeddings with their labels.
struct ClientEmbeddings {
    int client_id = 0;
    std::vector<int> labels;
    Tensor values;
};

/// CSV rows "client_id,label,e_1,...,e_P" with a header, for offline
/// visualization of the embedding space.
inline void export_embeddings(const std::vector<ClientEmbeddings>& clients, std::ostream& out) {
    if (clients.empty()) throw ContractError("export_embeddings needs >= 1 client");
    const std::int64_t P = clients.front().values.cols();
    out << "client_id,label";
    for (std::int64_t j = 1; j <= P; ++j) out << ",e_" << j;
    out << "\n";
    char buf[32];
    for (const auto& c : clients) {
        if (c.values.cols() != P) throw ShapeError("export_embeddings mixed P across clients");
        if (static_cast<std::int64_t>(c.labels.size()) != c.values.rows())
            throw ShapeError("export_embeddings label count mismatch for client " +
                             std::to_string(c.client_id));
        for (std::int64_t i = 0; i < c.values.rows(); ++i) {
            out << c.client_id << ',' << c.labels[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < P; ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", c.values.at(i, j));
                out << ',' << buf;
            }
            out << "\n";
        }
    }
}

} // namespace hfz
