#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "hfz/autodiff.hpp"
#include "hfz/error.hpp"
#include "hfz/flat_params.hpp"
#include "hfz/mlp.hpp"
#include "hfz/rng.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

struct ChunkLayout {
    std::int64_t num_chunks = 0;
    std::int64_t padding = 0;
};

/// num_chunks = ceil(total / chunk_size); padding is the generated surplus
/// truncated from the tail.
inline ChunkLayout chunk_layout(std::int64_t total_params, std::int64_t chunk_size) {
    if (total_params < 1 || chunk_size < 1)
        throw ConfigError("chunk_layout needs positive total_params and chunk_size");
    ChunkLayout l;
    l.num_chunks = (total_params + chunk_size - 1) / chunk_size;
    l.padding = l.num_chunks * chunk_size - total_params;
    return l;
}

/// Chunked hypernetwork: a trunk MLP (P + d_chunk) -> hidden -> chunk_size
/// evaluated once per chunk, conditioned on [e || chunk_embeddings[j]]. The
/// learnable chunk embeddings are stored inside theta_h (entry "chunks") so
/// aggregation and checkpointing treat the whole hypernetwork as one block.
struct HypernetParams {
    MlpArch trunk;
    std::int64_t d_chunk = 0;
    std::int64_t num_chunks = 0;
    std::int64_t total_params = 0;
    FlatParams theta_h;

    std::int64_t chunk_size() const { return trunk.out_dim(); }
    std::int64_t embed_dim() const { return trunk.in_dim() - d_chunk; }
};

/// Draw order: trunk weights via init_mlp (final layer scaled by 0.01 so
/// freshly generated classifiers start near zero), then chunk embeddings
/// N(0, 0.1^2) row-major.
inline HypernetParams init_hypernet(std::int64_t P, std::int64_t d_chunk, std::int64_t chunk_size,
                                    const std::vector<std::int64_t>& trunk_hidden,
                                    const MlpArch& classifier, RngStream& rng) {
    if (P < 1 || d_chunk < 1) throw ConfigError("hypernet needs P >= 1 and d_chunk >= 1");
    HypernetParams h;
    std::vector<std::int64_t> dims;
    dims.push_back(P + d_chunk);
    dims.insert(dims.end(), trunk_hidden.begin(), trunk_hidden.end());
    dims.push_back(chunk_size);
    h.trunk = MlpArch(dims);
    h.d_chunk = d_chunk;
    h.total_params = classifier.param_count();
    h.num_chunks = chunk_layout(h.total_params, chunk_size).num_chunks;

    FlatParams trunk_params = init_mlp(h.trunk, "theta_h", rng, 0.01);
    Manifest manifest = trunk_params.manifest;
    manifest.push_back({"chunks", {h.num_chunks, d_chunk}, trunk_params.size()});
    h.theta_h = FlatParams::zeros("theta_h", std::move(manifest));
    std::copy(trunk_params.data.begin(), trunk_params.data.end(), h.theta_h.data.begin());
    for (std::size_t i = static_cast<std::size_t>(trunk_params.size()); i < h.theta_h.data.size();
         ++i)
        h.theta_h.data[i] = 0.1 * rng.gaussian();
    FlatParams::bump_writes();
    return h;
}

/// Generate per-sample flat classifier parameters for a batch of embeddings:
/// e [B x P] -> [B x total_params]. Chunk outputs are concatenated in chunk
/// order and truncated to total_params, so padding positions cannot reach
/// the classifier. Differentiable w.r.t. theta_h and e.
inline Var generate_batch(Tape& tape, const HypernetParams& meta, const LiftedParams& theta_h,
                          Var e) {
    const Tensor& ev = tape.value(e);
    if (ev.ndim() != 2 || ev.cols() != meta.embed_dim())
        throw ConfigError("generate: embedding width " + std::to_string(ev.cols()) +
                          " does not match trunk input minus d_chunk (" +
                          std::to_string(meta.embed_dim()) + ")");
    const std::int64_t B = ev.rows();
    Var chunks = theta_h.var("chunks");
    Var full;
    for (std::int64_t j = 0; j < meta.num_chunks; ++j) {
        Var row = tape.slice_rows(chunks, j, 1);
        Var tiled = tape.repeat_rows(row, B);
        Var out_j = mlp_forward(tape, meta.trunk, theta_h, tape.concat_cols(e, tiled));
        full = (j == 0) ? out_j : tape.concat_cols(full, out_j);
    }
    if (meta.num_chunks * meta.chunk_size() == meta.total_params) return full;
    return tape.slice_cols(full, 0, meta.total_params);
}

/// Tape-free generate for evaluation. Same arithmetic as generate_batch.
inline Tensor generate_eval(const HypernetParams& meta, const Tensor& e) {
    if (e.ndim() != 2 || e.cols() != meta.embed_dim())
        throw ConfigError("generate: embedding width mismatch");
    const std::int64_t B = e.rows();
    Tensor chunks = meta.theta_h.tensor("chunks");
    Tensor out({B, meta.total_params});
    Tensor in({B, meta.trunk.in_dim()});
    for (std::int64_t j = 0; j < meta.num_chunks; ++j) {
        for (std::int64_t i = 0; i < B; ++i) {
            for (std::int64_t k = 0; k < e.cols(); ++k) in.at(i, k) = e.at(i, k);
            for (std::int64_t k = 0; k < meta.d_chunk; ++k)
                in.at(i, e.cols() + k) = chunks.at(j, k);
        }
        Tensor chunk_out = mlp_eval(meta.trunk, meta.theta_h, in);
        const std::int64_t base = j * meta.chunk_size();
        for (std::int64_t i = 0; i < B; ++i)
            for (std::int64_t k = 0; k < meta.chunk_size() && base + k < meta.total_params; ++k)
                out.at(i, base + k) = chunk_out.at(i, k);
    }
    return out;
}

/// Forward through per-sample generated classifiers: sample i of x uses row
/// i of gen as its own flat parameter vector (canonical layer-major layout).
inline Var forward_generated(Tape& tape, const MlpArch& classifier, Var x, Var gen) {
    const Tensor& xv = tape.value(x);
    const Tensor& gv = tape.value(gen);
    if (gv.cols() != classifier.param_count())
        throw ShapeError("generated parameter length " + std::to_string(gv.cols()) +
                         " != classifier total " + std::to_string(classifier.param_count()));
    if (xv.rows() != gv.rows())
        throw ShapeError("forward_generated batch mismatch between x and generated params");
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(xv.rows()));
    for (std::int64_t i = 0; i < xv.rows(); ++i) {
        Var h = tape.slice_rows(x, i, 1);
        Var gi = tape.slice_rows(gen, i, 1);
        std::int64_t off = 0;
        for (std::int64_t l = 0; l < classifier.layers(); ++l) {
            const std::int64_t in = classifier.dims[static_cast<std::size_t>(l)];
            const std::int64_t out = classifier.dims[static_cast<std::size_t>(l) + 1];
            Var w = tape.reshape(tape.slice_cols(gi, off, in * out), {in, out});
            off += in * out;
            Var b = tape.slice_cols(gi, off, out);
            off += out;
            h = tape.add(tape.matmul(h, w), b);
            if (l + 1 < classifier.layers()) h = tape.relu(h);
        }
        rows.push_back(h);
    }
    return tape.stack_rows(rows);
}

/// Tape-free per-sample forward. Same arithmetic as forward_generated.
inline Tensor forward_generated_eval(const MlpArch& classifier, const Tensor& x,
                                     const Tensor& gen) {
    if (gen.cols() != classifier.param_count())
        throw ShapeError("generated parameter length mismatch");
    if (x.rows() != gen.rows()) throw ShapeError("forward_generated batch mismatch");
    Tensor out({x.rows(), classifier.out_dim()});
    std::vector<double> h, next;
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        h.assign(x.data() + i * x.cols(), x.data() + (i + 1) * x.cols());
        const double* g = gen.data() + i * gen.cols();
        std::int64_t off = 0;
        for (std::int64_t l = 0; l < classifier.layers(); ++l) {
            const std::int64_t in = classifier.dims[static_cast<std::size_t>(l)];
            const std::int64_t width = classifier.dims[static_cast<std::size_t>(l) + 1];
            next.assign(static_cast<std::size_t>(width), 0.0);
            for (std::int64_t a = 0; a < in; ++a) {
                const double xa = h[static_cast<std::size_t>(a)];
                if (xa == 0.0) continue;
                const double* wrow = g + off + a * width;
                for (std::int64_t b = 0; b < width; ++b)
                    next[static_cast<std::size_t>(b)] += xa * wrow[b];
            }
            off += in * width;
            for (std::int64_t b = 0; b < width; ++b) next[static_cast<std::size_t>(b)] += g[off + b];
            off += width;
            if (l + 1 < classifier.layers())
                for (auto& v : next) v = v > 0.0 ? v : 0.0;
            h = next;
        }
        for (std::int64_t b = 0; b < classifier.out_dim(); ++b)
            out.at(i, b) = h[static_cast<std::size_t>(b)];
    }
    out.validate_finite("forward_generated_eval");
    return out;
}

/// Input-conditioning baseline: a shared classifier on [x || e].
inline Var forward_opt1(Tape& tape, const MlpArch& arch_aug, const LiftedParams& theta_c, Var x,
                        Var e) {
    const Tensor& xv = tape.value(x);
    const Tensor& ev = tape.value(e);
    if (arch_aug.in_dim() != xv.cols() + ev.cols())
        throw ShapeError("opt1 classifier input width " + std::to_string(arch_aug.in_dim()) +
                         " != feature_dim + P (" + std::to_string(xv.cols() + ev.cols()) + ")");
    return mlp_forward(tape, arch_aug, theta_c, tape.concat_cols(x, e));
}

inline Tensor forward_opt1_eval(const MlpArch& arch_aug, const FlatParams& theta_c,
                                const Tensor& x, const Tensor& e) {
    if (arch_aug.in_dim() != x.cols() + e.cols())
        throw ShapeError("opt1 classifier input width mismatch");
    Tensor joined({x.rows(), x.cols() + e.cols()});
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        for (std::int64_t j = 0; j < x.cols(); ++j) joined.at(i, j) = x.at(i, j);
        for (std::int64_t j = 0; j < e.cols(); ++j) joined.at(i, x.cols() + j) = e.at(i, j);
    }
    return mlp_eval(arch_aug, theta_c, joined);
}

struct BudgetReport {
    std::int64_t theta_f = 0;
    std::int64_t theta_noisy = 0;
    std::int64_t theta_h = 0;
    std::int64_t generated_side = 0;
    std::int64_t theta_c = 0;
    double ratio = 0.0;
};

/// Exact parameter counts of the generated side (extractor + noisy net +
/// hypernetwork incl. chunk embeddings) against the plain classifier.
inline BudgetReport param_budget(const MlpArch& classifier, const MlpArch& extractor,
                                 const MlpArch& trunk, std::int64_t d_chunk) {
    BudgetReport r;
    r.theta_c = classifier.param_count();
    r.theta_f = extractor.param_count();
    r.theta_noisy = extractor.param_count();
    const ChunkLayout layout = chunk_layout(r.theta_c, trunk.out_dim());
    r.theta_h = trunk.param_count() + layout.num_chunks * d_chunk;
    r.generated_side = r.theta_f + r.theta_noisy + r.theta_h;
    r.ratio = static_cast<double>(r.generated_side) / static_cast<double>(r.theta_c);
    return r;
}

} // namespace hfz
