#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hfz/autodiff.hpp"
#include "hfz/error.hpp"
#include "hfz/flat_params.hpp"
#include "hfz/rng.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

/// Fully connected ReLU network: dims = {in, hidden..., out}. Hidden layers
/// apply ReLU, the output layer is linear.
struct MlpArch {
    std::vector<std::int64_t> dims;

    MlpArch() = default;
    explicit MlpArch(std::vector<std::int64_t> d) : dims(std::move(d)) {
        if (dims.size() < 2) throw ConfigError("MlpArch needs at least input and output dims");
        for (auto v : dims)
            if (v < 1) throw ConfigError("MlpArch dims must be >= 1");
    }

    std::int64_t layers() const { return static_cast<std::int64_t>(dims.size()) - 1; }
    std::int64_t in_dim() const { return dims.front(); }
    std::int64_t out_dim() const { return dims.back(); }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
        return n;
    }

    /// Canonical layout: for each layer l, weight "L<l>.W" [in x out]
    /// row-major, then bias "L<l>.b" [out].
    Manifest manifest() const {
        Manifest m;
        std::int64_t off = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const std::string tag = "L" + std::to_string(l);
            m.push_back({tag + ".W", {dims[l], dims[l + 1]}, off});
            off += dims[l] * dims[l + 1];
            m.push_back({tag + ".b", {dims[l + 1]}, off});
            off += dims[l + 1];
        }
        return m;
    }
};

/// Fan-in uniform init: each weight of layer l is an independent draw
/// bound * (2u - 1) with u = rng.uniform() and bound = 1/sqrt(fan_in),
/// filled in manifest order (weights row-major, then bias). Biases stay 0.
/// The final layer's weights are additionally multiplied by final_scale,
/// which hypernetwork trunks use to start near-zero.
inline FlatParams init_mlp(const MlpArch& arch, const std::string& block_name, RngStream& rng,
                           double final_scale = 1.0) {
    FlatParams p = FlatParams::zeros(block_name, arch.manifest());
    const std::int64_t last = arch.layers() - 1;
    for (std::int64_t l = 0; l <= last; ++l) {
        const ParamEntry& w = p.entry("L" + std::to_string(l) + ".W");
        const double bound = 1.0 / std::sqrt(static_cast<double>(arch.dims[static_cast<std::size_t>(l)]));
        const double scale = (l == last) ? final_scale : 1.0;
        for (std::int64_t i = 0; i < w.size(); ++i)
            p.data[static_cast<std::size_t>(w.offset + i)] =
                scale * bound * (2.0 * rng.uniform() - 1.0);
    }
    FlatParams::bump_writes();
    return p;
}

/// Tape-tracked forward pass. x is [batch x in]; returns [batch x out] logits.
inline Var mlp_forward(Tape& tape, const MlpArch& arch, const LiftedParams& params, Var x) {
    Var h = x;
    for (std::int64_t l = 0; l < arch.layers(); ++l) {
        const std::string tag = "L" + std::to_string(l);
        h = tape.add_rowvec(tape.matmul(h, params.var(tag + ".W")), params.var(tag + ".b"));
        if (l + 1 < arch.layers()) h = tape.relu(h);
    }
    return h;
}

/// Tape-free forward pass for evaluation. Same arithmetic as mlp_forward.
inline Tensor mlp_eval(const MlpArch& arch, const FlatParams& params, const Tensor& x) {
    if (x.ndim() != 2 || x.cols() != arch.in_dim())
        throw ShapeError("mlp_eval input shape " + shape_str(x.shape()) + " does not match in_dim " +
                         std::to_string(arch.in_dim()));
    Tensor h = x;
    for (std::int64_t l = 0; l < arch.layers(); ++l) {
        const std::string tag = "L" + std::to_string(l);
        Tensor w = params.tensor(tag + ".W");
        Tensor b = params.tensor(tag + ".b");
        Tensor next = Tape::mm_nn(h, w);
        for (std::int64_t i = 0; i < next.rows(); ++i)
            for (std::int64_t j = 0; j < next.cols(); ++j) next.at(i, j) += b[j];
        if (l + 1 < arch.layers())
            for (std::int64_t i = 0; i < next.size(); ++i)
                next[i] = next[i] > 0.0 ? next[i] : 0.0;
        h = std::move(next);
    }
    h.validate_finite("mlp_eval");
    return h;
}

} // namespace hfz
