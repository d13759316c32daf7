#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "hfz/autodiff.hpp"
#include "hfz/error.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

/// One named tensor inside a flat parameter block.
struct ParamEntry {
    std::string name;
    Shape shape;
    std::int64_t offset = 0;

    std::int64_t size() const { return shape_size(shape); }
};

using Manifest = std::vector<ParamEntry>;

inline std::int64_t manifest_size(const Manifest& m) {
    std::int64_t n = 0;
    for (const auto& e : m) n += e.size();
    return n;
}

/// A parameter block stored as one contiguous vector. The manifest fixes the
/// canonical order: entries appear back to back at their recorded offsets.
/// Aggregation, checkpointing, and transport all operate on this layout, so
/// two blocks with equal manifests are element-wise compatible.
struct FlatParams {
    std::string name;
    Manifest manifest;
    std::vector<double> data;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    const ParamEntry& entry(const std::string& tensor_name) const {
        for (const auto& e : manifest)
            if (e.name == tensor_name) return e;
        throw ConfigError("no tensor '" + tensor_name + "' in block '" + name + "'");
    }

    Tensor tensor(const std::string& tensor_name) const {
        const ParamEntry& e = entry(tensor_name);
        return Tensor(e.shape,
                      std::vector<double>(data.begin() + e.offset,
                                          data.begin() + e.offset + e.size()));
    }

    void set_tensor(const std::string& tensor_name, const Tensor& t) {
        const ParamEntry& e = entry(tensor_name);
        if (t.shape() != e.shape)
            throw ShapeError("set_tensor shape mismatch for '" + tensor_name + "'");
        for (std::int64_t i = 0; i < t.size(); ++i) data[static_cast<std::size_t>(e.offset + i)] = t[i];
        bump_writes();
    }

    bool same_layout(const FlatParams& other) const {
        if (manifest.size() != other.manifest.size()) return false;
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            const auto& a = manifest[i];
            const auto& b = other.manifest[i];
            if (a.name != b.name || a.shape != b.shape || a.offset != b.offset) return false;
        }
        return data.size() == other.data.size();
    }

    static FlatParams zeros(std::string block_name, Manifest m) {
        FlatParams p;
        p.name = std::move(block_name);
        std::int64_t off = 0;
        for (auto& e : m) {
            e.offset = off;
            off += e.size();
        }
        p.manifest = std::move(m);
        p.data.assign(static_cast<std::size_t>(off), 0.0);
        return p;
    }

    /// Count of parameter-mutating calls (sgd_step, set_tensor, load).
    /// Zero-shot evaluation asserts this stays flat.
    static std::uint64_t write_count() { return writes_.load(); }
    static void bump_writes() { ++writes_; }

private:
    inline static std::atomic<std::uint64_t> writes_{0};
};

/// Tape handles for one parameter block, one Var per manifest entry.
struct LiftedParams {
    const FlatParams* source = nullptr;
    std::vector<Var> vars;

    Var var(const std::string& tensor_name) const {
        for (std::size_t i = 0; i < source->manifest.size(); ++i)
            if (source->manifest[i].name == tensor_name) return vars[i];
        throw ConfigError("no tensor '" + tensor_name + "' in lifted block '" + source->name + "'");
    }
};

/// Place every tensor of `p` on the tape as a leaf, preserving manifest order.
inline LiftedParams lift(Tape& tape, const FlatParams& p) {
    LiftedParams out;
    out.source = &p;
    out.vars.reserve(p.manifest.size());
    for (const auto& e : p.manifest) {
        Tensor t(e.shape, std::vector<double>(p.data.begin() + e.offset,
                                              p.data.begin() + e.offset + e.size()));
        out.vars.push_back(tape.leaf(std::move(t)));
    }
    return out;
}

/// Flatten the adjoints of a lifted block back into manifest order. Must run
/// after Tape::backward.
inline std::vector<double> collect_grads(const Tape& tape, const LiftedParams& lp) {
    std::vector<double> g;
    g.reserve(static_cast<std::size_t>(lp.source->size()));
    for (std::size_t i = 0; i < lp.vars.size(); ++i) {
        const Tensor& gi = tape.grad(lp.vars[i]);
        for (std::int64_t j = 0; j < gi.size(); ++j) g.push_back(gi[j]);
    }
    if (g.size() != lp.source->data.size())
        throw ContractError("collected gradient size mismatch for block '" + lp.source->name + "'");
    return g;
}

/// In-place p <- p - lr * g. Throws NumericError if the update would write
/// a non-finite value.
inline void sgd_step(FlatParams& p, const std::vector<double>& grad, double lr) {
    if (grad.size() != p.data.size())
        throw ShapeError("sgd_step gradient size mismatch for block '" + p.name + "'");
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double v = p.data[i] - lr * grad[i];
        if (!std::isfinite(v))
            throw NumericError("non-finite update in block '" + p.name + "'");
        p.data[i] = v;
    }
    FlatParams::bump_writes();
}

/// Weighted element-wise average of layout-identical blocks. Weights must be
/// positive and are normalized internally.
inline FlatParams weighted_average(const std::vector<const FlatParams*>& blocks,
                                   const std::vector<double>& weights) {
    if (blocks.empty() || blocks.size() != weights.size())
        throw ContractError("weighted_average needs matching non-empty blocks and weights");
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw ConfigError("aggregation weights must be positive");
        wsum += w;
    }
    FlatParams out = *blocks[0];
    for (auto& v : out.data) v = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (!blocks[b]->same_layout(out))
            throw ShapeError("weighted_average layout mismatch at block " + std::to_string(b));
        const double w = weights[b] / wsum;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += w * blocks[b]->data[i];
    }
    return out;
}

} // namespace hfz
