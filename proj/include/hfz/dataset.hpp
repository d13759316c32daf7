#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hfz/error.hpp"
#include "hfz/rng.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

/// A labeled dataset: features [n x d], integer labels in [0, num_classes).
struct Dataset {
    Tensor features;
    std::vector<int> labels;
    int num_classes = 0;

    std::int64_t size() const { return features.rows(); }
    std::int64_t feature_dim() const { return features.cols(); }

    /// Source-dataset invariants: label range, every class present, d > 0.
    /// Derived subsets (client shards, holdouts) may miss classes and are
    /// only range-checked.
    void validate_source() const {
        check_range();
        std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
        for (int y : labels) seen[static_cast<std::size_t>(y)] = true;
        for (int c = 0; c < num_classes; ++c)
            if (!seen[static_cast<std::size_t>(c)])
                throw DataError("class " + std::to_string(c) + " absent from source dataset");
    }

    void check_range() const {
        if (features.ndim() != 2 || feature_dim() < 1)
            throw DataError("dataset features must be [n x d] with d > 0");
        if (static_cast<std::int64_t>(labels.size()) != size())
            throw DataError("dataset has " + std::to_string(size()) + " feature rows but " +
                            std::to_string(labels.size()) + " labels");
        if (num_classes < 1) throw DataError("dataset num_classes must be >= 1");
        for (int y : labels)
            if (y < 0 || y >= num_classes)
                throw DataError("label " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
    }
};

/// Rows of `d` at the given indices, in the given order.
inline Dataset select(const Dataset& d, const std::vector<std::int64_t>& indices) {
    Dataset out;
    out.num_classes = d.num_classes;
    out.features = Tensor({static_cast<std::int64_t>(indices.size()), d.feature_dim()});
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t src = indices[i];
        if (src < 0 || src >= d.size())
            throw IndexError("select index " + std::to_string(src) + " outside dataset of size " +
                             std::to_string(d.size()));
        for (std::int64_t j = 0; j < d.feature_dim(); ++j)
            out.features.at(static_cast<std::int64_t>(i), j) = d.features.at(src, j);
        out.labels.push_back(d.labels[static_cast<std::size_t>(src)]);
    }
    return out;
}

/// Gaussian blobs with one center per class; the desk-scale stand-in for
/// image benchmarks. Centers are spread * N(0, I) draws made once per seed.
/// Sample noise is isotropic with per-class scale 1 + noise_ramp * c / (C-1)
/// (unit noise everywhere when noise_ramp = 0, the default). A nonzero ramp
/// makes class covariances unequal, so the Bayes boundary is curved and
/// per-sample generated classifiers have something to gain over one shared
/// linear map.
///
/// Draw order on stream (seed, {0, 0, synth}): centers class-major then
/// dim-major, then samples class-major, sample-major, dim-major.
inline Dataset synth_shifted(int num_classes, int samples_per_class, int feature_dim,
                             double class_center_spread, std::uint64_t seed,
                             double noise_ramp = 0.0) {
    if (num_classes < 1 || samples_per_class < 1 || feature_dim < 1)
        throw ConfigError("synth_shifted counts must be positive");
    if (class_center_spread < 0.0 || noise_ramp < 0.0)
        throw ConfigError("synth_shifted spread and noise_ramp must be >= 0");
    RngStream rng(seed, {0, 0, purpose::synth});

    Tensor centers({num_classes, feature_dim});
    for (std::int64_t i = 0; i < centers.size(); ++i)
        centers[i] = class_center_spread * rng.gaussian();

    Dataset d;
    d.num_classes = num_classes;
    const std::int64_t n = static_cast<std::int64_t>(num_classes) * samples_per_class;
    d.features = Tensor({n, static_cast<std::int64_t>(feature_dim)});
    d.labels.reserve(static_cast<std::size_t>(n));
    std::int64_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        const double scale =
            1.0 + (num_classes > 1 ? noise_ramp * c / (num_classes - 1.0) : 0.0);
        for (int s = 0; s < samples_per_class; ++s, ++row) {
            for (int j = 0; j < feature_dim; ++j)
                d.features.at(row, j) = centers.at(c, j) + scale * rng.gaussian();
            d.labels.push_back(c);
        }
    }
    d.validate_source();
    return d;
}

} // namespace hfz
