#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "hfz/dataset.hpp"
#include "hfz/idx.hpp"
#include "hfz/rng.hpp"

using hfz::Dataset;
using hfz::RngStream;
using hfz::Tensor;

namespace {

// Nearest-centroid accuracy: the Bayes rule for equal-covariance isotropic
// blobs, independent of any model code.
double nearest_centroid_accuracy(const Dataset& d) {
    Tensor means({d.num_classes, d.feature_dim()});
    std::vector<std::int64_t> counts(static_cast<std::size_t>(d.num_classes), 0);
    for (std::int64_t i = 0; i < d.size(); ++i) {
        const int y = d.labels[static_cast<std::size_t>(i)];
        ++counts[static_cast<std::size_t>(y)];
        for (std::int64_t j = 0; j < d.feature_dim(); ++j) means.at(y, j) += d.features.at(i, j);
    }
    for (int c = 0; c < d.num_classes; ++c)
        for (std::int64_t j = 0; j < d.feature_dim(); ++j)
            means.at(c, j) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < d.size(); ++i) {
        int best = 0;
        double best_dist = 1e300;
        for (int c = 0; c < d.num_classes; ++c) {
            double dist = 0;
            for (std::int64_t j = 0; j < d.feature_dim(); ++j) {
                const double diff = d.features.at(i, j) - means.at(c, j);
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = c;
            }
        }
        if (best == d.labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(d.size());
}

std::string temp_path(const std::string& name) { return testing::TempDir() + name; }

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_u32_be(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

} // namespace

TEST(SynthShifted, ShapeLabelsDeterminism) {
    Dataset d = hfz::synth_shifted(4, 10, 3, 2.0, 5);
    EXPECT_EQ(d.size(), 40);
    EXPECT_EQ(d.feature_dim(), 3);
    EXPECT_EQ(d.num_classes, 4);
    for (std::int64_t i = 0; i < d.size(); ++i)
        EXPECT_EQ(d.labels[static_cast<std::size_t>(i)], static_cast<int>(i / 10));
    Dataset d2 = hfz::synth_shifted(4, 10, 3, 2.0, 5);
    for (std::int64_t i = 0; i < d.features.size(); ++i)
        EXPECT_EQ(d.features[i], d2.features[i]);
    Dataset d3 = hfz::synth_shifted(4, 10, 3, 2.0, 6);
    bool any_diff = false;
    for (std::int64_t i = 0; i < d.features.size() && !any_diff; ++i)
        any_diff = d.features[i] != d3.features[i];
    EXPECT_TRUE(any_diff);
}

TEST(SynthShifted, DrawOrderContract) {
    const int C = 3, S = 4, D = 2;
    const double spread = 1.5, ramp = 1.0;
    Dataset d = hfz::synth_shifted(C, S, D, spread, 42, ramp);
    RngStream rng(42, {0, 0, hfz::purpose::synth});
    Tensor centers({C, D});
    for (std::int64_t i = 0; i < centers.size(); ++i) centers[i] = spread * rng.gaussian();
    std::int64_t row = 0;
    for (int c = 0; c < C; ++c) {
        const double scale = 1.0 + ramp * c / (C - 1.0);
        for (int s = 0; s < S; ++s, ++row)
            for (int j = 0; j < D; ++j)
                EXPECT_EQ(d.features.at(row, j), centers.at(c, j) + scale * rng.gaussian());
    }
}

TEST(SynthShifted, SpreadControlsSeparability) {
    Dataset wide = hfz::synth_shifted(2, 400, 2, 4.0, 3);
    EXPECT_GE(nearest_centroid_accuracy(wide), 0.95);
    Dataset collapsed = hfz::synth_shifted(2, 400, 2, 0.0, 3);
    EXPECT_LT(nearest_centroid_accuracy(collapsed), 0.65);
}

TEST(SynthShifted, NoiseRampScalesPerClassVariance) {
    const int C = 3, S = 2000, D = 2;
    Dataset d = hfz::synth_shifted(C, S, D, 5.0, 9, 2.0);
    for (int c = 0; c < C; ++c) {
        double mean_sq = 0.0;
        double mean[2] = {0.0, 0.0};
        for (int s = 0; s < S; ++s)
            for (int j = 0; j < D; ++j) mean[j] += d.features.at(c * S + s, j) / S;
        for (int s = 0; s < S; ++s)
            for (int j = 0; j < D; ++j) {
                const double diff = d.features.at(c * S + s, j) - mean[j];
                mean_sq += diff * diff / (S * D);
            }
        const double scale = 1.0 + 2.0 * c / (C - 1.0);
        EXPECT_NEAR(mean_sq, scale * scale, 0.15 * scale * scale) << "class " << c;
    }
}

TEST(SynthShifted, RejectsBadArguments) {
    EXPECT_THROW(hfz::synth_shifted(0, 5, 2, 1.0, 1), hfz::ConfigError);
    EXPECT_THROW(hfz::synth_shifted(2, 0, 2, 1.0, 1), hfz::ConfigError);
    EXPECT_THROW(hfz::synth_shifted(2, 5, 0, 1.0, 1), hfz::ConfigError);
    EXPECT_THROW(hfz::synth_shifted(2, 5, 2, -1.0, 1), hfz::ConfigError);
    EXPECT_THROW(hfz::synth_shifted(2, 5, 2, 1.0, 1, -0.5), hfz::ConfigError);
}

TEST(DatasetTest, ValidateSource) {
    Dataset d;
    d.features = Tensor({3, 2}, {0, 0, 1, 1, 2, 2});
    d.labels = {0, 1, 1};
    d.num_classes = 2;
    EXPECT_NO_THROW(d.validate_source());
    d.num_classes = 3;
    EXPECT_THROW(d.validate_source(), hfz::DataError);  // class 2 absent
    d.num_classes = 1;
    EXPECT_THROW(d.check_range(), hfz::DataError);  // label 1 out of range
    d.num_classes = 2;
    d.labels = {0, 1};
    EXPECT_THROW(d.check_range(), hfz::DataError);  // count mismatch
    d.labels = {0, 1, 1};
    d.features = Tensor({3, 0});
    EXPECT_THROW(d.check_range(), hfz::DataError);  // zero feature dim
}

TEST(DatasetTest, SelectGathersInOrder) {
    Dataset d;
    d.features = Tensor({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
    d.labels = {0, 1, 0, 1};
    d.num_classes = 2;
    Dataset s = hfz::select(d, {3, 0, 3});
    EXPECT_EQ(s.size(), 3);
    EXPECT_EQ(s.features.at(0, 1), 31.0);
    EXPECT_EQ(s.features.at(1, 0), 0.0);
    EXPECT_EQ(s.features.at(2, 0), 30.0);
    EXPECT_EQ(s.labels[0], 1);
    EXPECT_EQ(s.labels[1], 0);
    EXPECT_THROW(hfz::select(d, {4}), hfz::IndexError);
    EXPECT_THROW(hfz::select(d, {-1}), hfz::IndexError);
}

TEST(Idx, RoundTrip) {
    // Three 2x2 images with distinct pixel values, labels 0..2.
    std::vector<unsigned char> img;
    push_u32_be(img, 0x00000803u);
    push_u32_be(img, 3);
    push_u32_be(img, 2);
    push_u32_be(img, 2);
    for (unsigned char p = 0; p < 12; ++p) img.push_back(static_cast<unsigned char>(p * 20));
    std::vector<unsigned char> lab;
    push_u32_be(lab, 0x00000801u);
    push_u32_be(lab, 3);
    lab.insert(lab.end(), {0, 1, 2});
    const std::string img_path = temp_path("t10k-images.idx");
    const std::string lab_path = temp_path("t10k-labels.idx");
    write_file(img_path, img);
    write_file(lab_path, lab);

    Dataset d = hfz::load_idx(img_path, lab_path);
    EXPECT_EQ(d.size(), 3);
    EXPECT_EQ(d.feature_dim(), 4);
    EXPECT_EQ(d.num_classes, 3);
    for (std::int64_t i = 0; i < 12; ++i)
        EXPECT_DOUBLE_EQ(d.features[i], (i * 20) / 255.0);
    EXPECT_EQ(d.labels[2], 2);
}

TEST(Idx, RejectsMalformedFiles) {
    std::vector<unsigned char> img;
    push_u32_be(img, 0x00000803u);
    push_u32_be(img, 2);
    push_u32_be(img, 1);
    push_u32_be(img, 1);
    img.push_back(10);
    img.push_back(20);
    std::vector<unsigned char> lab;
    push_u32_be(lab, 0x00000801u);
    push_u32_be(lab, 2);
    lab.insert(lab.end(), {0, 1});
    const std::string img_path = temp_path("ok-images.idx");
    const std::string lab_path = temp_path("ok-labels.idx");
    write_file(img_path, img);
    write_file(lab_path, lab);
    EXPECT_NO_THROW(hfz::load_idx(img_path, lab_path));

    EXPECT_THROW(hfz::load_idx(temp_path("missing.idx"), lab_path), hfz::FormatError);

    std::vector<unsigned char> bad_magic = img;
    bad_magic[3] = 0x07;
    write_file(temp_path("badmagic.idx"), bad_magic);
    EXPECT_THROW(hfz::load_idx(temp_path("badmagic.idx"), lab_path), hfz::FormatError);

    std::vector<unsigned char> truncated(img.begin(), img.end() - 1);
    write_file(temp_path("trunc.idx"), truncated);
    EXPECT_THROW(hfz::load_idx(temp_path("trunc.idx"), lab_path), hfz::FormatError);

    std::vector<unsigned char> lab3;
    push_u32_be(lab3, 0x00000801u);
    push_u32_be(lab3, 3);
    lab3.insert(lab3.end(), {0, 1, 1});
    write_file(temp_path("count3.idx"), lab3);
    EXPECT_THROW(hfz::load_idx(img_path, temp_path("count3.idx")), hfz::FormatError);
}
