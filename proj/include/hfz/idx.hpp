#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hfz/dataset.hpp"
#include "hfz/error.hpp"

namespace hfz {

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const std::string& field) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated IDX file while reading " + field);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::vector<unsigned char> read_bytes(std::istream& in, std::size_t n,
                                             const std::string& field) {
    std::vector<unsigned char> buf(n);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
        throw FormatError("truncated IDX file while reading " + field);
    return buf;
}

} // namespace detail

/// Reads an IDX image/label pair (big-endian; magic 0x00000803 for images,
/// 0x00000801 for labels). Pixels are scaled to [0,1] and images flattened
/// to rows x cols feature vectors. num_classes is 1 + max label.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("cannot open images file " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("cannot open labels file " + labels_path);

    const std::uint32_t img_magic = detail::read_u32_be(img, "images magic");
    if (img_magic != 0x00000803u)
        throw FormatError("bad images magic " + std::to_string(img_magic) + " in " + images_path);
    const std::uint32_t n_img = detail::read_u32_be(img, "image count");
    const std::uint32_t rows = detail::read_u32_be(img, "image rows");
    const std::uint32_t cols = detail::read_u32_be(img, "image cols");
    if (rows == 0 || cols == 0) throw FormatError("zero image dimensions in " + images_path);

    const std::uint32_t lab_magic = detail::read_u32_be(lab, "labels magic");
    if (lab_magic != 0x00000801u)
        throw FormatError("bad labels magic " + std::to_string(lab_magic) + " in " + labels_path);
    const std::uint32_t n_lab = detail::read_u32_be(lab, "label count");
    if (n_img != n_lab)
        throw FormatError("image count " + std::to_string(n_img) + " != label count " +
                          std::to_string(n_lab));

    const std::size_t dim = std::size_t(rows) * cols;
    auto pixels = detail::read_bytes(img, std::size_t(n_img) * dim, "pixel data");
    auto raw_labels = detail::read_bytes(lab, n_lab, "label data");

    Dataset d;
    d.features = Tensor({static_cast<std::int64_t>(n_img), static_cast<std::int64_t>(dim)});
    for (std::int64_t i = 0; i < d.features.size(); ++i)
        d.features[i] = pixels[static_cast<std::size_t>(i)] / 255.0;
    d.labels.reserve(n_lab);
    int max_label = 0;
    for (unsigned char y : raw_labels) {
        d.labels.push_back(static_cast<int>(y));
        max_label = std::max(max_label, static_cast<int>(y));
    }
    d.num_classes = max_label + 1;
    d.validate_source();
    return d;
}

} // namespace hfz
