#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hfz/error.hpp"

namespace hfz {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) {
        if (e < 0) throw ShapeError("negative extent in shape");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major tensor of doubles. Values are expected to stay finite;
/// validate_finite() is the hook ops use to surface NaN/Inf as errors.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_))
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
    bool empty() const { return data_.empty(); }

    std::int64_t rows() const {
        if (ndim() != 2) throw ShapeError("rows() on non-2D tensor " + shape_str(shape_));
        return shape_[0];
    }
    std::int64_t cols() const {
        if (ndim() != 2) throw ShapeError("cols() on non-2D tensor " + shape_str(shape_));
        return shape_[1];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

    /// Scalar value of a size-1 tensor.
    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Throws NumericError naming `what` if any entry is NaN/Inf.
    void validate_finite(const char* what) const {
        if (!all_finite())
            throw NumericError(std::string("non-finite value in ") + what);
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Debug dump: row-major CSV, one row per line (scalars/1D on a single line),
/// 17 significant digits so values round-trip exactly.
inline void write_csv(const Tensor& t, std::ostream& os) {
    char buf[40];
    const std::int64_t cols = t.ndim() == 2 ? t.cols() : t.size();
    for (std::int64_t i = 0; i < t.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", t[i]);
        os << buf;
        os << (((i + 1) % (cols == 0 ? 1 : cols) == 0) ? '\n' : ',');
    }
    if (t.size() == 0) os << '\n';
}

} // namespace hfz
