#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hfz/error.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

/// Identifies one logical random stream within an experiment.
/// Distinct labels give statistically independent streams; the same
/// (seed, label) always reproduces the same sequence.
struct StreamLabel {
    std::uint32_t client = 0;
    std::uint32_t round = 0;
    std::uint32_t purpose = 0;
};

namespace purpose {
// Stream purpose tags. kServer marks streams not owned by any client.
inline constexpr std::uint32_t init = 1;
inline constexpr std::uint32_t noise = 2;
inline constexpr std::uint32_t batch = 3;
inline constexpr std::uint32_t partition = 4;
inline constexpr std::uint32_t split = 5;
inline constexpr std::uint32_t synth = 6;
inline constexpr std::uint32_t holdout = 7;
inline constexpr std::uint32_t generic = 8;
} // namespace purpose

inline constexpr std::uint32_t kServer = 0xFFFFFFFFu;

namespace detail {

// SplitMix64 finalizer; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Counter-based random stream: the i-th output word is a pure function of
/// (seed, label, i), so value-copies of a stream advance independently and
/// parallel client execution reproduces serial results exactly.
///
/// Draw procedures (tests reimplement these against this contract):
///  - next_u64: mix64(key + (counter+1) * golden), counter starts at 0.
///  - uniform:  (next_u64 >> 11 + 1) * 2^-53, range (0, 1].
///  - gaussian: Box-Muller on two uniforms u1, u2 drawn in that order;
///              returns r*cos(2*pi*u2) first and caches r*sin(2*pi*u2),
///              r = sqrt(-2 ln u1).
///  - gamma(a>=1): Marsaglia-Tsang; per attempt draw gaussians until
///              v = (1+c*x)^3 > 0, then one uniform for the squeeze/accept.
///  - gamma(a<1): gamma(a+1) * uniform()^(1/a).
///  - dirichlet: k gamma draws in index order, normalized.
class RngStream {
public:
    RngStream(std::uint64_t seed, StreamLabel label) {
        std::uint64_t k = detail::mix64(seed);
        k = detail::mix64(k ^ (0x636c69656e740000ULL | label.client));
        k = detail::mix64(k ^ (0x726f756e64000000ULL | label.round));
        k = detail::mix64(k ^ (0x7075727000000000ULL | label.purpose));
        key_ = k;
    }

    std::uint64_t next_u64() {
        return detail::mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL);
    }

    /// Uniform double in (0, 1]; never returns 0 so log() is safe.
    double uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard normal draw (Box-Muller, pairs cached).
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    Tensor gaussian_tensor(Shape shape) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = gaussian();
        return t;
    }

    /// Unbiased integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) throw ContractError("uniform_int requires n > 0");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t lim = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= lim);
        return static_cast<std::int64_t>(r % un);
    }

    /// Gamma(alpha, 1) via Marsaglia-Tsang (alpha < 1 boosted through
    /// gamma(alpha+1) * U^(1/alpha)).
    double gamma(double alpha) {
        if (alpha <= 0.0) throw ContractError("gamma requires alpha > 0");
        if (alpha < 1.0) {
            const double g = gamma(alpha + 1.0);
            return g * std::pow(uniform(), 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = gaussian();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Symmetric Dirichlet(alpha * 1_k) via the gamma-ratio construction.
    std::vector<double> dirichlet(double alpha, std::int64_t k) {
        if (k < 1) throw ContractError("dirichlet requires k >= 1");
        std::vector<double> g(static_cast<std::size_t>(k));
        double sum = 0.0;
        for (auto& v : g) {
            v = gamma(alpha);
            sum += v;
        }
        if (sum <= 0.0) throw NumericError("dirichlet draw summed to zero");
        for (auto& v : g) v /= sum;
        return g;
    }

    /// In-place Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            const std::int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace hfz
