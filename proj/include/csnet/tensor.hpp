#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "csnet/error.hpp"

namespace csnet {

/// Extents of a rank-4 tensor, batch outermost: (n, c, h, w).
struct Shape4 {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t elems() const { return n * c * h * w; }

    bool operator==(const Shape4&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << n << "x" << c << "x" << h << "x" << w;
        return os.str();
    }

    void check_valid(const char* what) const {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw ShapeError(std::string(what) + ": all extents must be positive, got " + str());
        // guard n*c*h*w against overflow before trusting elems()
        const std::int64_t cap = std::numeric_limits<std::int64_t>::max();
        std::int64_t e = n;
        for (std::int64_t d : {c, h, w}) {
            if (e > cap / d) throw ShapeError(std::string(what) + ": element count overflows, " + str());
            e *= d;
        }
    }
};

/// Dense rank-4 tensor, row-major with n outermost and w innermost.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor() = default;

    explicit Tensor(Shape4 shape, T fill = T(0)) : shape_(shape) {
        shape.check_valid("Tensor");
        data_.assign(static_cast<std::size_t>(shape.elems()), fill);
    }

    Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        shape.check_valid("Tensor");
        if (static_cast<std::int64_t>(data_.size()) != shape.elems())
            throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape.str());
    }

    const Shape4& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(index(n, c, h, w))];
    }
    const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(index(n, c, h, w))];
    }

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    /// True when no element is NaN or infinite. A double-precision running sum
    /// propagates any non-finite value, so one pass suffices.
    bool all_finite() const {
        double s = 0.0;
        for (T v : data_) s += static_cast<double>(v);
        return std::isfinite(s);
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    Tensor<To> out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out.data()[i] = static_cast<To>(t.data()[i]);
    return out;
}

/// Deterministic random source. All derived draws are specified arithmetic on
/// mt19937_64 outputs, so sequences are identical across platforms and stdlib
/// versions, and the full state round-trips through serialize()/deserialize().
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; two draws per sample, no cached state.
    double gaussian() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n) by rejection, exactly unbiased.
    std::int64_t index(std::int64_t n) {
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % un;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<std::int64_t>(x % un);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const std::int64_t n = last - first;
        for (std::int64_t i = n - 1; i > 0; --i) std::swap(first[i], first[index(i + 1)]);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw FormatError("Rng: malformed serialized state");
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace csnet
