#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <vector>

#include "mixseg/common.hpp"
#include "mixseg/rng.hpp"

namespace mixseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense n-dimensional array, row-major. The grad buffer is empty until a
// backward pass populates it; when present it has the same length as data.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0))
        : shape(std::move(s)), data(shape_numel(shape), fill) {}

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
    static Tensor from(Shape s, std::vector<T> values) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(values);
        if (shape_numel(t.shape) != t.data.size())
            throw ConfigError("tensor data length does not match shape " + shape_str(t.shape));
        return t;
    }
    static Tensor randn(Shape s, Rng& rng, double mean = 0.0, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // 4-D accessors for tests and oracles; hot paths use raw pointers.
    T& at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        assert(rank() == 4);
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    T at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        assert(rank() == 4);
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    T& at3(std::size_t c, std::size_t y, std::size_t x) {
        assert(rank() == 3);
        return data[(c * shape[1] + y) * shape[2] + x];
    }
    T at3(std::size_t c, std::size_t y, std::size_t x) const {
        assert(rank() == 3);
        return data[(c * shape[1] + y) * shape[2] + x];
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

}  // namespace mixseg
