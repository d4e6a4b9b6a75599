#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dhgcn/errors.hpp"

namespace dhgcn {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    if (s.empty()) throw ShapeError("empty shape");
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

/// Dense row-major tensor of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(Shape s)
        : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}

    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    Tensor(Shape s, std::initializer_list<double> d)
        : Tensor(std::move(s), std::vector<double>(d)) {}

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    int rows() const {
        if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_str(shape));
        return shape[0];
    }
    int cols() const {
        if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_str(shape));
        return shape[1];
    }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Tensor uniform_tensor(Shape s, double lo, double hi, std::mt19937_64& rng) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace dhgcn
