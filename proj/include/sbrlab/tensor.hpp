// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sbrlab/common.hpp"

namespace sbrlab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
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

// Dense row-major 64-bit float tensor.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> d) {
        Shape s{d.size()};
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> d) {
        return Tensor({r, c}, std::move(d));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    bool is_scalar() const { return data.size() == 1; }
    double item() const {
        if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
        return data[0];
    }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_finite(const Tensor& t, const char* what) {
    if (!t.finite()) throw NonFiniteError(std::string("non-finite values in ") + what);
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace sbrlab
