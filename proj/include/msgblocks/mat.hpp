#pragma once

// Dense row-major matrix of doubles plus the handful of linear-algebra
// kernels the rest of the library needs. Vectors are 1xN or Nx1 matrices.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace msgblocks {

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    std::size_t size() const { return v.size(); }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

inline void require_shape(const Mat& m, std::size_t r, std::size_t c, const char* what) {
    if (m.rows != r || m.cols != c) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(r) + "x" +
                                    std::to_string(c) + ", got " + m.shape_str());
    }
}

// C = A * B
inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: " + a.shape_str() + " * " + b.shape_str());
    }
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = &a.v[i * a.cols];
        double* crow = &c.v[i * b.cols];
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = &b.v[k * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// C = A^T * B
inline Mat matmul_at_b(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) {
        throw std::invalid_argument("matmul_at_b: " + a.shape_str() + " vs " + b.shape_str());
    }
    Mat c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = &a.v[k * a.cols];
        const double* brow = &b.v[k * b.cols];
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = &c.v[i * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

// C = A * B^T
inline Mat matmul_a_bt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) {
        throw std::invalid_argument("matmul_a_bt: " + a.shape_str() + " vs " + b.shape_str());
    }
    Mat c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = &a.v[i * a.cols];
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = &b.v[j * b.cols];
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c.v[i * b.rows + j] = s;
        }
    }
    return c;
}

inline void add_inplace(Mat& a, const Mat& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: " + a.shape_str() + " vs " + b.shape_str());
    }
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

inline bool all_finite(const Mat& m) {
    for (double x : m.v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// A named parameter: value plus accumulated gradient of identical shape.
struct Param {
    std::string name;
    Mat w;
    Mat g;

    Param() = default;
    Param(std::string n, std::size_t r, std::size_t c) : name(std::move(n)), w(r, c), g(r, c) {}

    void zero_grad() { g.zero(); }
};

} // namespace msgblocks
