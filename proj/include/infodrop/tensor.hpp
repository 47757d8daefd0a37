#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace infodrop {

// Dense row-major tensor of doubles. Rank-3 (c,h,w) activation maps and
// rank-4 (c_out,c_in,k,k) kernels are the common cases; rank is dynamic.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // rank-2 (h,w)
    double& at(std::size_t y, std::size_t x) { return data[y * shape[1] + x]; }
    double at(std::size_t y, std::size_t x) const { return data[y * shape[1] + x]; }
    // rank-3 (c,h,w)
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * shape[1] + y) * shape[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

inline void require_shape(const Tensor& t, const std::vector<std::size_t>& s,
                          const char* what) {
    if (t.shape != s)
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(s) +
                                    ", got " + shape_str(t.shape));
}

inline void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite())
        throw std::domain_error(std::string(what) + ": non-finite value in tensor");
}

}  // namespace infodrop
