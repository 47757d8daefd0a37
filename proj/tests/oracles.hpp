// Test-only reference implementations. Deliberately written as plain direct
// loops, independent of the library's computation paths.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "infodrop/tensor.hpp"

namespace oracles {

using infodrop::Tensor;

// Direct six-loop convolution with zero padding.
inline Tensor conv_oracle(const Tensor& in, const Tensor& kernel, const Tensor& bias,
                          std::size_t stride, std::size_t pad) {
    const std::size_t c_in = in.dim(0), h = in.dim(1), w = in.dim(2);
    const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (w + 2 * pad - k) / stride + 1;
    Tensor out({c_out, ho, wo});
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < c_in; ++ci)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            long iy = long(oy * stride + ky) - long(pad);
                            long ix = long(ox * stride + kx) - long(pad);
                            if (iy < 0 || iy >= long(h) || ix < 0 || ix >= long(w)) continue;
                            acc += in.at(ci, iy, ix) *
                                   kernel.data[((co * c_in + ci) * k + ky) * k + kx];
                        }
                out.at(co, oy, ox) = acc;
            }
    return out;
}

// Zero-padded patch by explicit index arithmetic.
inline std::vector<double> patch_oracle(const Tensor& in, std::size_t oy, std::size_t ox,
                                        std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
    std::vector<double> p(c * k * k, 0.0);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                long iy = long(oy * stride + ky) - long(pad);
                long ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || iy >= long(h) || ix < 0 || ix >= long(w)) continue;
                p[(ci * k + ky) * k + kx] = in.at(ci, iy, ix);
            }
    return p;
}

// Brute-force KDE self-information: double loop over the full grid, square
// Chebyshev window, mean-normalized Gaussian kernel sum. No subsampling.
inline Tensor kde_info_oracle(const Tensor& in, std::size_t k, std::size_t stride,
                              std::size_t pad, std::size_t radius, double bandwidth) {
    const std::size_t h = in.dim(1), w = in.dim(2);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (w + 2 * pad - k) / stride + 1;
    Tensor info({ho, wo});
    for (std::size_t jy = 0; jy < ho; ++jy)
        for (std::size_t jx = 0; jx < wo; ++jx) {
            std::vector<double> pj = patch_oracle(in, jy, jx, k, stride, pad);
            double sum = 0.0;
            std::size_t count = 0;
            for (std::size_t qy = 0; qy < ho; ++qy)
                for (std::size_t qx = 0; qx < wo; ++qx) {
                    long dy = long(qy) - long(jy), dx = long(qx) - long(jx);
                    if (std::labs(dy) > long(radius) || std::labs(dx) > long(radius)) continue;
                    std::vector<double> pq = patch_oracle(in, qy, qx, k, stride, pad);
                    double d2 = 0.0;
                    for (std::size_t i = 0; i < pj.size(); ++i) {
                        double d = pj[i] - pq[i];
                        d2 += d * d;
                    }
                    sum += std::exp(-d2 / (2.0 * bandwidth * bandwidth));
                    ++count;
                }
            info.at(jy, jx) = -std::log(sum / double(count));
        }
    return info;
}

// Central finite difference of a scalar function with respect to x[i].
inline double central_diff(std::vector<double>& x, std::size_t i,
                           const std::function<double()>& f, double eps = 1e-5) {
    double orig = x[i];
    x[i] = orig + eps;
    double fp = f();
    x[i] = orig - eps;
    double fm = f();
    x[i] = orig;
    return (fp - fm) / (2.0 * eps);
}

// Relative error suited to gradient checks: absolute when both values are
// small, relative otherwise.
inline double rel_err(double analytic, double numeric) {
    double denom = std::max(std::abs(analytic), std::abs(numeric));
    if (denom < 1e-6) return std::abs(analytic - numeric);
    return std::abs(analytic - numeric) / denom;
}

// Orthonormal 2-D DCT-II of an n-by-n block, direct quadruple loop.
inline std::vector<double> dct2_oracle(const std::vector<double>& block, std::size_t n) {
    std::vector<double> out(n * n, 0.0);
    const double pi = 3.14159265358979323846;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
            double acc = 0.0;
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x)
                    acc += block[y * n + x] * std::cos(pi * (2.0 * y + 1.0) * u / (2.0 * n)) *
                           std::cos(pi * (2.0 * x + 1.0) * v / (2.0 * n));
            double au = u == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
            double av = v == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
            out[u * n + v] = au * av * acc;
        }
    return out;
}

}  // namespace oracles
