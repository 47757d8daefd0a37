#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "infodrop/rng.hpp"
#include "infodrop/tensor.hpp"

namespace infodrop {

enum class InfoDropMode { train, eval, removed };

inline const char* to_string(InfoDropMode m) {
    switch (m) {
        case InfoDropMode::train: return "train";
        case InfoDropMode::eval: return "eval";
        case InfoDropMode::removed: return "removed";
    }
    return "?";
}

// Hyperparameters of one InfoDrop attachment. Patch geometry (patch_k,
// stride, padding) mirrors the conv layer the attachment belongs to.
struct InfoDropParams {
    double r0 = 1.0;        // draw-count knob: floor(r0 * h * w) draws per channel
    double temperature = 0.5;
    double bandwidth_h = 1.0;   // Gaussian KDE bandwidth
    std::size_t radius_R = 3;   // neighborhood half-side, (2R+1)^2 patches
    std::size_t patch_k = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::optional<std::size_t> subsample_n;  // KDE neighbors sampled; absent = all
    InfoDropMode mode = InfoDropMode::train;
    bool rescale = false;  // mean-preserving rescale of kept units (off by default)

    void validate() const {
        if (r0 < 0.0) throw std::invalid_argument("InfoDropParams: r0 must be >= 0");
        if (temperature <= 0.0)
            throw std::invalid_argument("InfoDropParams: temperature must be positive");
        if (bandwidth_h <= 0.0)
            throw std::invalid_argument("InfoDropParams: bandwidth must be positive");
        if (patch_k == 0 || stride == 0)
            throw std::invalid_argument("InfoDropParams: patch_k and stride must be positive");
        // n=1 would leave nothing to estimate the non-self kernel mass with
        if (subsample_n && *subsample_n < 2)
            throw std::invalid_argument("InfoDropParams: subsample_n must be >= 2");
    }
};

// Per-position self-information of one layer's input patches, over the
// attached conv layer's output grid. Shared across output channels.
struct InfoMap {
    Tensor values;  // (h_out, w_out)
    std::size_t patch_k = 0;
    std::size_t stride = 1;

    std::size_t h() const { return values.dim(0); }
    std::size_t w() const { return values.dim(1); }
};

inline std::size_t info_grid_extent(std::size_t in, std::size_t k, std::size_t stride,
                                    std::size_t padding) {
    std::size_t padded = in + 2 * padding;
    if (padded < k) throw std::invalid_argument("info grid: extent smaller than patch");
    return (padded - k) / stride + 1;
}

// Zero-padded patch at output position j, flattened (channel, row, col).
inline std::vector<double> extract_patch(const Tensor& input, std::size_t j,
                                         std::size_t patch_k, std::size_t stride,
                                         std::size_t padding) {
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t ho = info_grid_extent(h, patch_k, stride, padding);
    const std::size_t wo = info_grid_extent(w, patch_k, stride, padding);
    if (j >= ho * wo) throw std::out_of_range("extract_patch: position out of grid");
    const std::size_t oy = j / wo, ox = j % wo;

    std::vector<double> patch(c * patch_k * patch_k, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ky = 0; ky < patch_k; ++ky) {
            std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(padding);
            if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
            for (std::size_t kx = 0; kx < patch_k; ++kx) {
                std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(padding);
                if (ix < 0 || ix >= std::ptrdiff_t(w)) continue;
                patch[(ch * patch_k + ky) * patch_k + kx] = input.at(ch, iy, ix);
            }
        }
    return patch;
}

// All grid positions within Chebyshev distance R of j, clipped to the grid;
// includes j itself. The square window holds (2R+1)^2 positions away from
// the boundary.
inline std::vector<std::size_t> neighborhood(std::size_t j, std::size_t radius,
                                             std::size_t grid_h, std::size_t grid_w) {
    const std::size_t oy = j / grid_w, ox = j % grid_w;
    const std::size_t y0 = oy > radius ? oy - radius : 0;
    const std::size_t y1 = std::min(grid_h - 1, oy + radius);
    const std::size_t x0 = ox > radius ? ox - radius : 0;
    const std::size_t x1 = std::min(grid_w - 1, ox + radius);
    std::vector<std::size_t> out;
    out.reserve((y1 - y0 + 1) * (x1 - x0 + 1));
    for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) out.push_back(y * grid_w + x);
    return out;
}

namespace detail {

// Distance^2 between the patches at grid positions a and b, computed over
// the zero-padded windows without materializing them.
inline double patch_dist2(const Tensor& input, std::size_t a, std::size_t b,
                          std::size_t patch_k, std::size_t stride, std::size_t padding,
                          std::size_t grid_w) {
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::ptrdiff_t ay = std::ptrdiff_t(a / grid_w) * stride - padding;
    const std::ptrdiff_t ax_ = std::ptrdiff_t(a % grid_w) * stride - padding;
    const std::ptrdiff_t by = std::ptrdiff_t(b / grid_w) * stride - padding;
    const std::ptrdiff_t bx_ = std::ptrdiff_t(b % grid_w) * stride - padding;
    double d2 = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = input.ptr() + ch * h * w;
        for (std::size_t ky = 0; ky < patch_k; ++ky) {
            const std::ptrdiff_t iy_a = ay + std::ptrdiff_t(ky);
            const std::ptrdiff_t iy_b = by + std::ptrdiff_t(ky);
            const bool row_a = iy_a >= 0 && iy_a < std::ptrdiff_t(h);
            const bool row_b = iy_b >= 0 && iy_b < std::ptrdiff_t(h);
            for (std::size_t kx = 0; kx < patch_k; ++kx) {
                const std::ptrdiff_t ix_a = ax_ + std::ptrdiff_t(kx);
                const std::ptrdiff_t ix_b = bx_ + std::ptrdiff_t(kx);
                double va = (row_a && ix_a >= 0 && ix_a < std::ptrdiff_t(w))
                                ? plane[iy_a * w + ix_a]
                                : 0.0;
                double vb = (row_b && ix_b >= 0 && ix_b < std::ptrdiff_t(w))
                                ? plane[iy_b * w + ix_b]
                                : 0.0;
                double d = va - vb;
                d2 += d * d;
            }
        }
    }
    return d2;
}

}  // namespace detail

// Kernel-density self-information of each input patch over its neighborhood:
//   I(j) = -log( (1/|N_j|) * sum_{j' in N_j} exp(-||p_j - p_j'||^2 / (2 h^2)) ).
// Mean normalization keeps boundary-clipped neighborhoods comparable to
// interior ones; the self term exp(0)=1 bounds the log argument below by
// 1/|N_j|, so I(j) lies in [0, log |N_j|].
//
// With subsample_n = n set, the non-self kernel mass is estimated from n-1
// neighbors drawn without replacement and reweighted by (m-1)/(n-1), which is
// unbiased for the full kernel mean and still exact on constant regions.
// Each position uses its own rng stream derived from (seed, j), so parallel
// and serial evaluation agree bit for bit.
inline InfoMap estimate_info(const Tensor& input, const InfoDropParams& params,
                             std::uint64_t seed) {
    params.validate();
    if (input.rank() != 3) throw std::invalid_argument("estimate_info: input must be (c,h,w)");
    require_finite(input, "estimate_info");

    const std::size_t ho = info_grid_extent(input.dim(1), params.patch_k, params.stride,
                                            params.padding);
    const std::size_t wo = info_grid_extent(input.dim(2), params.patch_k, params.stride,
                                            params.padding);
    const double inv_2h2 = 1.0 / (2.0 * params.bandwidth_h * params.bandwidth_h);

    InfoMap map;
    map.values = Tensor({ho, wo});
    map.patch_k = params.patch_k;
    map.stride = params.stride;

    std::vector<std::size_t> scratch;
    for (std::size_t j = 0; j < ho * wo; ++j) {
        std::vector<std::size_t> nbrs = neighborhood(j, params.radius_R, ho, wo);
        const std::size_t m = nbrs.size();

        double kernel_mean;
        if (!params.subsample_n || *params.subsample_n >= m) {
            double sum = 0.0;
            for (std::size_t jp : nbrs)
                sum += (jp == j) ? 1.0
                                 : std::exp(-detail::patch_dist2(input, j, jp, params.patch_k,
                                                                 params.stride, params.padding,
                                                                 wo) *
                                            inv_2h2);
            kernel_mean = sum / double(m);
        } else {
            const std::size_t n = *params.subsample_n;
            scratch.clear();
            for (std::size_t jp : nbrs)
                if (jp != j) scratch.push_back(jp);
            // partial Fisher-Yates: first n-1 entries are the sample
            Rng rng = derive_rng(seed, 0x1650u, j);
            for (std::size_t i = 0; i < n - 1; ++i) {
                std::size_t pick = i + std::size_t(rng.below(scratch.size() - i));
                std::swap(scratch[i], scratch[pick]);
            }
            double sum = 0.0;
            for (std::size_t i = 0; i < n - 1; ++i)
                sum += std::exp(-detail::patch_dist2(input, j, scratch[i], params.patch_k,
                                                     params.stride, params.padding, wo) *
                                inv_2h2);
            kernel_mean = (1.0 + sum * double(m - 1) / double(n - 1)) / double(m);
        }
        map.values[j] = -std::log(kernel_mean);
        if (map.values[j] < 0.0) map.values[j] = 0.0;  // clamp -0.0 / rounding
    }
    return map;
}

}  // namespace infodrop
