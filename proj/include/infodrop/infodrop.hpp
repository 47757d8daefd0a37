#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "infodrop/rng.hpp"
#include "infodrop/self_information.hpp"
#include "infodrop/tensor.hpp"

namespace infodrop {

// Boltzmann drop distribution over output spatial positions; sums to 1.
struct DropProbabilities {
    Tensor probs;  // (h_out, w_out)
};

// Binary keep mask for one layer's output; kept = 1, dropped = 0.
struct DropMask {
    Tensor mask;  // (c_out, h_out, w_out)

    double dropped_fraction() const {
        double zeros = 0.0;
        for (double v : mask.data) zeros += (v == 0.0) ? 1.0 : 0.0;
        return mask.numel() ? zeros / double(mask.numel()) : 0.0;
    }
};

// probs(j) = exp(-I(j)/T) / sum_j' exp(-I(j')/T). Low information means high
// drop probability; a constant shift of the InfoMap cancels.
inline DropProbabilities drop_distribution(const InfoMap& info, double temperature) {
    if (temperature <= 0.0)
        throw std::invalid_argument("drop_distribution: temperature must be positive");
    require_finite(info.values, "drop_distribution");

    DropProbabilities dp;
    dp.probs = Tensor(info.values.shape);
    const std::size_t n = info.values.numel();
    // softmax of -I/T with max subtraction, i.e. shift by min(I)/T
    double imin = info.values[0];
    for (std::size_t i = 1; i < n; ++i) imin = std::min(imin, info.values[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = std::exp(-(info.values[i] - imin) / temperature);
        dp.probs[i] = e;
        denom += e;
    }
    for (std::size_t i = 0; i < n; ++i) dp.probs[i] /= denom;
    return dp;
}

// Alg. 1 sampling: per output channel, floor(r0 * h * w) i.i.d. draws from
// probs (with replacement); every drawn position is zeroed. Collisions make
// the realized drop fraction fall below r0. Channel c uses the stream
// derived from (seed, c), independent of evaluation order.
inline DropMask sample_mask(const DropProbabilities& probs, double r0, std::size_t c_out,
                            std::uint64_t seed) {
    if (r0 < 0.0) throw std::invalid_argument("sample_mask: r0 must be >= 0");
    const std::size_t h = probs.probs.dim(0), w = probs.probs.dim(1);
    const std::size_t n = h * w;
    DropMask dm;
    dm.mask = Tensor::full({c_out, h, w}, 1.0);

    const std::size_t draws = std::size_t(std::floor(r0 * double(n)));
    if (draws == 0 || n == 0) return dm;

    std::vector<double> cdf(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += probs.probs[i];
        cdf[i] = acc;
    }
    cdf[n - 1] = 1.0;  // guard against rounding at the top

    for (std::size_t c = 0; c < c_out; ++c) {
        Rng rng = derive_rng(seed, 0xd509u, c);
        double* chan = dm.mask.ptr() + c * n;
        for (std::size_t d = 0; d < draws; ++d) {
            double u = rng.uniform();
            std::size_t j =
                std::size_t(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            if (j >= n) j = n - 1;
            chan[j] = 0.0;
        }
    }
    return dm;
}

// Apply a (fresh) mask to the post-activation conv output. In eval/removed
// mode the layer is an identity and the mask is all ones.
inline std::pair<Tensor, DropMask> infodrop_forward(const Tensor& conv_output,
                                                    const InfoMap& info,
                                                    const InfoDropParams& params,
                                                    std::uint64_t seed) {
    if (conv_output.rank() != 3)
        throw std::invalid_argument("infodrop_forward: output must be (c,h,w)");
    if (conv_output.dim(1) != info.h() || conv_output.dim(2) != info.w())
        throw std::invalid_argument("infodrop_forward: InfoMap geometry mismatch");

    if (params.mode != InfoDropMode::train || params.r0 == 0.0) {
        DropMask ones;
        ones.mask = Tensor::full(conv_output.shape, 1.0);
        return {conv_output, std::move(ones)};
    }

    DropProbabilities probs = drop_distribution(info, params.temperature);
    DropMask mask = sample_mask(probs, params.r0, conv_output.dim(0), seed);

    Tensor out(conv_output.shape);
    const std::size_t per = info.h() * info.w();
    for (std::size_t c = 0; c < conv_output.dim(0); ++c) {
        const double* x = conv_output.ptr() + c * per;
        const double* m = mask.mask.ptr() + c * per;
        double* y = out.ptr() + c * per;
        if (params.rescale) {
            double kept = 0.0;
            for (std::size_t i = 0; i < per; ++i) kept += m[i];
            double scale = kept > 0.0 ? double(per) / kept : 0.0;
            for (std::size_t i = 0; i < per; ++i) y[i] = x[i] * m[i] * scale;
        } else {
            for (std::size_t i = 0; i < per; ++i) y[i] = x[i] * m[i];
        }
    }
    return {std::move(out), std::move(mask)};
}

// The mask is treated as constant multiplicative noise; no gradient reaches
// the information estimate or the sampling.
inline Tensor infodrop_backward(const Tensor& upstream, const DropMask& mask,
                                bool rescale = false) {
    if (upstream.shape != mask.mask.shape)
        throw std::invalid_argument("infodrop_backward: geometry mismatch");
    Tensor g(upstream.shape);
    const std::size_t c_out = upstream.dim(0);
    const std::size_t per = upstream.dim(1) * upstream.dim(2);
    for (std::size_t c = 0; c < c_out; ++c) {
        const double* u = upstream.ptr() + c * per;
        const double* m = mask.mask.ptr() + c * per;
        double* o = g.ptr() + c * per;
        double scale = 1.0;
        if (rescale) {
            double kept = 0.0;
            for (std::size_t i = 0; i < per; ++i) kept += m[i];
            scale = kept > 0.0 ? double(per) / kept : 0.0;
        }
        for (std::size_t i = 0; i < per; ++i) o[i] = u[i] * m[i] * scale;
    }
    return g;
}

}  // namespace infodrop
