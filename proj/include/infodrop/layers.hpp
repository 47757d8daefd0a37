#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "infodrop/tensor.hpp"

namespace infodrop {

// Convolution parameters + weights. Kernel layout (c_out, c_in, k, k),
// zero-padding, square kernels.
struct ConvLayerState {
    Tensor kernel;  // (c_out, c_in, k, k)
    Tensor bias;    // (c_out)
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t c_out() const { return kernel.dim(0); }
    std::size_t c_in() const { return kernel.dim(1); }
    std::size_t k() const { return kernel.dim(2); }

    void validate() const {
        if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3))
            throw std::invalid_argument("conv: kernel must be (c_out,c_in,k,k)");
        if (bias.shape != std::vector<std::size_t>{kernel.dim(0)})
            throw std::invalid_argument("conv: bias must be (c_out)");
        if (stride == 0) throw std::invalid_argument("conv: stride must be positive");
        if (c_out() < 1 || c_in() < 1 || k() < 1)
            throw std::invalid_argument("conv: degenerate kernel shape");
    }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t padding) {
    std::size_t padded = in + 2 * padding;
    if (padded < k) throw std::invalid_argument("conv: spatial extent smaller than kernel");
    return (padded - k) / stride + 1;
}

inline Tensor conv2d_forward(const Tensor& input, const ConvLayerState& layer) {
    layer.validate();
    if (input.rank() != 3) throw std::invalid_argument("conv2d_forward: input must be (c,h,w)");
    if (input.dim(0) != layer.c_in())
        throw std::invalid_argument("conv2d_forward: input channels != layer c_in");
    require_finite(input, "conv2d_forward");

    const std::size_t c_in = input.dim(0), h_in = input.dim(1), w_in = input.dim(2);
    const std::size_t c_out = layer.c_out(), k = layer.k();
    const std::size_t s = layer.stride, p = layer.padding;
    const std::size_t h_out = conv_out_extent(h_in, k, s, p);
    const std::size_t w_out = conv_out_extent(w_in, k, s, p);

    Tensor out({c_out, h_out, w_out});
    const double* in = input.ptr();
    const double* kw = layer.kernel.ptr();
    double* o = out.ptr();

    using diff = std::ptrdiff_t;
    const diff dh_in = diff(h_in), dw_in = diff(w_in);
    const diff dh_out = diff(h_out), dw_out = diff(w_out);
    const diff ds = diff(s), dp = diff(p);

    for (std::size_t co = 0; co < c_out; ++co) {
        double* ochan = o + co * h_out * w_out;
        std::fill(ochan, ochan + h_out * w_out, layer.bias[co]);
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* ichan = in + ci * h_in * w_in;
            const double* kbase = kw + (co * c_in + ci) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double w = kbase[ky * k + kx];
                    if (w == 0.0) continue;
                    // valid output ranges so iy = oy*s+ky-p and ix stay in bounds
                    const diff off_y = diff(ky) - dp, off_x = diff(kx) - dp;
                    diff oy0 = off_y < 0 ? (-off_y + ds - 1) / ds : 0;
                    diff ox0 = off_x < 0 ? (-off_x + ds - 1) / ds : 0;
                    diff oy1 = std::min(dh_out, off_y >= dh_in ? 0 : (dh_in - 1 - off_y) / ds + 1);
                    diff ox1 = std::min(dw_out, off_x >= dw_in ? 0 : (dw_in - 1 - off_x) / ds + 1);
                    for (diff oy = oy0; oy < oy1; ++oy) {
                        const double* irow = ichan + (oy * ds + off_y) * dw_in;
                        double* orow = ochan + oy * dw_out;
                        if (s == 1) {
                            const double* ip = irow + ox0 + off_x;
                            for (diff ox = ox0; ox < ox1; ++ox, ++ip) orow[ox] += w * *ip;
                        } else {
                            for (diff ox = ox0; ox < ox1; ++ox)
                                orow[ox] += w * irow[ox * ds + off_x];
                        }
                    }
                }
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor input_grad;
    Tensor kernel_grad;
    Tensor bias_grad;
};

inline ConvGrads conv2d_backward(const Tensor& input, const ConvLayerState& layer,
                                 const Tensor& upstream) {
    layer.validate();
    const std::size_t c_in = input.dim(0), h_in = input.dim(1), w_in = input.dim(2);
    const std::size_t c_out = layer.c_out(), k = layer.k();
    const std::size_t s = layer.stride, p = layer.padding;
    const std::size_t h_out = conv_out_extent(h_in, k, s, p);
    const std::size_t w_out = conv_out_extent(w_in, k, s, p);
    require_shape(upstream, {c_out, h_out, w_out}, "conv2d_backward upstream");

    ConvGrads g{Tensor({c_in, h_in, w_in}), Tensor(layer.kernel.shape),
                Tensor(layer.bias.shape)};
    const double* in = input.ptr();
    const double* kw = layer.kernel.ptr();
    const double* u = upstream.ptr();

    using diff = std::ptrdiff_t;
    const diff dh_in = diff(h_in), dw_in = diff(w_in);
    const diff dh_out = diff(h_out), dw_out = diff(w_out);
    const diff ds = diff(s), dp = diff(p);

    for (std::size_t co = 0; co < c_out; ++co) {
        const double* uchan = u + co * h_out * w_out;
        double bsum = 0.0;
        for (std::size_t i = 0; i < h_out * w_out; ++i) bsum += uchan[i];
        g.bias_grad[co] = bsum;

        for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* ichan = in + ci * h_in * w_in;
            double* igchan = g.input_grad.ptr() + ci * h_in * w_in;
            const double* kbase = kw + (co * c_in + ci) * k * k;
            double* kgbase = g.kernel_grad.ptr() + (co * c_in + ci) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double w = kbase[ky * k + kx];
                    double kg = 0.0;
                    const diff off_y = diff(ky) - dp, off_x = diff(kx) - dp;
                    diff oy0 = off_y < 0 ? (-off_y + ds - 1) / ds : 0;
                    diff ox0 = off_x < 0 ? (-off_x + ds - 1) / ds : 0;
                    diff oy1 = std::min(dh_out, off_y >= dh_in ? 0 : (dh_in - 1 - off_y) / ds + 1);
                    diff ox1 = std::min(dw_out, off_x >= dw_in ? 0 : (dw_in - 1 - off_x) / ds + 1);
                    for (diff oy = oy0; oy < oy1; ++oy) {
                        const double* irow = ichan + (oy * ds + off_y) * dw_in;
                        double* igrow = igchan + (oy * ds + off_y) * dw_in;
                        const double* urow = uchan + oy * dw_out;
                        if (s == 1) {
                            for (diff ox = ox0; ox < ox1; ++ox) {
                                diff ix = ox + off_x;
                                kg += urow[ox] * irow[ix];
                                igrow[ix] += urow[ox] * w;
                            }
                        } else {
                            for (diff ox = ox0; ox < ox1; ++ox) {
                                diff ix = ox * ds + off_x;
                                kg += urow[ox] * irow[ix];
                                igrow[ix] += urow[ox] * w;
                            }
                        }
                    }
                    kgbase[ky * k + kx] += kg;
                }
            }
        }
    }
    return g;
}

inline Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
    if (!x.same_shape(upstream))
        throw std::invalid_argument("relu_backward: shape mismatch");
    Tensor g = upstream;
    for (std::size_t i = 0; i < g.numel(); ++i)
        if (x[i] <= 0.0) g[i] = 0.0;
    return g;
}

struct PoolSpec {
    std::size_t k = 2;
    std::size_t stride = 2;
};

inline std::size_t pool_out_extent(std::size_t in, const PoolSpec& p) {
    if (in < p.k) throw std::invalid_argument("pool: extent smaller than window");
    return (in - p.k) / p.stride + 1;
}

inline Tensor maxpool_forward(const Tensor& x, const PoolSpec& p) {
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t ho = pool_out_extent(h, p), wo = pool_out_extent(w, p);
    Tensor y({c, ho, wo});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double m = -std::numeric_limits<double>::infinity();
                for (std::size_t ky = 0; ky < p.k; ++ky)
                    for (std::size_t kx = 0; kx < p.k; ++kx)
                        m = std::max(m, x.at(ch, oy * p.stride + ky, ox * p.stride + kx));
                y.at(ch, oy, ox) = m;
            }
    return y;
}

// Gradient goes to the first maximal element in scan order.
inline Tensor maxpool_backward(const Tensor& x, const PoolSpec& p, const Tensor& upstream) {
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t ho = pool_out_extent(h, p), wo = pool_out_extent(w, p);
    require_shape(upstream, {c, ho, wo}, "maxpool_backward upstream");
    Tensor g({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                std::size_t by = 0, bx = 0;
                double m = -std::numeric_limits<double>::infinity();
                for (std::size_t ky = 0; ky < p.k; ++ky)
                    for (std::size_t kx = 0; kx < p.k; ++kx) {
                        double v = x.at(ch, oy * p.stride + ky, ox * p.stride + kx);
                        if (v > m) {
                            m = v;
                            by = oy * p.stride + ky;
                            bx = ox * p.stride + kx;
                        }
                    }
                g.at(ch, by, bx) += upstream.at(ch, oy, ox);
            }
    return g;
}

inline Tensor avgpool_forward(const Tensor& x, const PoolSpec& p) {
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t ho = pool_out_extent(h, p), wo = pool_out_extent(w, p);
    const double inv = 1.0 / double(p.k * p.k);
    Tensor y({c, ho, wo});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double s = 0.0;
                for (std::size_t ky = 0; ky < p.k; ++ky)
                    for (std::size_t kx = 0; kx < p.k; ++kx)
                        s += x.at(ch, oy * p.stride + ky, ox * p.stride + kx);
                y.at(ch, oy, ox) = s * inv;
            }
    return y;
}

inline Tensor avgpool_backward(const Tensor& x, const PoolSpec& p, const Tensor& upstream) {
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t ho = pool_out_extent(h, p), wo = pool_out_extent(w, p);
    require_shape(upstream, {c, ho, wo}, "avgpool_backward upstream");
    const double inv = 1.0 / double(p.k * p.k);
    Tensor g({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double u = upstream.at(ch, oy, ox) * inv;
                for (std::size_t ky = 0; ky < p.k; ++ky)
                    for (std::size_t kx = 0; kx < p.k; ++kx)
                        g.at(ch, oy * p.stride + ky, ox * p.stride + kx) += u;
            }
    return g;
}

// Batch norm over (N,H,W) per channel. Running statistics use the unbiased
// variance; normalization uses the biased one.
struct BatchNormState {
    Tensor gamma, beta;          // (c)
    Tensor running_mean, running_var;  // (c)
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : gamma(Tensor::full({channels}, 1.0)),
          beta(Tensor::zeros({channels})),
          running_mean(Tensor::zeros({channels})),
          running_var(Tensor::full({channels}, 1.0)) {}
};

struct BatchNormCache {
    Tensor mean, var;  // per-channel batch statistics (biased var)
};

inline std::vector<Tensor> batchnorm2d_forward(const std::vector<Tensor>& items,
                                               BatchNormState& bn, bool training,
                                               BatchNormCache* cache = nullptr) {
    if (items.empty()) throw std::invalid_argument("batchnorm2d: empty batch");
    const std::size_t c = items[0].dim(0), h = items[0].dim(1), w = items[0].dim(2);
    if (bn.gamma.dim(0) != c) throw std::invalid_argument("batchnorm2d: channel mismatch");
    const std::size_t per = h * w;
    const double n = double(items.size() * per);

    Tensor mean({c}), var({c});
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (const Tensor& t : items) {
                const double* p = t.ptr() + ch * per;
                for (std::size_t i = 0; i < per; ++i) s += p[i];
            }
            mean[ch] = s / n;
            double v = 0.0;
            for (const Tensor& t : items) {
                const double* p = t.ptr() + ch * per;
                for (std::size_t i = 0; i < per; ++i) {
                    double d = p[i] - mean[ch];
                    v += d * d;
                }
            }
            var[ch] = v / n;
            double unbiased = n > 1.0 ? v / (n - 1.0) : v;
            bn.running_mean[ch] =
                (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mean[ch];
            bn.running_var[ch] =
                (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * unbiased;
        }
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }
    if (cache) {
        cache->mean = mean;
        cache->var = var;
    }

    std::vector<Tensor> out;
    out.reserve(items.size());
    for (const Tensor& t : items) {
        Tensor y({c, h, w});
        for (std::size_t ch = 0; ch < c; ++ch) {
            double inv = 1.0 / std::sqrt(var[ch] + bn.eps);
            double g = bn.gamma[ch], b = bn.beta[ch], m = mean[ch];
            const double* p = t.ptr() + ch * per;
            double* q = y.ptr() + ch * per;
            for (std::size_t i = 0; i < per; ++i) q[i] = g * (p[i] - m) * inv + b;
        }
        out.push_back(std::move(y));
    }
    return out;
}

struct BatchNormGrads {
    std::vector<Tensor> input_grads;
    Tensor gamma_grad, beta_grad;
};

inline BatchNormGrads batchnorm2d_backward(const std::vector<Tensor>& items,
                                           const BatchNormState& bn,
                                           const BatchNormCache& cache,
                                           const std::vector<Tensor>& upstream) {
    const std::size_t c = items[0].dim(0), h = items[0].dim(1), w = items[0].dim(2);
    const std::size_t per = h * w;
    const double n = double(items.size() * per);

    BatchNormGrads g;
    g.gamma_grad = Tensor({c});
    g.beta_grad = Tensor({c});
    g.input_grads.assign(items.size(), Tensor({c, h, w}));

    for (std::size_t ch = 0; ch < c; ++ch) {
        const double m = cache.mean[ch];
        const double inv = 1.0 / std::sqrt(cache.var[ch] + bn.eps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t it = 0; it < items.size(); ++it) {
            const double* x = items[it].ptr() + ch * per;
            const double* dy = upstream[it].ptr() + ch * per;
            for (std::size_t i = 0; i < per; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * (x[i] - m) * inv;
            }
        }
        g.beta_grad[ch] = sum_dy;
        g.gamma_grad[ch] = sum_dy_xhat;
        const double gamma = bn.gamma[ch];
        for (std::size_t it = 0; it < items.size(); ++it) {
            const double* x = items[it].ptr() + ch * per;
            const double* dy = upstream[it].ptr() + ch * per;
            double* dx = g.input_grads[it].ptr() + ch * per;
            for (std::size_t i = 0; i < per; ++i) {
                double xhat = (x[i] - m) * inv;
                dx[i] = gamma * inv * (dy[i] - sum_dy / n - xhat * sum_dy_xhat / n);
            }
        }
    }
    return g;
}

struct LinearState {
    Tensor weight;  // (out, in)
    Tensor bias;    // (out)
};

inline Tensor linear_forward(const Tensor& x, const LinearState& lin) {
    const std::size_t out = lin.weight.dim(0), in = lin.weight.dim(1);
    if (x.numel() != in) throw std::invalid_argument("linear_forward: input size mismatch");
    Tensor y({out});
    for (std::size_t o = 0; o < out; ++o) {
        const double* wrow = lin.weight.ptr() + o * in;
        double acc = lin.bias[o];
        for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
    return y;
}

struct LinearGrads {
    Tensor input_grad, weight_grad, bias_grad;
};

inline LinearGrads linear_backward(const Tensor& x, const LinearState& lin,
                                   const Tensor& upstream) {
    const std::size_t out = lin.weight.dim(0), in = lin.weight.dim(1);
    if (upstream.numel() != out)
        throw std::invalid_argument("linear_backward: upstream size mismatch");
    LinearGrads g{Tensor(x.shape), Tensor(lin.weight.shape), Tensor(lin.bias.shape)};
    for (std::size_t o = 0; o < out; ++o) {
        const double u = upstream[o];
        g.bias_grad[o] = u;
        const double* wrow = lin.weight.ptr() + o * in;
        double* wgrow = g.weight_grad.ptr() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
            wgrow[i] = u * x[i];
            g.input_grad[i] += u * wrow[i];
        }
    }
    return g;
}

// Mean cross-entropy over the batch; logits (N,K), labels in [0,K).
struct SoftmaxXentResult {
    double loss = 0.0;
    Tensor probs;  // (N,K)
};

inline SoftmaxXentResult softmax_xent_forward(const Tensor& logits,
                                              const std::vector<int>& labels) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_xent: logits must be (N,K)");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (n == 0) throw std::invalid_argument("softmax_xent: batch size 0");
    if (labels.size() != n) throw std::invalid_argument("softmax_xent: label count mismatch");
    SoftmaxXentResult r;
    r.probs = Tensor({n, k});
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || std::size_t(labels[i]) >= k)
            throw std::invalid_argument("softmax_xent: label out of range");
        const double* row = logits.ptr() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        double log_denom = std::log(denom);
        for (std::size_t j = 0; j < k; ++j)
            r.probs.at(i, j) = std::exp(row[j] - mx - log_denom);
        total += -(row[labels[i]] - mx - log_denom);
    }
    r.loss = total / double(n);
    return r;
}

inline Tensor softmax_xent_backward(const SoftmaxXentResult& fwd,
                                    const std::vector<int>& labels) {
    const std::size_t n = fwd.probs.dim(0), k = fwd.probs.dim(1);
    Tensor g({n, k});
    const double inv_n = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j)
            g.at(i, j) = (fwd.probs.at(i, j) - (std::size_t(labels[i]) == j ? 1.0 : 0.0)) * inv_n;
    return g;
}

// SGD with momentum and decoupled-in-name-only weight decay folded into the
// gradient: v <- mu*v + g + lambda*w; w <- w - eta*v.
struct SgdParams {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

inline void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity,
                     const SgdParams& opt) {
    if (!param.same_shape(grad) || !param.same_shape(velocity))
        throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < param.numel(); ++i) {
        double v = opt.momentum * velocity[i] + grad[i] + opt.weight_decay * param[i];
        velocity[i] = v;
        param[i] -= opt.lr * v;
    }
}

}  // namespace infodrop
