#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "infodrop/data.hpp"
#include "infodrop/model.hpp"
#include "infodrop/parallel.hpp"
#include "infodrop/rng.hpp"
#include "infodrop/tensor.hpp"

namespace infodrop {

// ---- frequency map ----
// Power-weighted radial DCT index per sliding window; DC carries no weight,
// constant windows map to 0.

inline Tensor frequency_map(const Tensor& image, std::size_t patch = 8,
                            std::size_t stride = 1) {
    if (image.rank() != 3) throw std::invalid_argument("frequency_map: image must be (c,h,w)");
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h < patch || w < patch)
        throw std::invalid_argument("frequency_map: image smaller than patch");

    // grayscale: channel mean
    Tensor gray({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::size_t ci = 0; ci < c; ++ci) s += image.at(ci, y, x);
            gray.at(y, x) = s / double(c);
        }

    // orthonormal DCT-II basis
    std::vector<double> basis(patch * patch);
    const double pi = 3.14159265358979323846;
    for (std::size_t u = 0; u < patch; ++u) {
        double a = u == 0 ? std::sqrt(1.0 / double(patch)) : std::sqrt(2.0 / double(patch));
        for (std::size_t x = 0; x < patch; ++x)
            basis[u * patch + x] = a * std::cos(pi * (2.0 * x + 1.0) * u / (2.0 * patch));
    }

    const std::size_t ho = (h - patch) / stride + 1;
    const std::size_t wo = (w - patch) / stride + 1;
    Tensor out({ho, wo});
    std::vector<double> tmp(patch * patch), coef(patch * patch);
    for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
            // rows then columns
            for (std::size_t u = 0; u < patch; ++u)
                for (std::size_t x = 0; x < patch; ++x) {
                    double s = 0.0;
                    for (std::size_t y = 0; y < patch; ++y)
                        s += basis[u * patch + y] * gray.at(oy * stride + y, ox * stride + x);
                    tmp[u * patch + x] = s;
                }
            for (std::size_t u = 0; u < patch; ++u)
                for (std::size_t v = 0; v < patch; ++v) {
                    double s = 0.0;
                    for (std::size_t x = 0; x < patch; ++x)
                        s += tmp[u * patch + x] * basis[v * patch + x];
                    coef[u * patch + v] = s;
                }
            double wsum = 0.0, fsum = 0.0;
            for (std::size_t u = 0; u < patch; ++u)
                for (std::size_t v = 0; v < patch; ++v) {
                    if (u == 0 && v == 0) continue;
                    double power = coef[u * patch + v] * coef[u * patch + v];
                    wsum += power;
                    fsum += power * std::sqrt(double(u * u + v * v));
                }
            out.at(oy, ox) = wsum > 1e-18 ? fsum / wsum : 0.0;
        }
    return out;
}

// ---- patch shuffling ----
// m x m tiles permuted uniformly; requires sides divisible by m.

inline Tensor patch_shuffle(const Tensor& image, std::size_t m, Rng& rng,
                            std::vector<std::size_t>* perm_out = nullptr) {
    if (image.rank() != 3) throw std::invalid_argument("patch_shuffle: image must be (c,h,w)");
    if (m == 0) throw std::invalid_argument("patch_shuffle: m must be positive");
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h % m != 0 || w % m != 0)
        throw std::invalid_argument("patch_shuffle: image sides not divisible by m");

    std::vector<std::size_t> perm(m * m);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    if (perm_out) *perm_out = perm;

    const std::size_t th = h / m, tw = w / m;
    Tensor out(image.shape);
    for (std::size_t t = 0; t < perm.size(); ++t) {
        const std::size_t dy = (t / m) * th, dx = (t % m) * tw;
        const std::size_t sy = (perm[t] / m) * th, sx = (perm[t] % m) * tw;
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t y = 0; y < th; ++y)
                for (std::size_t x = 0; x < tw; ++x)
                    out.at(ci, dy + y, dx + x) = image.at(ci, sy + y, sx + x);
    }
    return out;
}

inline Tensor apply_tile_permutation(const Tensor& image, std::size_t m,
                                     const std::vector<std::size_t>& perm) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const std::size_t th = h / m, tw = w / m;
    Tensor out(image.shape);
    for (std::size_t t = 0; t < perm.size(); ++t) {
        const std::size_t dy = (t / m) * th, dx = (t % m) * tw;
        const std::size_t sy = (perm[t] / m) * th, sx = (perm[t] % m) * tw;
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t y = 0; y < th; ++y)
                for (std::size_t x = 0; x < tw; ++x)
                    out.at(ci, dy + y, dx + x) = image.at(ci, sy + y, sx + x);
    }
    return out;
}

// ---- SmoothGrad ----
// Mean input gradient of the predicted-class logit over n Gaussian-noised
// copies (noise std = sigma * input value range), aggregated to rank-2 by
// L2 over channels.

struct SmoothGradResult {
    Tensor saliency;        // (h,w), channel-aggregated
    Tensor mean_gradient;   // (c,h,w), signed per-channel mean
    int predicted_class = 0;
};

inline SmoothGradResult smoothgrad(Model& model, const Tensor& image, std::size_t n,
                                   double sigma, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("smoothgrad: n must be >= 1");
    if (sigma < 0.0) throw std::invalid_argument("smoothgrad: sigma must be >= 0");

    Tensor logits = model.forward({image}, false, seed);
    const std::size_t k = logits.dim(1);
    std::size_t pred = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (logits.at(0, j) > logits.at(0, pred)) pred = j;

    double lo = image[0], hi = image[0];
    for (double v : image.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double noise_std = sigma * (hi - lo);
    if (noise_std == 0.0) n = 1;  // all copies coincide with the clean image

    std::vector<Tensor> grads(n);
    parallel_for(n, [&](std::size_t i) {
        Tensor noisy = image;
        if (noise_std > 0.0) {
            Rng rng = derive_rng(seed, 0x56ADu, i);
            for (double& v : noisy.data) v += noise_std * rng.normal();
        }
        Model local = model;  // eval-mode forward; keep shared state untouched
        ForwardCache cache;
        local.forward({noisy}, false, seed, &cache);
        Tensor dlogits({1, k});
        dlogits.at(0, pred) = 1.0;
        ModelGrads g = local.backward(dlogits, cache);
        grads[i] = std::move(g.input[0]);
    });

    SmoothGradResult r;
    r.predicted_class = int(pred);
    r.mean_gradient = Tensor(image.shape);
    for (const Tensor& g : grads)
        for (std::size_t i = 0; i < g.numel(); ++i) r.mean_gradient[i] += g[i];
    for (double& v : r.mean_gradient.data) v /= double(n);

    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    r.saliency = Tensor({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::size_t ci = 0; ci < c; ++ci) {
                double v = r.mean_gradient.at(ci, y, x);
                s += v * v;
            }
            r.saliency.at(y, x) = std::sqrt(s);
        }
    return r;
}

// ---- PGD ----
// Iterated sign-gradient ascent on cross-entropy, random start inside the
// l-inf ball, projected to the ball and clipped to [0,1] every step.

inline Tensor pgd_attack(Model& model, const Tensor& image, int label, double eps,
                         double step_size, std::size_t iters, std::uint64_t seed) {
    if (eps < 0.0) throw std::invalid_argument("pgd_attack: eps must be >= 0");
    Tensor x = image;
    Rng rng = derive_rng(seed, 0x96Du);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        x[i] += rng.uniform(-eps, eps);
        x[i] = std::clamp(x[i], std::clamp(image[i] - eps, 0.0, 1.0),
                          std::clamp(image[i] + eps, 0.0, 1.0));
    }
    for (std::size_t it = 0; it < iters; ++it) {
        ForwardCache cache;
        Tensor logits = model.forward({x}, false, seed, &cache);
        SoftmaxXentResult head = softmax_xent_forward(logits, {label});
        ModelGrads g = model.backward(softmax_xent_backward(head, {label}), cache);
        const Tensor& grad = g.input[0];
        for (std::size_t i = 0; i < x.numel(); ++i) {
            double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
            double v = x[i] + step_size * s;
            v = std::clamp(v, image[i] - eps, image[i] + eps);
            x[i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return x;
}

// ---- corruptions ----

enum class CorruptionKind {
    gaussian_noise,
    shot_noise,
    impulse_noise,
    gaussian_blur,
    brightness,
    contrast,
};

inline const char* to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
        case CorruptionKind::shot_noise: return "shot_noise";
        case CorruptionKind::impulse_noise: return "impulse_noise";
        case CorruptionKind::gaussian_blur: return "gaussian_blur";
        case CorruptionKind::brightness: return "brightness";
        case CorruptionKind::contrast: return "contrast";
    }
    return "?";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
    if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
    if (s == "shot_noise") return CorruptionKind::shot_noise;
    if (s == "impulse_noise") return CorruptionKind::impulse_noise;
    if (s == "gaussian_blur") return CorruptionKind::gaussian_blur;
    if (s == "brightness") return CorruptionKind::brightness;
    if (s == "contrast") return CorruptionKind::contrast;
    throw std::invalid_argument("unknown corruption kind: " + s);
}

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    int severity = 1;  // 1..5
};

// Frozen desk-scale severity tables (index = severity - 1).
namespace severity_tables {
constexpr std::array<double, 5> gaussian_noise_sigma{0.04, 0.06, 0.08, 0.09, 0.10};
constexpr std::array<double, 5> shot_noise_lambda{500.0, 250.0, 100.0, 75.0, 50.0};
constexpr std::array<double, 5> impulse_fraction{0.01, 0.02, 0.03, 0.05, 0.07};
constexpr std::array<double, 5> blur_sigma{0.5, 0.75, 1.0, 1.25, 1.5};
constexpr std::array<double, 5> brightness_delta{0.05, 0.10, 0.15, 0.20, 0.30};
constexpr std::array<double, 5> contrast_scale{0.75, 0.60, 0.50, 0.40, 0.30};
}  // namespace severity_tables

namespace detail {

inline double reflect_index(long i, long n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return double(i);
}

inline Tensor gaussian_blur(const Tensor& img, double sigma) {
    const long radius = std::max(1L, long(std::ceil(3.0 * sigma)));
    std::vector<double> kern(2 * radius + 1);
    double sum = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        kern[i + radius] = std::exp(-double(i * i) / (2.0 * sigma * sigma));
        sum += kern[i + radius];
    }
    for (double& v : kern) v /= sum;

    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor tmp(img.shape), out(img.shape);
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    long xi = long(x) + i;
                    xi = long(reflect_index(xi, long(w)));
                    s += kern[i + radius] * img.at(ci, y, std::size_t(xi));
                }
                tmp.at(ci, y, x) = s;
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    long yi = long(y) + i;
                    yi = long(reflect_index(yi, long(h)));
                    s += kern[i + radius] * tmp.at(ci, std::size_t(yi), x);
                }
                out.at(ci, y, x) = s;
            }
    }
    return out;
}

}  // namespace detail

inline Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, std::uint64_t seed) {
    if (spec.severity < 1 || spec.severity > 5)
        throw std::invalid_argument("corrupt: severity must be in 1..5");
    const std::size_t idx = std::size_t(spec.severity - 1);
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out = image;
    Rng rng = derive_rng(seed, 0xC0Fu, std::uint64_t(spec.kind), std::uint64_t(spec.severity));

    switch (spec.kind) {
        case CorruptionKind::gaussian_noise: {
            const double sigma = severity_tables::gaussian_noise_sigma[idx];
            for (double& v : out.data) v += sigma * rng.normal();
            break;
        }
        case CorruptionKind::shot_noise: {
            const double lambda = severity_tables::shot_noise_lambda[idx];
            for (double& v : out.data) v = double(poisson(rng, lambda * v)) / lambda;
            break;
        }
        case CorruptionKind::impulse_noise: {
            const double p = severity_tables::impulse_fraction[idx];
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    if (rng.uniform() >= p) continue;
                    double v = rng.coin() ? 1.0 : 0.0;
                    for (std::size_t ci = 0; ci < c; ++ci) out.at(ci, y, x) = v;
                }
            break;
        }
        case CorruptionKind::gaussian_blur:
            out = detail::gaussian_blur(image, severity_tables::blur_sigma[idx]);
            break;
        case CorruptionKind::brightness: {
            const double b = severity_tables::brightness_delta[idx];
            for (double& v : out.data) v += b;
            break;
        }
        case CorruptionKind::contrast: {
            const double s = severity_tables::contrast_scale[idx];
            for (std::size_t ci = 0; ci < c; ++ci) {
                double mean = 0.0;
                for (std::size_t i = 0; i < h * w; ++i) mean += out.ptr()[ci * h * w + i];
                mean /= double(h * w);
                for (std::size_t i = 0; i < h * w; ++i) {
                    double* v = out.ptr() + ci * h * w + i;
                    *v = (*v - mean) * s + mean;
                }
            }
            break;
        }
    }
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

// ---- prediction helpers and the shape-bias score ----

inline std::vector<int> predict(Model& model, const std::vector<Tensor>& images,
                                std::size_t batch_size = 64) {
    std::vector<int> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        std::size_t end = std::min(images.size(), start + batch_size);
        std::vector<Tensor> batch(images.begin() + start, images.begin() + end);
        Tensor logits = model.forward(batch, false, 0);
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (logits.at(i, j) > logits.at(i, best)) best = j;
            out.push_back(int(best));
        }
    }
    return out;
}

inline double accuracy(Model& model, const Dataset& ds, std::size_t batch_size = 64) {
    if (ds.items.empty()) throw std::invalid_argument("accuracy: empty dataset");
    std::vector<Tensor> images;
    images.reserve(ds.size());
    for (const LabeledImage& it : ds.items) images.push_back(it.pixels);
    std::vector<int> preds = predict(model, images, batch_size);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == ds.items[i].label) ++hit;
    return double(hit) / double(preds.size());
}

// Error rate on the patch-shuffled dataset; higher = more shape-biased.
inline double shape_bias_score(Model& model, const Dataset& ds, std::size_t m,
                               std::uint64_t seed) {
    if (ds.items.empty()) throw std::invalid_argument("shape_bias_score: empty dataset");
    Dataset shuffled;
    shuffled.class_names = ds.class_names;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        Rng rng = derive_rng(seed, 0x5B5u, i);
        LabeledImage item = ds.items[i];
        item.pixels = patch_shuffle(item.pixels, m, rng);
        shuffled.items.push_back(std::move(item));
    }
    return 1.0 - accuracy(model, shuffled);
}

}  // namespace infodrop
