#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "infodrop/infodrop.hpp"
#include "infodrop/layers.hpp"
#include "infodrop/parallel.hpp"
#include "infodrop/rng.hpp"
#include "infodrop/self_information.hpp"
#include "infodrop/tensor.hpp"

namespace infodrop {

enum class LayerKind : std::uint8_t {
    conv = 1,
    relu = 2,
    maxpool = 3,
    avgpool = 4,
    batchnorm = 5,
    flatten = 6,
    linear = 7,
    softmax_xent = 8,
    infodrop = 9,
};

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::avgpool: return "avgpool";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::flatten: return "flatten";
        case LayerKind::linear: return "linear";
        case LayerKind::softmax_xent: return "softmax_xent";
        case LayerKind::infodrop: return "infodrop";
    }
    return "?";
}

constexpr std::size_t kNoConv = ~std::size_t(0);

struct Layer {
    LayerKind kind;
    ConvLayerState conv;
    PoolSpec pool;
    BatchNormState bn{0};
    LinearState linear;
    InfoDropParams infodrop;
    std::size_t src_conv = kNoConv;  // infodrop: index of the governing conv
    std::vector<std::size_t> out_shape;

    // learnable tensors, slot order is the checkpoint order
    std::array<Tensor*, 2> params() {
        switch (kind) {
            case LayerKind::conv: return {&conv.kernel, &conv.bias};
            case LayerKind::batchnorm: return {&bn.gamma, &bn.beta};
            case LayerKind::linear: return {&linear.weight, &linear.bias};
            default: return {nullptr, nullptr};
        }
    }
    std::array<const Tensor*, 2> params() const {
        return {const_cast<Layer*>(this)->params()[0], const_cast<Layer*>(this)->params()[1]};
    }
};

struct ForwardCache {
    // acts[l] = inputs of layer l per batch item; acts[n_layers] = final outputs
    std::vector<std::vector<Tensor>> acts;
    std::vector<BatchNormCache> bn;   // indexed by layer
    std::vector<bool> bn_training;    // whether BN ran in training mode
    std::vector<std::vector<DropMask>> masks;  // indexed by layer, then item
    std::vector<std::vector<InfoMap>> infos;   // indexed by layer, then item
};

struct ModelGrads {
    std::vector<std::array<Tensor, 2>> param;  // per layer, per slot
    std::vector<Tensor> input;                 // per batch item
};

// Feed-forward chain over rank-3 activations with an optional softmax
// cross-entropy head. Shapes are validated when the chain is finalized.
class Model {
public:
    std::vector<Layer> layers;
    std::vector<std::size_t> input_shape;  // (c,h,w)
    bool finalized = false;

    Model& add_conv(std::size_t out_ch, std::size_t k, std::size_t stride = 1,
                    std::size_t padding = 0) {
        Layer l;
        l.kind = LayerKind::conv;
        l.conv.stride = stride;
        l.conv.padding = padding;
        l.conv.kernel = Tensor({out_ch, 0, k, k});  // c_in inferred at finalize
        l.conv.bias = Tensor({out_ch});
        layers.push_back(std::move(l));
        return *this;
    }
    Model& add_relu() {
        Layer l;
        l.kind = LayerKind::relu;
        layers.push_back(std::move(l));
        return *this;
    }
    Model& add_maxpool(std::size_t k = 2, std::size_t stride = 2) {
        Layer l;
        l.kind = LayerKind::maxpool;
        l.pool = {k, stride};
        layers.push_back(std::move(l));
        return *this;
    }
    Model& add_avgpool(std::size_t k = 2, std::size_t stride = 2) {
        Layer l;
        l.kind = LayerKind::avgpool;
        l.pool = {k, stride};
        layers.push_back(std::move(l));
        return *this;
    }
    Model& add_batchnorm() {
        Layer l;
        l.kind = LayerKind::batchnorm;
        layers.push_back(std::move(l));
        return *this;
    }
    Model& add_flatten() {
        Layer l;
        l.kind = LayerKind::flatten;
        layers.push_back(std::move(l));
        return *this;
    }
    Model& add_linear(std::size_t out) {
        Layer l;
        l.kind = LayerKind::linear;
        l.linear.weight = Tensor({out, 0});  // in inferred at finalize
        l.linear.bias = Tensor({out});
        layers.push_back(std::move(l));
        return *this;
    }
    Model& add_softmax_xent() {
        Layer l;
        l.kind = LayerKind::softmax_xent;
        layers.push_back(std::move(l));
        return *this;
    }

    // Shape-checks the whole chain and sizes every parameter tensor.
    void finalize(std::vector<std::size_t> in_shape) {
        if (in_shape.size() != 3)
            throw std::invalid_argument("Model: input shape must be (c,h,w)");
        input_shape = std::move(in_shape);
        std::vector<std::size_t> cur = input_shape;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Layer& l = layers[i];
            if (l.kind == LayerKind::softmax_xent && i + 1 != layers.size())
                throw std::invalid_argument("Model: loss head must be the last layer");
            cur = infer_out_shape(l, cur, i);
            l.out_shape = cur;
        }
        finalized = true;
    }

    std::size_t num_classes() const {
        if (layers.empty()) throw std::logic_error("Model: empty");
        const Layer& last = layers.back();
        const Layer& out = last.kind == LayerKind::softmax_xent && layers.size() >= 2
                               ? layers[layers.size() - 2]
                               : last;
        return out.out_shape.back();
    }

    bool has_loss_head() const {
        return !layers.empty() && layers.back().kind == LayerKind::softmax_xent;
    }

    // Kaiming-uniform fan-in for convs, zero bias. A linear layer that
    // directly feeds the loss head starts at zero so the first softmax steps
    // cannot saturate; interior linear layers stay Kaiming. The rng stream is
    // keyed by the ordinal of the parameterized layer, not the raw index, so
    // inserting InfoDrop nodes later does not change paired initializations.
    void init_params(std::uint64_t seed) {
        std::size_t ordinal = 0;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            Layer& l = layers[li];
            if (l.kind == LayerKind::conv) {
                std::size_t fan_in = l.conv.c_in() * l.conv.k() * l.conv.k();
                double bound = std::sqrt(6.0 / double(fan_in));
                Rng rng = derive_rng(seed, 0x171cu, ordinal);
                for (double& v : l.conv.kernel.data) v = rng.uniform(-bound, bound);
                std::fill(l.conv.bias.data.begin(), l.conv.bias.data.end(), 0.0);
                ++ordinal;
            } else if (l.kind == LayerKind::linear) {
                bool feeds_head = li + 1 < layers.size() &&
                                  layers[li + 1].kind == LayerKind::softmax_xent;
                Rng rng = derive_rng(seed, 0x171cu, ordinal);
                if (feeds_head) {
                    std::fill(l.linear.weight.data.begin(), l.linear.weight.data.end(), 0.0);
                } else {
                    std::size_t fan_in = l.linear.weight.dim(1);
                    double bound = std::sqrt(6.0 / double(fan_in));
                    for (double& v : l.linear.weight.data) v = rng.uniform(-bound, bound);
                }
                std::fill(l.linear.bias.data.begin(), l.linear.bias.data.end(), 0.0);
                ++ordinal;
            } else if (l.kind == LayerKind::batchnorm) {
                l.bn = BatchNormState(l.bn.gamma.dim(0));
                ++ordinal;
            }
        }
    }

    std::vector<std::size_t> conv_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].kind == LayerKind::conv) out.push_back(i);
        return out;
    }

    // Install InfoDrop after the given conv's activation: the node goes
    // behind any batchnorm/relu that directly follows the conv. Patch
    // geometry is taken from the conv itself.
    void attach(std::size_t conv_index, InfoDropParams params) {
        if (!finalized) throw std::logic_error("attach: model not finalized");
        if (conv_index >= layers.size() || layers[conv_index].kind != LayerKind::conv)
            throw std::invalid_argument("attach: layer " + std::to_string(conv_index) +
                                        " is not a conv layer");
        params.patch_k = layers[conv_index].conv.k();
        params.stride = layers[conv_index].conv.stride;
        params.padding = layers[conv_index].conv.padding;
        params.validate();

        std::size_t pos = conv_index + 1;
        while (pos < layers.size() && (layers[pos].kind == LayerKind::batchnorm ||
                                       layers[pos].kind == LayerKind::relu))
            ++pos;
        Layer node;
        node.kind = LayerKind::infodrop;
        node.infodrop = params;
        node.src_conv = conv_index;
        node.out_shape = layers[pos - 1].out_shape;
        for (Layer& l : layers)
            if (l.kind == LayerKind::infodrop && l.src_conv >= pos) ++l.src_conv;
        layers.insert(layers.begin() + pos, std::move(node));
    }

    // Attach to the first K conv layers (the Table-7 style sweep axis).
    void attach_first_k(std::size_t k, const InfoDropParams& params) {
        std::vector<std::size_t> convs = conv_indices();
        k = std::min(k, convs.size());
        for (std::size_t i = k; i-- > 0;) attach(convs[i], params);
    }

    // Flip every attachment to removed; the layer becomes a permanent
    // identity (used for the clean finetune stage and final inference).
    void detach_all() {
        for (Layer& l : layers)
            if (l.kind == LayerKind::infodrop) l.infodrop.mode = InfoDropMode::removed;
    }

    void set_infodrop_mode(InfoDropMode m) {
        for (Layer& l : layers)
            if (l.kind == LayerKind::infodrop && l.infodrop.mode != InfoDropMode::removed)
                l.infodrop.mode = m;
    }

    bool has_active_infodrop() const {
        for (const Layer& l : layers)
            if (l.kind == LayerKind::infodrop && l.infodrop.mode != InfoDropMode::removed)
                return true;
        return false;
    }

    // Forward over a batch; returns logits (N, num_classes). `training`
    // selects batch-norm statistics (and updates them); InfoDrop nodes act
    // per their own mode. `seed` must name the step uniquely for mask
    // sampling reproducibility.
    Tensor forward(std::vector<Tensor> batch, bool training, std::uint64_t seed,
                   ForwardCache* cache = nullptr);

    // Backward from d(loss)/d(logits); fills parameter and input gradients.
    ModelGrads backward(const Tensor& dlogits, const ForwardCache& cache) const;

private:
    std::vector<std::size_t> infer_out_shape(Layer& l, const std::vector<std::size_t>& in,
                                             std::size_t index) {
        switch (l.kind) {
            case LayerKind::conv: {
                if (in.size() != 3)
                    throw std::invalid_argument("Model: conv needs rank-3 input at layer " +
                                                std::to_string(index));
                std::size_t c_out = l.conv.kernel.dim(0), k = l.conv.kernel.dim(2);
                l.conv.kernel = Tensor({c_out, in[0], k, k});
                l.conv.validate();
                return {c_out, conv_out_extent(in[1], k, l.conv.stride, l.conv.padding),
                        conv_out_extent(in[2], k, l.conv.stride, l.conv.padding)};
            }
            case LayerKind::relu:
                return in;
            case LayerKind::maxpool:
            case LayerKind::avgpool:
                if (in.size() != 3)
                    throw std::invalid_argument("Model: pool needs rank-3 input at layer " +
                                                std::to_string(index));
                return {in[0], pool_out_extent(in[1], l.pool), pool_out_extent(in[2], l.pool)};
            case LayerKind::batchnorm:
                if (in.size() != 3)
                    throw std::invalid_argument("Model: batchnorm needs rank-3 input");
                l.bn = BatchNormState(in[0]);
                return in;
            case LayerKind::flatten:
                return {Tensor::numel_of(in)};
            case LayerKind::linear: {
                if (in.size() != 1)
                    throw std::invalid_argument("Model: linear needs flattened input at layer " +
                                                std::to_string(index));
                std::size_t out = l.linear.weight.dim(0);
                l.linear.weight = Tensor({out, in[0]});
                return {out};
            }
            case LayerKind::softmax_xent:
                if (in.size() != 1)
                    throw std::invalid_argument("Model: loss head needs flattened input");
                return in;
            case LayerKind::infodrop:
                return in;
        }
        throw std::logic_error("Model: unknown layer kind");
    }
};

inline Tensor Model::forward(std::vector<Tensor> batch, bool training, std::uint64_t seed,
                             ForwardCache* cache) {
    if (!finalized) throw std::logic_error("Model::forward: not finalized");
    if (batch.empty()) throw std::invalid_argument("Model::forward: empty batch");
    for (const Tensor& t : batch) require_shape(t, input_shape, "Model::forward input");

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    const std::size_t n = batch.size();
    c.acts.assign(layers.size() + 1, {});
    c.bn.assign(layers.size(), {});
    c.bn_training.assign(layers.size(), false);
    c.masks.assign(layers.size(), {});
    c.infos.assign(layers.size(), {});
    c.acts[0] = std::move(batch);

    for (std::size_t li = 0; li < layers.size(); ++li) {
        const Layer& l = layers[li];
        const std::vector<Tensor>& in = c.acts[li];
        std::vector<Tensor>& out = c.acts[li + 1];
        switch (l.kind) {
            case LayerKind::batchnorm: {
                // batch statistics couple the items; runs serially
                out = batchnorm2d_forward(in, layers[li].bn, training, &c.bn[li]);
                c.bn_training[li] = training;
                break;
            }
            case LayerKind::softmax_xent:
                out = in;  // head is applied by the caller on stacked logits
                break;
            case LayerKind::infodrop: {
                out.assign(n, Tensor());
                const bool active = l.infodrop.mode == InfoDropMode::train;
                if (active) {
                    c.masks[li].assign(n, DropMask());
                    c.infos[li].assign(n, InfoMap());
                }
                parallel_for(n, [&](std::size_t i) {
                    if (!active) {
                        out[i] = in[i];
                        return;
                    }
                    const Tensor& conv_in = c.acts[l.src_conv][i];
                    std::uint64_t node_seed = derive_key(seed, li, i);
                    InfoMap info = estimate_info(conv_in, l.infodrop, node_seed);
                    auto [dropped, mask] = infodrop_forward(in[i], info, l.infodrop, node_seed);
                    out[i] = std::move(dropped);
                    c.masks[li][i] = std::move(mask);
                    c.infos[li][i] = std::move(info);
                });
                break;
            }
            default:
                out.assign(n, Tensor());
                parallel_for(n, [&](std::size_t i) {
                    switch (l.kind) {
                        case LayerKind::conv: out[i] = conv2d_forward(in[i], l.conv); break;
                        case LayerKind::relu: out[i] = relu_forward(in[i]); break;
                        case LayerKind::maxpool: out[i] = maxpool_forward(in[i], l.pool); break;
                        case LayerKind::avgpool: out[i] = avgpool_forward(in[i], l.pool); break;
                        case LayerKind::flatten: {
                            Tensor t = in[i];
                            t.shape = {t.numel()};
                            out[i] = std::move(t);
                            break;
                        }
                        case LayerKind::linear: out[i] = linear_forward(in[i], l.linear); break;
                        default: break;
                    }
                });
        }
    }

    const std::vector<Tensor>& last = c.acts[layers.size()];
    const std::size_t k = last[0].numel();
    Tensor logits({n, k});
    for (std::size_t i = 0; i < n; ++i)
        std::copy(last[i].data.begin(), last[i].data.end(), logits.ptr() + i * k);
    return logits;
}

inline ModelGrads Model::backward(const Tensor& dlogits, const ForwardCache& cache) const {
    const std::size_t n = cache.acts[0].size();
    if (dlogits.rank() != 2 || dlogits.dim(0) != n)
        throw std::invalid_argument("Model::backward: dlogits must be (N,K)");

    ModelGrads g;
    g.param.resize(layers.size());
    for (std::size_t li = 0; li < layers.size(); ++li) {
        auto ps = layers[li].params();
        if (ps[0]) g.param[li][0] = Tensor(ps[0]->shape);
        if (ps[1]) g.param[li][1] = Tensor(ps[1]->shape);
    }

    const std::size_t k = dlogits.dim(1);
    std::vector<Tensor> grad(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t({k});
        std::copy(dlogits.ptr() + i * k, dlogits.ptr() + (i + 1) * k, t.ptr());
        grad[i] = std::move(t);
    }

    for (std::size_t li = layers.size(); li-- > 0;) {
        const Layer& l = layers[li];
        const std::vector<Tensor>& in = cache.acts[li];
        switch (l.kind) {
            case LayerKind::softmax_xent:
                break;  // caller already differentiated the head
            case LayerKind::batchnorm: {
                if (cache.bn_training[li]) {
                    BatchNormGrads bg = batchnorm2d_backward(in, l.bn, cache.bn[li], grad);
                    grad = std::move(bg.input_grads);
                    g.param[li][0] = std::move(bg.gamma_grad);
                    g.param[li][1] = std::move(bg.beta_grad);
                } else {
                    // eval-mode BN is a fixed affine map
                    const std::size_t ch = l.bn.gamma.dim(0);
                    const std::size_t per = in[0].dim(1) * in[0].dim(2);
                    for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t cc = 0; cc < ch; ++cc) {
                            double scale =
                                l.bn.gamma[cc] / std::sqrt(l.bn.running_var[cc] + l.bn.eps);
                            double* gp = grad[i].ptr() + cc * per;
                            for (std::size_t x = 0; x < per; ++x) gp[x] *= scale;
                        }
                    }
                }
                break;
            }
            case LayerKind::infodrop: {
                const bool active = l.infodrop.mode == InfoDropMode::train;
                if (active) {
                    parallel_for(n, [&](std::size_t i) {
                        grad[i] =
                            infodrop_backward(grad[i], cache.masks[li][i], l.infodrop.rescale);
                    });
                }
                break;
            }
            case LayerKind::conv: {
                std::vector<ConvGrads> per_item(n);
                parallel_for(n, [&](std::size_t i) {
                    per_item[i] = conv2d_backward(in[i], l.conv, grad[i]);
                });
                for (std::size_t i = 0; i < n; ++i) {
                    grad[i] = std::move(per_item[i].input_grad);
                    for (std::size_t x = 0; x < g.param[li][0].numel(); ++x)
                        g.param[li][0][x] += per_item[i].kernel_grad[x];
                    for (std::size_t x = 0; x < g.param[li][1].numel(); ++x)
                        g.param[li][1][x] += per_item[i].bias_grad[x];
                }
                break;
            }
            case LayerKind::linear: {
                std::vector<LinearGrads> per_item(n);
                parallel_for(n, [&](std::size_t i) {
                    per_item[i] = linear_backward(in[i], l.linear, grad[i]);
                });
                for (std::size_t i = 0; i < n; ++i) {
                    grad[i] = std::move(per_item[i].input_grad);
                    for (std::size_t x = 0; x < g.param[li][0].numel(); ++x)
                        g.param[li][0][x] += per_item[i].weight_grad[x];
                    for (std::size_t x = 0; x < g.param[li][1].numel(); ++x)
                        g.param[li][1][x] += per_item[i].bias_grad[x];
                }
                break;
            }
            default:
                parallel_for(n, [&](std::size_t i) {
                    switch (l.kind) {
                        case LayerKind::relu: grad[i] = relu_backward(in[i], grad[i]); break;
                        case LayerKind::maxpool:
                            grad[i] = maxpool_backward(in[i], l.pool, grad[i]);
                            break;
                        case LayerKind::avgpool:
                            grad[i] = avgpool_backward(in[i], l.pool, grad[i]);
                            break;
                        case LayerKind::flatten: {
                            Tensor t = std::move(grad[i]);
                            t.shape = in[i].shape;
                            grad[i] = std::move(t);
                            break;
                        }
                        default: break;
                    }
                });
        }
    }
    g.input = std::move(grad);
    return g;
}

// Momentum buffers mirroring the model's parameter slots.
struct OptimizerState {
    std::vector<std::array<Tensor, 2>> velocity;

    explicit OptimizerState(const Model& m) {
        velocity.resize(m.layers.size());
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            auto ps = m.layers[li].params();
            if (ps[0]) velocity[li][0] = Tensor(ps[0]->shape);
            if (ps[1]) velocity[li][1] = Tensor(ps[1]->shape);
        }
    }
};

inline void sgd_step_model(Model& m, const ModelGrads& g, OptimizerState& opt,
                           const SgdParams& hp) {
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        auto ps = m.layers[li].params();
        for (std::size_t s = 0; s < 2; ++s)
            if (ps[s]) sgd_step(*ps[s], g.param[li][s], opt.velocity[li][s], hp);
    }
}

// Architecture presets. "small4" follows the default TrainConfig layout;
// "small3" is the lighter variant used for CPU-budget experiments;
// "*_bn" adds batch norm after each conv.
inline Model make_preset(const std::string& name, std::size_t in_channels,
                         std::size_t image_side, std::size_t num_classes) {
    Model m;
    // a "_gap" suffix swaps the flatten head for global average pooling
    std::string base = name;
    bool gap = false;
    if (base.size() > 4 && base.compare(base.size() - 4, 4, "_gap") == 0) {
        gap = true;
        base = base.substr(0, base.size() - 4);
    }
    std::size_t spatial = image_side;
    auto block = [&](std::size_t ch, bool bn) {
        m.add_conv(ch, 3, 1, 1);
        if (bn) m.add_batchnorm();
        m.add_relu();
        m.add_maxpool(2, 2);
        spatial /= 2;
    };
    auto head = [&] {
        if (gap) m.add_avgpool(spatial, spatial);
        m.add_flatten().add_linear(num_classes).add_softmax_xent();
    };
    if (base == "small4" || base == "small4_bn") {
        bool bn = base == "small4_bn";
        block(16, bn);
        block(32, bn);
        block(64, bn);
        head();
    } else if (base == "small3" || base == "small3_bn") {
        bool bn = base == "small3_bn";
        block(8, bn);
        block(16, bn);
        block(32, bn);
        head();
    } else if (base == "small3w") {
        // 5x5 first layer: wider patches for the information estimate
        m.add_conv(8, 5, 1, 2).add_relu().add_maxpool(2, 2);
        spatial /= 2;
        block(16, false);
        block(32, false);
        head();
    } else if (base == "tiny") {
        block(8, false);
        block(16, false);
        head();
    } else {
        throw std::invalid_argument("unknown model preset: " + name);
    }
    m.finalize({in_channels, image_side, image_side});
    return m;
}

}  // namespace infodrop
