#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "infodrop/model.hpp"

namespace infodrop {

// Checkpoint layout ("IDRP", little-endian):
//   magic "IDRP" | u16 version | u32 n_layers | u8 input rank | u32* input shape
//   per layer: u8 kind | kind-specific u32 aux words | u8 n_tensors |
//              per tensor: u8 rank | u32* extents
//   payload: all manifest tensors as f32, manifest order.
// Conv stores (kernel, bias); batchnorm (gamma, beta, running_mean,
// running_var) so running statistics travel with the model; linear
// (weight, bias). InfoDrop attachments persist as manifest-only entries
// with their hyperparameters bit-cast into aux words.

namespace ckpt_detail {

constexpr std::uint16_t kVersion = 1;

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    std::uint8_t u8() {
        if (pos + 1 > buf.size()) throw std::runtime_error("checkpoint: truncated");
        return std::uint8_t(buf[pos++]);
    }
    std::uint16_t u16() {
        if (pos + 2 > buf.size()) throw std::runtime_error("checkpoint: truncated");
        std::uint16_t v = std::uint16_t(std::uint8_t(buf[pos])) |
                          std::uint16_t(std::uint8_t(buf[pos + 1])) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        if (pos + 4 > buf.size()) throw std::runtime_error("checkpoint: truncated");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        std::uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

inline std::vector<const Tensor*> layer_tensors(const Layer& l) {
    switch (l.kind) {
        case LayerKind::conv: return {&l.conv.kernel, &l.conv.bias};
        case LayerKind::batchnorm:
            return {&l.bn.gamma, &l.bn.beta, &l.bn.running_mean, &l.bn.running_var};
        case LayerKind::linear: return {&l.linear.weight, &l.linear.bias};
        default: return {};
    }
}

inline std::vector<Tensor*> layer_tensors(Layer& l) {
    switch (l.kind) {
        case LayerKind::conv: return {&l.conv.kernel, &l.conv.bias};
        case LayerKind::batchnorm:
            return {&l.bn.gamma, &l.bn.beta, &l.bn.running_mean, &l.bn.running_var};
        case LayerKind::linear: return {&l.linear.weight, &l.linear.bias};
        default: return {};
    }
}

inline std::uint32_t f32_bits(double v) {
    float f = float(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

inline double bits_f32(std::uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return double(f);
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Model& m) {
    using namespace ckpt_detail;
    if (!m.finalized) throw std::logic_error("serialize_checkpoint: model not finalized");
    std::string out = "IDRP";
    put_u16(out, kVersion);
    put_u32(out, std::uint32_t(m.layers.size()));
    out.push_back(char(m.input_shape.size()));
    for (std::size_t e : m.input_shape) put_u32(out, std::uint32_t(e));

    for (const Layer& l : m.layers) {
        out.push_back(char(l.kind));
        switch (l.kind) {
            case LayerKind::conv:
                put_u32(out, std::uint32_t(l.conv.stride));
                put_u32(out, std::uint32_t(l.conv.padding));
                break;
            case LayerKind::maxpool:
            case LayerKind::avgpool:
                put_u32(out, std::uint32_t(l.pool.k));
                put_u32(out, std::uint32_t(l.pool.stride));
                break;
            case LayerKind::infodrop: {
                const InfoDropParams& p = l.infodrop;
                put_u32(out, std::uint32_t(l.src_conv));
                put_u32(out, std::uint32_t(p.mode));
                put_u32(out, p.rescale ? 1 : 0);
                put_u32(out, std::uint32_t(p.radius_R));
                put_u32(out, std::uint32_t(p.patch_k));
                put_u32(out, std::uint32_t(p.stride));
                put_u32(out, std::uint32_t(p.padding));
                put_u32(out, std::uint32_t(p.subsample_n ? *p.subsample_n : 0));
                put_u32(out, f32_bits(p.r0));
                put_u32(out, f32_bits(p.temperature));
                put_u32(out, f32_bits(p.bandwidth_h));
                break;
            }
            default:
                break;
        }
        auto tensors = layer_tensors(l);
        out.push_back(char(tensors.size()));
        for (const Tensor* t : tensors) {
            out.push_back(char(t->rank()));
            for (std::size_t e : t->shape) put_u32(out, std::uint32_t(e));
        }
    }
    for (const Layer& l : m.layers)
        for (const Tensor* t : layer_tensors(l))
            for (double v : t->data) put_f32(out, float(v));
    return out;
}

inline void save_checkpoint(const Model& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    std::string bytes = serialize_checkpoint(m);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Model deserialize_checkpoint(const std::string& bytes) {
    using namespace ckpt_detail;
    if (bytes.size() < 6 || bytes.compare(0, 4, "IDRP") != 0)
        throw std::runtime_error("checkpoint: bad magic");
    Reader r{bytes, 4};
    std::uint16_t version = r.u16();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    const std::uint32_t n_layers = r.u32();
    const std::uint8_t in_rank = r.u8();
    std::vector<std::size_t> input_shape;
    for (std::uint8_t i = 0; i < in_rank; ++i) input_shape.push_back(r.u32());

    Model m;
    std::vector<std::vector<std::vector<std::size_t>>> declared(n_layers);
    for (std::uint32_t li = 0; li < n_layers; ++li) {
        Layer l;
        l.kind = LayerKind(r.u8());
        switch (l.kind) {
            case LayerKind::conv:
                l.conv.stride = r.u32();
                l.conv.padding = r.u32();
                break;
            case LayerKind::maxpool:
            case LayerKind::avgpool:
                l.pool.k = r.u32();
                l.pool.stride = r.u32();
                break;
            case LayerKind::infodrop: {
                l.src_conv = r.u32();
                l.infodrop.mode = InfoDropMode(r.u32());
                l.infodrop.rescale = r.u32() != 0;
                l.infodrop.radius_R = r.u32();
                l.infodrop.patch_k = r.u32();
                l.infodrop.stride = r.u32();
                l.infodrop.padding = r.u32();
                std::uint32_t sub = r.u32();
                if (sub) l.infodrop.subsample_n = sub;
                l.infodrop.r0 = bits_f32(r.u32());
                l.infodrop.temperature = bits_f32(r.u32());
                l.infodrop.bandwidth_h = bits_f32(r.u32());
                break;
            }
            case LayerKind::relu:
            case LayerKind::batchnorm:
            case LayerKind::flatten:
            case LayerKind::linear:
            case LayerKind::softmax_xent:
                break;
            default:
                throw std::runtime_error("checkpoint: unknown layer kind");
        }
        const std::uint8_t n_tensors = r.u8();
        for (std::uint8_t t = 0; t < n_tensors; ++t) {
            std::uint8_t rank = r.u8();
            std::vector<std::size_t> shape;
            for (std::uint8_t e = 0; e < rank; ++e) shape.push_back(r.u32());
            declared[li].push_back(std::move(shape));
        }
        // size parameter holders so finalize can validate against them
        if (l.kind == LayerKind::conv) {
            if (declared[li].size() != 2 || declared[li][0].size() != 4)
                throw std::runtime_error("checkpoint: bad conv manifest");
            l.conv.kernel = Tensor({declared[li][0][0], 0, declared[li][0][2],
                                    declared[li][0][3]});
            l.conv.bias = Tensor(declared[li][1]);
        } else if (l.kind == LayerKind::linear) {
            if (declared[li].size() != 2 || declared[li][0].size() != 2)
                throw std::runtime_error("checkpoint: bad linear manifest");
            l.linear.weight = Tensor({declared[li][0][0], 0});
            l.linear.bias = Tensor(declared[li][1]);
        }
        m.layers.push_back(std::move(l));
    }

    m.finalize(input_shape);

    // shape check then payload
    for (std::uint32_t li = 0; li < n_layers; ++li) {
        auto tensors = layer_tensors(m.layers[li]);
        if (tensors.size() != declared[li].size())
            throw std::runtime_error("checkpoint: manifest/layer tensor count mismatch");
        for (std::size_t t = 0; t < tensors.size(); ++t)
            if (tensors[t]->shape != declared[li][t])
                throw std::runtime_error("checkpoint: tensor shape mismatch at layer " +
                                         std::to_string(li));
    }
    for (Layer& l : m.layers)
        for (Tensor* t : layer_tensors(l))
            for (double& v : t->data) v = r.f32();
    if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
    return m;
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

inline std::string describe_checkpoint(const Model& m) {
    std::ostringstream out;
    out << "input " << shape_str(m.input_shape) << "\n";
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const Layer& l = m.layers[li];
        out << li << ": " << to_string(l.kind);
        switch (l.kind) {
            case LayerKind::conv:
                out << " kernel " << shape_str(l.conv.kernel.shape) << " stride "
                    << l.conv.stride << " pad " << l.conv.padding;
                break;
            case LayerKind::maxpool:
            case LayerKind::avgpool:
                out << " k " << l.pool.k << " stride " << l.pool.stride;
                break;
            case LayerKind::linear:
                out << " weight " << shape_str(l.linear.weight.shape);
                break;
            case LayerKind::batchnorm:
                out << " channels " << l.bn.gamma.dim(0);
                break;
            case LayerKind::infodrop:
                out << " conv " << l.src_conv << " mode " << to_string(l.infodrop.mode)
                    << " r0 " << l.infodrop.r0 << " T " << l.infodrop.temperature << " h "
                    << l.infodrop.bandwidth_h << " R " << l.infodrop.radius_R;
                break;
            default:
                break;
        }
        out << " -> " << shape_str(l.out_shape) << "\n";
    }
    return out.str();
}

}  // namespace infodrop
