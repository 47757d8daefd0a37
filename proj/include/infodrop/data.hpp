#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "infodrop/image_io.hpp"
#include "infodrop/rng.hpp"
#include "infodrop/tensor.hpp"

namespace infodrop {

struct LabeledImage {
    Tensor pixels;  // (c,h,w) in [0,1]
    int label = 0;
    std::string domain_tag;
};

struct Dataset {
    std::vector<LabeledImage> items;
    std::vector<std::string> class_names;

    std::size_t size() const { return items.size(); }
    std::size_t num_classes() const { return class_names.size(); }
};

enum class TextureFamily { stripes, checker, noise, dots, flat };

inline const char* to_string(TextureFamily f) {
    switch (f) {
        case TextureFamily::stripes: return "stripes";
        case TextureFamily::checker: return "checker";
        case TextureFamily::noise: return "noise";
        case TextureFamily::dots: return "dots";
        case TextureFamily::flat: return "flat";
    }
    return "?";
}

inline TextureFamily texture_family_from_string(const std::string& s) {
    if (s == "stripes") return TextureFamily::stripes;
    if (s == "checker") return TextureFamily::checker;
    if (s == "noise") return TextureFamily::noise;
    if (s == "dots") return TextureFamily::dots;
    if (s == "flat") return TextureFamily::flat;
    throw std::invalid_argument("unknown texture family: " + s);
}

// Class label is determined by shape alone; textures are sampled
// independently of the label, so the only transferable signal is the
// outline.
struct SynthSpec {
    std::size_t image_side = 64;
    std::size_t num_classes = 4;  // circle, square, triangle, cross outlines
    std::size_t channels = 1;
    double stroke = 2.0;            // outline stroke width in px
    double position_jitter = 0.2;   // center offset, fraction of side
    double scale_lo = 0.5, scale_hi = 0.9;  // shape diameter, fraction of side
    double rotation_max_deg = 30.0;  // orientation jitter, +/- degrees
    std::uint64_t seed = 0;
};

namespace detail {

// Signed distance fields for the four shape classes, unit-ish radius.
inline double sd_circle(double x, double y) { return std::sqrt(x * x + y * y) - 1.0; }

inline double sd_box(double x, double y, double hx, double hy) {
    double qx = std::abs(x) - hx, qy = std::abs(y) - hy;
    double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

inline double sd_equilateral_triangle(double x, double y, double r) {
    const double k = std::sqrt(3.0);
    x = std::abs(x) - r;
    y = y + r / k;
    if (x + k * y > 0.0) {
        double nx = (x - k * y) / 2.0, ny = (-k * x - y) / 2.0;
        x = nx;
        y = ny;
    }
    x -= std::clamp(x, -2.0 * r, 0.0);
    return -std::sqrt(x * x + y * y) * (y < 0.0 ? -1.0 : 1.0);
}

inline double sd_cross(double x, double y) {
    return std::min(sd_box(x, y, 1.0, 0.34), sd_box(x, y, 0.34, 1.0));
}

inline double shape_sdf(int cls, double x, double y) {
    switch (cls) {
        case 0: return sd_circle(x, y);
        case 1: return sd_box(x, y, 0.82, 0.82);
        case 2: return sd_equilateral_triangle(x, y, 1.0);
        case 3: return sd_cross(x, y);
        default: throw std::invalid_argument("shape_sdf: class out of range");
    }
}

// One sampled texture instance; value(x,y) is deterministic per instance.
struct TextureInstance {
    TextureFamily family;
    double v1 = 0.5, v2 = 0.5;
    int half_period = 2;       // stripes
    int orient = 0;            // stripes: 0=h, 1=v, 2=diag, 3=anti-diag
    int phase = 0;
    int cell = 1;              // checker
    int spacing = 6, dot_r = 1;  // dots
    std::vector<double> noise_field;  // noise family, side*side
    std::vector<std::pair<double, double>> dot_centers;
    std::size_t side = 0;

    double value(std::size_t xi, std::size_t yi) const {
        const int x = int(xi), y = int(yi);
        switch (family) {
            case TextureFamily::flat:
                return v1;
            case TextureFamily::stripes: {
                int axis = orient == 0 ? y : orient == 1 ? x : orient == 2 ? x + y : x - y + 256;
                return ((axis + phase) / half_period) % 2 == 0 ? v1 : v2;
            }
            case TextureFamily::checker:
                return (((x + phase) / cell + (y + phase) / cell) % 2) == 0 ? v1 : v2;
            case TextureFamily::noise:
                return noise_field[yi * side + xi];
            case TextureFamily::dots: {
                for (const auto& [cx, cy] : dot_centers) {
                    double dx = double(x) - cx, dy = double(y) - cy;
                    if (dx * dx + dy * dy <= double(dot_r * dot_r)) return v2;
                }
                return v1;
            }
        }
        return v1;
    }
};

// Strong-contrast value pairs keep patch distances well inside the
// discriminating range of the h=1 Gaussian kernel, and a floor of ~0.3
// keeps the black outline visible against every texture.
inline TextureInstance sample_texture(TextureFamily family, std::size_t side, Rng& rng) {
    TextureInstance t;
    t.family = family;
    t.side = side;
    double lo = rng.uniform(0.3, 0.45);
    double hi = rng.uniform(0.85, 1.0);
    t.v1 = rng.coin() ? lo : hi;
    t.v2 = t.v1 == lo ? hi : lo;
    switch (family) {
        case TextureFamily::flat:
            t.v1 = rng.uniform(0.4, 0.9);
            break;
        case TextureFamily::stripes:
            // deliberately low-variety: a texture-reliant model can overfit it
            t.half_period = 1 + int(rng.below(2));  // stripe width 1..2 px
            t.orient = int(rng.below(2));           // horizontal or vertical
            t.phase = int(rng.below(16));
            break;
        case TextureFamily::checker:
            t.cell = 1 + int(rng.below(2));
            t.phase = int(rng.below(8));
            break;
        case TextureFamily::noise: {
            // full-range noise: dark pixels break luminance shortcuts
            t.noise_field.resize(side * side);
            for (double& v : t.noise_field) v = rng.uniform(0.0, 1.0);
            break;
        }
        case TextureFamily::dots: {
            t.v1 = rng.uniform(0.55, 0.75);  // bright background
            t.v2 = rng.uniform(0.0, 0.15);   // dark dots
            t.spacing = 5 + int(rng.below(3));
            t.dot_r = 1 + int(rng.below(2));
            for (int gy = 0; gy * t.spacing < int(side) + t.spacing; ++gy)
                for (int gx = 0; gx * t.spacing < int(side) + t.spacing; ++gx) {
                    double jx = rng.uniform(-1.0, 1.0), jy = rng.uniform(-1.0, 1.0);
                    t.dot_centers.emplace_back(gx * t.spacing + jx, gy * t.spacing + jy);
                }
            break;
        }
    }
    return t;
}

}  // namespace detail

// Render one synthetic item: shape outline (2px black stroke) over a textured
// background, interior filled with an independently sampled texture.
inline Tensor render_synthetic_image(const SynthSpec& spec, int cls,
                                     const std::vector<TextureFamily>& families, Rng& rng,
                                     std::string* bg_family_name = nullptr) {
    const std::size_t side = spec.image_side;
    detail::TextureInstance bg =
        detail::sample_texture(families[rng.below(families.size())], side, rng);
    detail::TextureInstance fg =
        detail::sample_texture(families[rng.below(families.size())], side, rng);
    if (bg_family_name) *bg_family_name = to_string(bg.family);

    const double radius = side * rng.uniform(spec.scale_lo, spec.scale_hi) / 2.0;
    const double max_off =
        std::max(0.0, std::min(spec.position_jitter * side, side / 2.0 - radius - spec.stroke));
    const double cx = side / 2.0 + rng.uniform(-max_off, max_off);
    const double cy = side / 2.0 + rng.uniform(-max_off, max_off);
    const double rot = spec.rotation_max_deg * 3.14159265358979323846 / 180.0;
    const double theta = rng.uniform(-rot, rot);
    const double ct = std::cos(theta), st = std::sin(theta);

    Tensor img({spec.channels, side, side});
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            double px = (double(x) + 0.5 - cx), py = (double(y) + 0.5 - cy);
            double rx = (ct * px + st * py) / radius, ry = (-st * px + ct * py) / radius;
            double d = detail::shape_sdf(cls, rx, ry) * radius;
            double v;
            if (std::abs(d) <= spec.stroke / 2.0)
                v = 0.0;  // outline
            else if (d < 0.0)
                v = fg.value(x, y);
            else
                v = bg.value(x, y);
            for (std::size_t c = 0; c < spec.channels; ++c) img.at(c, y, x) = v;
        }
    return img;
}

inline const std::vector<std::string>& synth_class_names() {
    static const std::vector<std::string> names{"circle", "square", "triangle", "cross"};
    return names;
}

inline Dataset gen_synthetic(const SynthSpec& spec, std::size_t n_per_class,
                             const std::vector<TextureFamily>& families,
                             const std::string& domain_tag = "") {
    if (spec.num_classes < 1 || spec.num_classes > 4)
        throw std::invalid_argument("gen_synthetic: num_classes must be 1..4");
    if (families.empty()) throw std::invalid_argument("gen_synthetic: no texture families");
    Dataset ds;
    ds.class_names.assign(synth_class_names().begin(),
                          synth_class_names().begin() + spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            Rng rng = derive_rng(spec.seed, 0x5E17u, c, i);
            std::string bg;
            LabeledImage item;
            item.pixels = render_synthetic_image(spec, int(c), families, rng, &bg);
            item.label = int(c);
            item.domain_tag = domain_tag.empty() ? bg : domain_tag;
            ds.items.push_back(std::move(item));
        }
    return ds;
}

// Stratified split; per-class counts land within 1 of fraction*class_size.
inline std::array<Dataset, 3> split(const Dataset& ds, std::array<double, 3> fractions,
                                    std::uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");

    std::array<Dataset, 3> out;
    for (Dataset& d : out) d.class_names = ds.class_names;

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.items.size(); ++i) by_class[ds.items[i].label].push_back(i);

    for (auto& [cls, idx] : by_class) {
        Rng rng = derive_rng(seed, 0x5711u, std::uint64_t(cls));
        rng.shuffle(idx);
        const double n = double(idx.size());
        std::size_t b1 = std::size_t(std::llround(fractions[0] * n));
        std::size_t b2 = std::size_t(std::llround((fractions[0] + fractions[1]) * n));
        b1 = std::min(b1, idx.size());
        b2 = std::min(std::max(b2, b1), idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t which = i < b1 ? 0 : (i < b2 ? 1 : 2);
            out[which].items.push_back(ds.items[idx[i]]);
        }
    }
    return out;
}

// Appendix-B-style augmentation: random crop to 80-100% of the side,
// resized back bilinearly, plus a fair horizontal flip.
inline Tensor augment(const Tensor& image, Rng& rng) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const double frac = rng.uniform(0.8, 1.0);
    const std::size_t ch_ = std::max<std::size_t>(1, std::size_t(frac * h));
    const std::size_t cw = std::max<std::size_t>(1, std::size_t(frac * w));
    const std::size_t y0 = std::size_t(rng.below(h - ch_ + 1));
    const std::size_t x0 = std::size_t(rng.below(w - cw + 1));
    const bool flip = rng.coin();

    Tensor out({c, h, w});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double sy = (double(y) + 0.5) * double(ch_) / double(h) - 0.5 + double(y0);
                double sx = (double(x) + 0.5) * double(cw) / double(w) - 0.5 + double(x0);
                double fy = std::clamp(sy, 0.0, double(h - 1));
                double fx = std::clamp(sx, 0.0, double(w - 1));
                std::size_t iy0 = std::size_t(fy), ix0 = std::size_t(fx);
                std::size_t iy1 = std::min(iy0 + 1, h - 1), ix1 = std::min(ix0 + 1, w - 1);
                double ay = fy - double(iy0), ax = fx - double(ix0);
                double v = (1 - ay) * ((1 - ax) * image.at(ci, iy0, ix0) +
                                       ax * image.at(ci, iy0, ix1)) +
                           ay * ((1 - ax) * image.at(ci, iy1, ix0) +
                                 ax * image.at(ci, iy1, ix1));
                out.at(ci, y, flip ? w - 1 - x : x) = v;
            }
    return out;
}

// Directory layout root/<class_name>/<image>.png; class indices follow
// sorted class-name order.
inline Dataset load_dir(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw std::runtime_error("load_dir: not a directory: " + root);

    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw std::runtime_error("load_dir: no class directories in " + root);

    Dataset ds;
    ds.class_names = classes;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(fs::path(root) / classes[c]))
            if (entry.is_regular_file()) files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw std::runtime_error("load_dir: empty class directory: " + classes[c]);
        for (const std::string& f : files) {
            LabeledImage item;
            item.pixels = load_png(f);  // throws naming the file when unreadable
            item.label = int(c);
            ds.items.push_back(std::move(item));
        }
    }
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& root) {
    namespace fs = std::filesystem;
    std::vector<std::size_t> counter(ds.num_classes(), 0);
    for (const LabeledImage& item : ds.items) {
        fs::path dir = fs::path(root) / ds.class_names.at(item.label);
        fs::create_directories(dir);
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.png", counter[item.label]++);
        save_png((dir / name).string(), item.pixels);
    }
}

}  // namespace infodrop
