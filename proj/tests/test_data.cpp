#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "infodrop/analysis.hpp"
#include "infodrop/data.hpp"
#include "infodrop/image_io.hpp"

using namespace infodrop;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("infodrop_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Edge-map features for the shape-recoverability check: the generator keeps
// every texture value >= 0.3 while the stroke is 0, so thresholding yields
// the outline edge map; blur it for pose tolerance, pool to 16x16,
// L2-normalize.
std::vector<double> edge_features(const Tensor& img) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    // dark mask, then keep only its largest 4-connected component: textures
    // contribute small dark specks while the stroke is one long curve
    std::vector<int> comp(h * w, -1);
    std::vector<std::size_t> best_cells;
    int n_comp = 0;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (comp[start] >= 0 || img[start] >= 0.15) continue;
        std::vector<std::size_t> stack{start}, cells;
        comp[start] = n_comp;
        while (!stack.empty()) {
            std::size_t p = stack.back();
            stack.pop_back();
            cells.push_back(p);
            std::size_t y = p / w, x = p % w;
            const std::size_t nbr[4] = {p >= w ? p - w : p, p + w < h * w ? p + w : p,
                                        x > 0 ? p - 1 : p, x + 1 < w ? p + 1 : p};
            for (std::size_t q : nbr)
                if (q != p && comp[q] < 0 && img[q] < 0.15) {
                    comp[q] = n_comp;
                    stack.push_back(q);
                }
        }
        if (cells.size() > best_cells.size()) best_cells = std::move(cells);
        ++n_comp;
    }
    Tensor mask({1, h, w});
    double cy = 0, cx = 0, count = 0;
    for (std::size_t p : best_cells) {
        mask.at(0, p / w, p % w) = 1.0;
        cy += double(p / w);
        cx += double(p % w);
        count += 1.0;
    }
    if (count == 0) return std::vector<double>(16 * 16, 0.0);
    cy /= count;
    cx /= count;
    double spread = 0.0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (mask.at(0, y, x) > 0.0) {
                double dy = double(y) - cy, dx = double(x) - cx;
                spread += dy * dy + dx * dx;
            }
    spread = std::sqrt(spread / count);  // radius of gyration

    // resample the blurred mask on a canonical centered frame
    Tensor soft = detail::gaussian_blur(mask, 1.5);
    const std::size_t grid = 16;
    const double half = 1.8 * spread;
    std::vector<double> feat(grid * grid, 0.0);
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx) {
            double sy = cy + (2.0 * (double(gy) + 0.5) / grid - 1.0) * half;
            double sx = cx + (2.0 * (double(gx) + 0.5) / grid - 1.0) * half;
            if (sy < 0 || sy > double(h - 1) || sx < 0 || sx > double(w - 1)) continue;
            std::size_t y0 = std::size_t(sy), x0 = std::size_t(sx);
            std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            double ay = sy - double(y0), ax = sx - double(x0);
            feat[gy * grid + gx] =
                (1 - ay) * ((1 - ax) * soft.at(0, y0, x0) + ax * soft.at(0, y0, x1)) +
                ay * ((1 - ax) * soft.at(0, y1, x0) + ax * soft.at(0, y1, x1));
        }
    double norm = 0.0;
    for (double v : feat) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0)
        for (double& v : feat) v /= norm;
    return feat;
}

}  // namespace

TEST(GenSynthetic, BalancedDeterministicAndInRange) {
    SynthSpec spec;
    spec.seed = 42;
    Dataset a = gen_synthetic(spec, 8, {TextureFamily::stripes, TextureFamily::checker});
    Dataset b = gen_synthetic(spec, 8, {TextureFamily::stripes, TextureFamily::checker});
    ASSERT_EQ(a.size(), 32u);
    std::array<int, 4> counts{};
    for (const LabeledImage& it : a.items) {
        counts[it.label]++;
        for (double v : it.pixels.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        EXPECT_EQ(it.pixels.shape, (std::vector<std::size_t>{1, 64, 64}));
    }
    for (int c : counts) EXPECT_EQ(c, 8);
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_EQ(a.items[i].pixels.data, b.items[i].pixels.data);  // bit-identical replay

    Dataset c = gen_synthetic(SynthSpec{.seed = 43}, 8,
                              {TextureFamily::stripes, TextureFamily::checker});
    EXPECT_NE(a.items[0].pixels.data, c.items[0].pixels.data);
}

TEST(GenSynthetic, FlatFamilyGivesOutlineOnFlatField) {
    SynthSpec spec;
    spec.seed = 7;
    Dataset ds = gen_synthetic(spec, 4, {TextureFamily::flat});
    for (const LabeledImage& it : ds.items) {
        std::set<double> values(it.pixels.data.begin(), it.pixels.data.end());
        EXPECT_LE(values.size(), 3u);  // outline, background, interior
        EXPECT_TRUE(values.count(0.0)) << "outline stroke missing";
    }
}

// The benchmark must measure shape transfer: 1-NN on edge-map features,
// trained on source-family images, classifies target-family images.
TEST(GenSynthetic, ShapeIsRecoverableAcrossTextureFamilies) {
    SynthSpec spec;
    spec.seed = 99;
    Dataset train = gen_synthetic(spec, 30, {TextureFamily::stripes, TextureFamily::checker});
    SynthSpec spec2 = spec;
    spec2.seed = 100;
    Dataset test = gen_synthetic(spec2, 15, {TextureFamily::noise, TextureFamily::dots});

    std::vector<std::vector<double>> train_feats;
    for (const LabeledImage& it : train.items) train_feats.push_back(edge_features(it.pixels));

    std::size_t hits = 0;
    for (const LabeledImage& it : test.items) {
        std::vector<double> f = edge_features(it.pixels);
        double best = 1e300;
        int best_label = -1;
        for (std::size_t i = 0; i < train_feats.size(); ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < f.size(); ++j) {
                double diff = f[j] - train_feats[i][j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_label = train.items[i].label;
            }
        }
        if (best_label == it.label) ++hits;
    }
    double acc = double(hits) / double(test.size());
    EXPECT_GT(acc, 0.9) << "1-NN edge-map accuracy " << acc;
}

TEST(GenSynthetic, TextureFamilyIndependentOfLabel) {
    SynthSpec spec;
    spec.seed = 17;
    Dataset ds = gen_synthetic(spec, 200, {TextureFamily::stripes, TextureFamily::checker});
    // background family recorded in domain_tag when no explicit tag given
    std::array<std::array<int, 2>, 4> table{};
    for (const LabeledImage& it : ds.items)
        table[it.label][it.domain_tag == "stripes" ? 0 : 1]++;
    // each class draws the family from the same Bernoulli(1/2)
    for (int c = 0; c < 4; ++c) {
        double frac = double(table[c][0]) / 200.0;
        EXPECT_NEAR(frac, 0.5, 4.0 * std::sqrt(0.25 / 200.0)) << "class " << c;
    }
}

TEST(Split, FractionsStratificationAndReplay) {
    SynthSpec spec;
    spec.seed = 5;
    spec.image_side = 16;
    Dataset ds = gen_synthetic(spec, 20, {TextureFamily::flat});

    auto all = split(ds, {1.0, 0.0, 0.0}, 3);
    EXPECT_EQ(all[0].size(), ds.size());
    EXPECT_EQ(all[1].size(), 0u);
    EXPECT_EQ(all[2].size(), 0u);

    auto parts = split(ds, {0.6, 0.2, 0.2}, 3);
    std::array<std::array<int, 4>, 3> counts{};
    for (int p = 0; p < 3; ++p)
        for (const LabeledImage& it : parts[p].items) counts[p][it.label]++;
    for (int c = 0; c < 4; ++c) {
        EXPECT_NEAR(counts[0][c], 12, 1);
        EXPECT_NEAR(counts[1][c], 4, 1);
        EXPECT_NEAR(counts[2][c], 4, 1);
    }

    auto replay = split(ds, {0.6, 0.2, 0.2}, 3);
    for (int p = 0; p < 3; ++p) {
        ASSERT_EQ(parts[p].size(), replay[p].size());
        for (std::size_t i = 0; i < parts[p].size(); ++i)
            EXPECT_EQ(parts[p].items[i].pixels.data, replay[p].items[i].pixels.data);
    }

    EXPECT_THROW(split(ds, {0.5, 0.2, 0.2}, 3), std::invalid_argument);
}

TEST(Augment, PreservesShapeAndRangeDeterministically) {
    SynthSpec spec;
    spec.seed = 6;
    spec.image_side = 32;
    Dataset ds = gen_synthetic(spec, 2, {TextureFamily::checker});
    Rng rng1(11), rng2(11);
    Tensor a = augment(ds.items[0].pixels, rng1);
    Tensor b = augment(ds.items[0].pixels, rng2);
    EXPECT_EQ(a.shape, ds.items[0].pixels.shape);
    EXPECT_EQ(a.data, b.data);
    for (double v : a.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(LoadDir, LayoutLabelsAndErrors) {
    fs::path root = temp_dir("loaddir");
    fs::create_directories(root / "beta");
    fs::create_directories(root / "alpha");
    Tensor img1 = Tensor::full({1, 8, 8}, 0.25);
    Tensor img2 = Tensor::full({3, 8, 8}, 0.75);
    save_png((root / "beta" / "one.png").string(), img1);
    save_png((root / "alpha" / "two.png").string(), img2);

    Dataset ds = load_dir(root.string());
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.class_names, (std::vector<std::string>{"alpha", "beta"}));
    EXPECT_EQ(ds.items[0].label, 0);  // alpha sorts first
    EXPECT_EQ(ds.items[1].label, 1);

    // non-image file: the error names the file
    std::ofstream(root / "alpha" / "junk.png") << "not a png";
    try {
        load_dir(root.string());
        FAIL() << "expected a decode error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("junk.png"), std::string::npos);
    }
    fs::remove(root / "alpha" / "junk.png");

    fs::create_directories(root / "empty_class");
    EXPECT_THROW(load_dir(root.string()), std::runtime_error);
    fs::remove_all(root);
}

TEST(PngRoundTrip, WithinQuantization) {
    fs::path root = temp_dir("png");
    Rng rng(81);
    Tensor img({3, 10, 12});
    for (double& v : img.data) v = rng.uniform(0.0, 1.0);
    save_png((root / "x.png").string(), img);
    Tensor back = load_png((root / "x.png").string());
    ASSERT_EQ(back.shape, img.shape);
    for (std::size_t i = 0; i < img.numel(); ++i)
        EXPECT_LE(std::abs(back[i] - img[i]), 1.0 / 255.0);
    fs::remove_all(root);
}

TEST(SaveDataset, RoundTripsThroughLoadDir) {
    fs::path root = temp_dir("savedataset");
    SynthSpec spec;
    spec.seed = 12;
    spec.image_side = 16;
    Dataset ds = gen_synthetic(spec, 3, {TextureFamily::stripes});
    save_dataset(ds, root.string());
    Dataset back = load_dir(root.string());
    ASSERT_EQ(back.size(), ds.size());
    // load_dir assigns labels by sorted class-name order, which differs from
    // the generator's label order; compare per class name
    auto images_of = [](const Dataset& d, const std::string& cls) {
        std::vector<const Tensor*> out;
        for (const LabeledImage& it : d.items)
            if (d.class_names[it.label] == cls) out.push_back(&it.pixels);
        return out;
    };
    for (const std::string& cls : ds.class_names) {
        auto orig = images_of(ds, cls);
        auto loaded = images_of(back, cls);
        ASSERT_EQ(orig.size(), loaded.size()) << cls;
        for (std::size_t i = 0; i < orig.size(); ++i)
            for (std::size_t p = 0; p < orig[i]->numel(); ++p)
                EXPECT_LE(std::abs((*loaded[i])[p] - (*orig[i])[p]), 1.0 / 255.0);
    }
    fs::remove_all(root);
}

TEST(MapText, InfoMapAndDropMaskRoundTrip) {
    fs::path root = temp_dir("maps");
    Rng rng(82);
    Tensor map({5, 7});
    for (double& v : map.data) v = rng.uniform(0.0, 3.0);
    write_map_text((root / "m.txt").string(), map);
    Tensor back = read_map_text((root / "m.txt").string());
    EXPECT_EQ(back.shape, map.shape);
    for (std::size_t i = 0; i < map.numel(); ++i) EXPECT_DOUBLE_EQ(back[i], map[i]);

    std::ifstream check(root / "m.txt");
    std::string magic, ver;
    check >> magic >> ver;
    EXPECT_EQ(magic, "INFOMAP");
    EXPECT_EQ(ver, "v1");

    DropMask mask;
    mask.mask = Tensor({2, 3, 3});
    for (double& v : mask.mask.data) v = rng.coin() ? 1.0 : 0.0;
    write_mask_text((root / "d.txt").string(), mask);
    DropMask mback = read_mask_text((root / "d.txt").string());
    EXPECT_EQ(mback.mask.data, mask.mask.data);
    EXPECT_EQ(mback.mask.shape, mask.mask.shape);

    save_map_png((root / "m.png").string(), map);
    Tensor render = load_png((root / "m.png").string());
    EXPECT_EQ(render.shape, (std::vector<std::size_t>{1, 5, 7}));
    fs::remove_all(root);
}
