#pragma once

#include <chrono>
#include <cstdlib>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "infodrop/analysis.hpp"
#include "infodrop/checkpoint.hpp"
#include "infodrop/data.hpp"
#include "infodrop/model.hpp"

namespace infodrop {

struct TrainConfig {
    std::string preset = "small4";
    std::size_t image_side = 64;
    std::size_t channels = 1;
    std::size_t num_classes = 4;

    std::size_t epochs = 30;
    std::size_t finetune_epochs = 10;
    std::size_t batch_size = 64;
    std::vector<std::pair<std::size_t, double>> lr_schedule{{0, 0.01}, {30, 0.001}};
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool augment = true;

    std::size_t attach_blocks = 0;  // K: InfoDrop on the first K conv layers
    double r0 = 1.0;
    double temperature = 0.5;
    double bandwidth = 1.0;
    std::size_t radius = 3;
    std::size_t subsample = 0;  // 0 = use the whole neighborhood
    bool rescale = false;

    double grad_clip = 0.0;  // global L2 norm cap; 0 disables

    bool adversarial = false;
    double adv_eps = 2.0 / 255.0;
    double adv_step = 1.0 / 255.0;
    std::size_t adv_iters = 7;

    std::vector<std::string> eval_conditions{"clean"};
    std::uint64_t seed = 0;

    // data source: a directory with train/ val/ test/ (and optional target/)
    // subtrees, or the built-in synthetic benchmark
    std::string data_dir;
    bool synth = true;
    std::size_t synth_per_class = 100;
    std::size_t synth_val_per_class = 10;
    std::size_t synth_test_per_class = 50;
    std::size_t synth_target_per_class = 100;
    std::string synth_source = "stripes,checker";
    std::string synth_target = "noise,dots";

    InfoDropParams infodrop_params() const {
        InfoDropParams p;
        p.r0 = r0;
        p.temperature = temperature;
        p.bandwidth_h = bandwidth;
        p.radius_R = radius;
        if (subsample) p.subsample_n = subsample;
        p.rescale = rescale;
        p.mode = InfoDropMode::train;
        return p;
    }

    double lr_at(std::size_t epoch) const {
        double lr = lr_schedule.empty() ? 0.01 : lr_schedule.front().second;
        for (const auto& [start, value] : lr_schedule)
            if (epoch >= start) lr = value;
        return lr;
    }
};

struct EpochStats {
    std::size_t epoch = 0;
    std::string stage;  // "infodrop" or "finetune"
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = -1.0;  // -1 when no validation set
    std::vector<double> drop_fractions;  // one per InfoDrop layer, realized mean
};

struct EvalRow {
    std::string condition;
    double accuracy = 0.0;
};

struct RunReport {
    std::vector<EpochStats> epochs;
    std::vector<EvalRow> evals;
    double wall_stage1_s = 0.0;
    double wall_stage2_s = 0.0;

    // Timing lives in a separate section so the deterministic body can be
    // compared bit for bit across runs.
    std::string to_text(bool include_timing = true) const {
        std::ostringstream out;
        out.precision(17);
        out << "# run report\n";
        out << "epoch stage lr train_loss train_acc val_acc drop_fractions\n";
        for (const EpochStats& e : epochs) {
            out << e.epoch << ' ' << e.stage << ' ' << e.lr << ' ' << e.train_loss << ' '
                << e.train_acc << ' ' << e.val_acc << " [";
            for (std::size_t i = 0; i < e.drop_fractions.size(); ++i) {
                if (i) out << ' ';
                out << e.drop_fractions[i];
            }
            out << "]\n";
        }
        out << "# evaluations\n";
        for (const EvalRow& r : evals) out << r.condition << ' ' << r.accuracy << '\n';
        if (include_timing) {
            out << "# timing seconds (excluded from determinism comparisons)\n";
            out << "stage1 " << wall_stage1_s << "\nstage2 " << wall_stage2_s << '\n';
        }
        return out.str();
    }

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "condition,accuracy\n";
        for (const EvalRow& r : evals) out << r.condition << ',' << r.accuracy << '\n';
        return out.str();
    }

    double eval_accuracy(const std::string& condition) const {
        for (const EvalRow& r : evals)
            if (r.condition == condition) return r.accuracy;
        throw std::out_of_range("RunReport: no evaluation row for " + condition);
    }
};

struct DataBundle {
    Dataset train, val, test;
    std::optional<Dataset> target;  // held-out texture domain
};

inline std::vector<TextureFamily> parse_families(const std::string& csv) {
    std::vector<TextureFamily> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(texture_family_from_string(item));
    if (out.empty()) throw std::invalid_argument("no texture families in '" + csv + "'");
    return out;
}

// Build the config's data bundle: either load from disk or generate the
// synthetic shape/texture benchmark (train/val split from the source
// domain, target images from the held-out texture families).
inline DataBundle make_data_bundle(const TrainConfig& cfg) {
    DataBundle b;
    if (!cfg.data_dir.empty()) {
        namespace fs = std::filesystem;
        b.train = load_dir((fs::path(cfg.data_dir) / "train").string());
        if (fs::is_directory(fs::path(cfg.data_dir) / "val"))
            b.val = load_dir((fs::path(cfg.data_dir) / "val").string());
        if (fs::is_directory(fs::path(cfg.data_dir) / "test"))
            b.test = load_dir((fs::path(cfg.data_dir) / "test").string());
        if (fs::is_directory(fs::path(cfg.data_dir) / "target"))
            b.target = load_dir((fs::path(cfg.data_dir) / "target").string());
        return b;
    }
    SynthSpec spec;
    spec.image_side = cfg.image_side;
    spec.channels = cfg.channels;
    spec.num_classes = cfg.num_classes;

    std::vector<TextureFamily> source = parse_families(cfg.synth_source);
    std::vector<TextureFamily> target = parse_families(cfg.synth_target);

    spec.seed = derive_key(cfg.seed, 0xDA7Au, 0);
    b.train = gen_synthetic(spec, cfg.synth_per_class, source, "source");
    spec.seed = derive_key(cfg.seed, 0xDA7Au, 1);
    b.val = gen_synthetic(spec, cfg.synth_val_per_class, source, "source");
    spec.seed = derive_key(cfg.seed, 0xDA7Au, 2);
    b.test = gen_synthetic(spec, cfg.synth_test_per_class, source, "source");
    spec.seed = derive_key(cfg.seed, 0xDA7Au, 3);
    b.target = gen_synthetic(spec, cfg.synth_target_per_class, target, "target");
    return b;
}

// One evaluation condition: clean | shuffle:<m> | corrupt:<kind>:<severity> |
// pgd:<eps> | target. The pgd attack runs 10 iterations at step
// max(eps/4, 1/255) with a random start.
inline EvalRow evaluate_condition(Model& model, const Dataset& test,
                                  const std::optional<Dataset>& target,
                                  const std::string& condition, std::uint64_t seed) {
    EvalRow row{condition, 0.0};
    auto parts = [&] {
        std::vector<std::string> out;
        std::stringstream ss(condition);
        std::string item;
        while (std::getline(ss, item, ':')) out.push_back(item);
        return out;
    }();
    if (parts.empty()) throw std::invalid_argument("empty evaluation condition");

    if (parts[0] == "clean") {
        row.accuracy = accuracy(model, test);
    } else if (parts[0] == "target") {
        if (!target) throw std::invalid_argument("condition 'target': no target dataset");
        row.accuracy = accuracy(model, *target);
    } else if (parts[0] == "shuffle") {
        if (parts.size() != 2) throw std::invalid_argument("condition: shuffle:<m>");
        std::size_t m = std::stoul(parts[1]);
        row.accuracy = 1.0 - shape_bias_score(model, test, m, derive_key(seed, 0x5FFu, m));
    } else if (parts[0] == "corrupt") {
        if (parts.size() != 3)
            throw std::invalid_argument("condition: corrupt:<kind>:<severity>");
        CorruptionSpec spec{corruption_kind_from_string(parts[1]), std::stoi(parts[2])};
        Dataset corrupted;
        corrupted.class_names = test.class_names;
        for (std::size_t i = 0; i < test.items.size(); ++i) {
            LabeledImage item = test.items[i];
            item.pixels = corrupt(item.pixels, spec, derive_key(seed, 0xC02u, i));
            corrupted.items.push_back(std::move(item));
        }
        row.accuracy = accuracy(model, corrupted);
    } else if (parts[0] == "pgd") {
        if (parts.size() != 2) throw std::invalid_argument("condition: pgd:<eps>");
        double eps = std::stod(parts[1]);
        double step = std::max(eps / 4.0, 1.0 / 255.0);
        std::size_t hit = 0;
        for (std::size_t i = 0; i < test.items.size(); ++i) {
            const LabeledImage& item = test.items[i];
            Tensor adv = pgd_attack(model, item.pixels, item.label, eps, step, 10,
                                    derive_key(seed, 0xAD4u, i));
            std::vector<int> pred = predict(model, {adv});
            if (pred[0] == item.label) ++hit;
        }
        row.accuracy = test.items.empty() ? 0.0 : double(hit) / double(test.items.size());
    } else {
        throw std::invalid_argument("unknown evaluation condition: " + condition);
    }
    return row;
}

inline std::vector<EvalRow> evaluate(Model& model, const Dataset& test,
                                     const std::optional<Dataset>& target,
                                     const std::vector<std::string>& conditions,
                                     std::uint64_t seed) {
    model.set_infodrop_mode(InfoDropMode::eval);
    std::vector<EvalRow> rows;
    for (const std::string& c : conditions)
        rows.push_back(evaluate_condition(model, test, target, c, seed));
    return rows;
}

struct TrainResult {
    Model model;
    RunReport report;
};

// Two-stage procedure: stage 1 trains with InfoDrop attached to the first K
// conv layers; stage 2 detaches everything and finetunes on clean images.
// With the adversarial flag, every minibatch is replaced by its PGD
// perturbation (computed in eval mode) before the training step, both stages.
inline TrainResult train(const TrainConfig& cfg, const DataBundle& data) {
    if (data.train.items.empty()) throw std::invalid_argument("train: empty training set");
    using clock = std::chrono::steady_clock;

    TrainResult result;
    Model& model = result.model;
    model = make_preset(cfg.preset, cfg.channels, cfg.image_side, cfg.num_classes);
    model.init_params(cfg.seed);
    if (cfg.attach_blocks > 0) model.attach_first_k(cfg.attach_blocks, cfg.infodrop_params());

    OptimizerState opt(model);
    std::vector<std::size_t> infodrop_layers;
    for (std::size_t li = 0; li < model.layers.size(); ++li)
        if (model.layers[li].kind == LayerKind::infodrop) infodrop_layers.push_back(li);

    std::vector<std::size_t> order(data.train.items.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t global_step = 0;

    auto run_epoch = [&](std::size_t epoch, const std::string& stage) {
        EpochStats stats;
        stats.epoch = epoch;
        stats.stage = stage;
        stats.lr = cfg.lr_at(epoch);
        SgdParams hp{stats.lr, cfg.momentum, cfg.weight_decay};

        Rng shuffler = derive_rng(cfg.seed, 0xE90Cu, epoch);
        shuffler.shuffle(order);

        double loss_sum = 0.0, acc_sum = 0.0;
        std::size_t batches = 0;
        std::vector<double> drop_sum(infodrop_layers.size(), 0.0);
        std::size_t drop_batches = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<Tensor> batch;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                const LabeledImage& item = data.train.items[order[i]];
                if (cfg.augment) {
                    Rng arng = derive_rng(cfg.seed, 0xA3u, epoch, order[i]);
                    batch.push_back(augment(item.pixels, arng));
                } else {
                    batch.push_back(item.pixels);
                }
                labels.push_back(item.label);
            }

            if (cfg.adversarial) {
                model.set_infodrop_mode(InfoDropMode::eval);
                for (std::size_t i = 0; i < batch.size(); ++i)
                    batch[i] = pgd_attack(model, batch[i], labels[i], cfg.adv_eps,
                                          cfg.adv_step, cfg.adv_iters,
                                          derive_key(cfg.seed, 0xADFu, global_step, i));
                model.set_infodrop_mode(InfoDropMode::train);
            }

            ForwardCache cache;
            Tensor logits =
                model.forward(batch, true, derive_key(cfg.seed, 0x57E2u, global_step), &cache);
            SoftmaxXentResult head = softmax_xent_forward(logits, labels);
            if (!std::isfinite(head.loss))
                throw std::runtime_error("train: non-finite loss at step " +
                                         std::to_string(global_step) + " (epoch " +
                                         std::to_string(epoch) + ")");
            ModelGrads grads = model.backward(softmax_xent_backward(head, labels), cache);
            if (const char* dbg = std::getenv("INFODROP_DEBUG_GRADNORM"); dbg && *dbg == '1') {
                double norm2 = 0.0;
                for (const auto& slots : grads.param)
                    for (const Tensor& g : slots)
                        for (double v : g.data) norm2 += v * v;
                std::cerr << "gradnorm step " << global_step << " " << std::sqrt(norm2)
                          << "\n";
            }
            if (cfg.grad_clip > 0.0) {
                double norm2 = 0.0;
                for (const auto& slots : grads.param)
                    for (const Tensor& g : slots)
                        for (double v : g.data) norm2 += v * v;
                double norm = std::sqrt(norm2);
                if (norm > cfg.grad_clip) {
                    double scale = cfg.grad_clip / norm;
                    for (auto& slots : grads.param)
                        for (Tensor& g : slots)
                            for (double& v : g.data) v *= scale;
                }
            }
            sgd_step_model(model, grads, opt, hp);

            loss_sum += head.loss;
            std::size_t hit = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                std::size_t best = 0;
                for (std::size_t j = 1; j < logits.dim(1); ++j)
                    if (logits.at(i, j) > logits.at(i, best)) best = j;
                if (int(best) == labels[i]) ++hit;
            }
            acc_sum += double(hit) / double(labels.size());
            ++batches;

            bool any_mask = false;
            for (std::size_t k = 0; k < infodrop_layers.size(); ++k) {
                const auto& masks = cache.masks[infodrop_layers[k]];
                if (masks.empty()) continue;
                double f = 0.0;
                for (const DropMask& m : masks) f += m.dropped_fraction();
                drop_sum[k] += f / double(masks.size());
                any_mask = true;
            }
            if (any_mask) ++drop_batches;
            ++global_step;
        }

        stats.train_loss = batches ? loss_sum / double(batches) : 0.0;
        stats.train_acc = batches ? acc_sum / double(batches) : 0.0;
        for (double f : drop_sum)
            stats.drop_fractions.push_back(drop_batches ? f / double(drop_batches) : 0.0);
        if (!data.val.items.empty()) {
            model.set_infodrop_mode(InfoDropMode::eval);
            stats.val_acc = accuracy(model, data.val);
            model.set_infodrop_mode(InfoDropMode::train);
        }
        result.report.epochs.push_back(std::move(stats));
    };

    auto t0 = clock::now();
    for (std::size_t e = 0; e < cfg.epochs; ++e) run_epoch(e, "infodrop");
    auto t1 = clock::now();
    if (cfg.finetune_epochs > 0) {
        model.detach_all();
        for (std::size_t e = 0; e < cfg.finetune_epochs; ++e)
            run_epoch(cfg.epochs + e, "finetune");
    }
    auto t2 = clock::now();

    result.report.wall_stage1_s = std::chrono::duration<double>(t1 - t0).count();
    result.report.wall_stage2_s = std::chrono::duration<double>(t2 - t1).count();

    if (!data.test.items.empty() && !cfg.eval_conditions.empty())
        result.report.evals =
            evaluate(model, data.test, data.target, cfg.eval_conditions, cfg.seed);
    return result;
}

struct SweepRow {
    double temperature = 0.0;
    double shuffle_error = 0.0;   // shape-bias score at m=3 on the test set
    double target_accuracy = 0.0;
};

// One full train per temperature, shared seed; rows ordered by T.
inline std::vector<SweepRow> sweep_temperature(const TrainConfig& base,
                                               std::vector<double> t_list,
                                               const DataBundle& data,
                                               std::size_t jobs = 1) {
    if (t_list.empty()) throw std::invalid_argument("sweep_temperature: empty T list");
    std::sort(t_list.begin(), t_list.end());
    std::vector<SweepRow> rows(t_list.size());

    auto run_one = [&](std::size_t i) {
        TrainConfig cfg = base;
        cfg.temperature = t_list[i];
        if (cfg.attach_blocks == 0) cfg.attach_blocks = 1;
        TrainResult r = train(cfg, data);
        SweepRow row;
        row.temperature = t_list[i];
        row.shuffle_error =
            shape_bias_score(r.model, data.test, 3, derive_key(cfg.seed, 0x5B5Eu));
        row.target_accuracy =
            data.target ? accuracy(r.model, *data.target) : 0.0;
        rows[i] = row;
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < t_list.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex mu;
        for (std::size_t w = 0; w < std::min(jobs, t_list.size()); ++w)
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= t_list.size()) return;
                        i = next++;
                    }
                    run_one(i);
                }
            });
        for (auto& t : pool) t.join();
    }
    return rows;
}

// ---- flat key = value config files ----

inline std::vector<std::pair<std::size_t, double>> parse_lr_schedule(const std::string& s) {
    std::vector<std::pair<std::size_t, double>> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("lr_schedule entries are <epoch>:<lr>");
        out.emplace_back(std::stoul(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
    }
    if (out.empty()) throw std::invalid_argument("empty lr_schedule");
    return out;
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "' expects on/off, got '" + v + "'");
}

inline void apply_config_entry(TrainConfig& cfg, const std::string& key,
                               const std::string& value) {
    if (key == "preset") cfg.preset = value;
    else if (key == "image_side") cfg.image_side = std::stoul(value);
    else if (key == "channels") cfg.channels = std::stoul(value);
    else if (key == "num_classes") cfg.num_classes = std::stoul(value);
    else if (key == "epochs") cfg.epochs = std::stoul(value);
    else if (key == "finetune_epochs") cfg.finetune_epochs = std::stoul(value);
    else if (key == "batch_size") cfg.batch_size = std::stoul(value);
    else if (key == "lr_schedule") cfg.lr_schedule = parse_lr_schedule(value);
    else if (key == "momentum") cfg.momentum = std::stod(value);
    else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
    else if (key == "augment") cfg.augment = parse_bool(value, key);
    else if (key == "grad_clip") cfg.grad_clip = std::stod(value);
    else if (key == "blocks") cfg.attach_blocks = std::stoul(value);
    else if (key == "r0") cfg.r0 = std::stod(value);
    else if (key == "T") cfg.temperature = std::stod(value);
    else if (key == "h") cfg.bandwidth = std::stod(value);
    else if (key == "R") cfg.radius = std::stoul(value);
    else if (key == "subsample") cfg.subsample = std::stoul(value);
    else if (key == "rescale") cfg.rescale = parse_bool(value, key);
    else if (key == "adversarial") cfg.adversarial = parse_bool(value, key);
    else if (key == "adv_eps") cfg.adv_eps = std::stod(value);
    else if (key == "adv_step") cfg.adv_step = std::stod(value);
    else if (key == "adv_iters") cfg.adv_iters = std::stoul(value);
    else if (key == "eval_conditions") cfg.eval_conditions = split_csv(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "data_dir") { cfg.data_dir = value; cfg.synth = false; }
    else if (key == "synth") cfg.synth = parse_bool(value, key);
    else if (key == "synth_per_class") cfg.synth_per_class = std::stoul(value);
    else if (key == "synth_val_per_class") cfg.synth_val_per_class = std::stoul(value);
    else if (key == "synth_test_per_class") cfg.synth_test_per_class = std::stoul(value);
    else if (key == "synth_target_per_class") cfg.synth_target_per_class = std::stoul(value);
    else if (key == "synth_source") cfg.synth_source = value;
    else if (key == "synth_target") cfg.synth_target = value;
    else throw std::invalid_argument("unknown config key: " + key);
}

inline TrainConfig parse_config(std::istream& in) {
    TrainConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

inline TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    return parse_config(in);
}

}  // namespace infodrop
