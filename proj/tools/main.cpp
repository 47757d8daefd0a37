// infodrop command-line tool: information maps, frequency maps, patch
// shuffling, corruptions, saliency, PGD attacks, synthetic data generation,
// training, evaluation and the temperature sweep. All outputs are offline
// artifacts; every subcommand that uses randomness takes --seed.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "infodrop/analysis.hpp"
#include "infodrop/checkpoint.hpp"
#include "infodrop/data.hpp"
#include "infodrop/image_io.hpp"
#include "infodrop/self_information.hpp"
#include "infodrop/train.hpp"

namespace fs = std::filesystem;
using namespace infodrop;

namespace {

// Declared outputs are removed when a command fails partway.
struct OutputGuard {
    std::vector<std::string> paths;
    bool armed = true;

    void declare(const std::string& p) { paths.push_back(p); }
    void dismiss() { armed = false; }
    ~OutputGuard() {
        if (!armed) return;
        for (const std::string& p : paths) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }
};

std::string sibling_with_extension(const std::string& path, const char* ext) {
    fs::path p(path);
    p.replace_extension(ext);
    return p.string();
}

void write_map_outputs(OutputGuard& guard, const std::string& out, const Tensor& map,
                       const std::string& magic) {
    const std::string text_path = sibling_with_extension(out, ".txt");
    guard.declare(out);
    guard.declare(text_path);
    save_map_png(out, map);
    write_map_text(text_path, map, magic);
}

int cmd_infomap(const std::string& input, const std::string& out, double h, std::size_t R,
                std::size_t k, std::size_t stride, std::size_t pad, std::size_t subsample,
                std::uint64_t seed) {
    OutputGuard guard;
    Tensor img = load_png(input);
    InfoDropParams params;
    params.bandwidth_h = h;
    params.radius_R = R;
    params.patch_k = k;
    params.stride = stride;
    params.padding = pad;
    if (subsample) params.subsample_n = subsample;
    InfoMap map = estimate_info(img, params, seed);
    write_map_outputs(guard, out, map.values, "INFOMAP");
    guard.dismiss();
    std::cout << "infomap " << map.h() << "x" << map.w() << " -> " << out << "\n";
    return 0;
}

int cmd_freqmap(const std::string& input, const std::string& out, std::size_t patch,
                std::size_t stride) {
    OutputGuard guard;
    Tensor img = load_png(input);
    Tensor map = frequency_map(img, patch, stride);
    write_map_outputs(guard, out, map, "FREQMAP");
    guard.dismiss();
    std::cout << "freqmap " << map.dim(0) << "x" << map.dim(1) << " -> " << out << "\n";
    return 0;
}

int cmd_shuffle(const std::string& input, const std::string& out, std::size_t m,
                std::uint64_t seed) {
    OutputGuard guard;
    guard.declare(out);
    Tensor img = load_png(input);
    Rng rng(seed);
    save_png(out, patch_shuffle(img, m, rng));
    guard.dismiss();
    std::cout << "shuffle m=" << m << " -> " << out << "\n";
    return 0;
}

int cmd_corrupt(const std::string& input, const std::string& out, const std::string& kind,
                int severity, std::uint64_t seed) {
    OutputGuard guard;
    guard.declare(out);
    Tensor img = load_png(input);
    CorruptionSpec spec{corruption_kind_from_string(kind), severity};
    save_png(out, corrupt(img, spec, seed));
    guard.dismiss();
    std::cout << "corrupt " << kind << " severity=" << severity << " -> " << out << "\n";
    return 0;
}

int cmd_saliency(const std::string& ckpt, const std::string& input, const std::string& out,
                 std::size_t n, double sigma, std::uint64_t seed) {
    OutputGuard guard;
    Model model = load_checkpoint(ckpt);
    model.set_infodrop_mode(InfoDropMode::eval);
    Tensor img = load_png(input);
    SmoothGradResult r = smoothgrad(model, img, n, sigma, seed);
    write_map_outputs(guard, out, r.saliency, "SALMAP");
    guard.dismiss();
    std::cout << "saliency class=" << r.predicted_class << " -> " << out << "\n";
    return 0;
}

int cmd_attack(const std::string& ckpt, const std::string& input, const std::string& out,
               int label, double eps, double step, std::size_t iters, std::uint64_t seed) {
    OutputGuard guard;
    guard.declare(out);
    Model model = load_checkpoint(ckpt);
    model.set_infodrop_mode(InfoDropMode::eval);
    Tensor img = load_png(input);
    Tensor adv = pgd_attack(model, img, label, eps, step, iters, seed);
    save_png(out, adv);
    guard.dismiss();
    std::cout << "attack eps=" << eps << " iters=" << iters << " -> " << out << "\n";
    return 0;
}

int cmd_gen_data(const std::string& out_dir, std::size_t n_per_class, std::size_t side,
                 std::size_t classes, const std::string& families, std::uint64_t seed) {
    SynthSpec spec;
    spec.image_side = side;
    spec.num_classes = classes;
    spec.seed = seed;
    Dataset ds = gen_synthetic(spec, n_per_class, parse_families(families));
    fs::create_directories(out_dir);
    save_dataset(ds, out_dir);

    std::ofstream manifest(fs::path(out_dir) / "spec.txt");
    manifest << "image_side = " << spec.image_side << "\n"
             << "num_classes = " << spec.num_classes << "\n"
             << "channels = " << spec.channels << "\n"
             << "stroke = " << spec.stroke << "\n"
             << "position_jitter = " << spec.position_jitter << "\n"
             << "scale = " << spec.scale_lo << ".." << spec.scale_hi << "\n"
             << "rotation_max_deg = " << spec.rotation_max_deg << "\n"
             << "families = " << families << "\n"
             << "n_per_class = " << n_per_class << "\n"
             << "seed = " << seed << "\n";
    std::cout << "gen-data " << ds.size() << " images -> " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
    TrainConfig cfg = parse_config_file(config_path);
    if (seed_override) cfg.seed = *seed_override;
    DataBundle data = make_data_bundle(cfg);

    TrainResult r = train(cfg, data);

    fs::create_directories(out_dir);
    OutputGuard guard;
    const std::string ckpt = (fs::path(out_dir) / "final.ckpt").string();
    const std::string report_txt = (fs::path(out_dir) / "report.txt").string();
    const std::string report_csv = (fs::path(out_dir) / "report.csv").string();
    guard.declare(ckpt);
    guard.declare(report_txt);
    guard.declare(report_csv);
    save_checkpoint(r.model, ckpt);
    std::ofstream(report_txt) << r.report.to_text(true);
    std::ofstream(report_csv) << r.report.to_csv();
    guard.dismiss();

    std::cout << r.report.to_text(true);
    std::cout << "checkpoint -> " << ckpt << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::vector<std::string>& conditions, const std::string& mode,
             std::uint64_t seed, const std::string& csv_out) {
    Model model = load_checkpoint(ckpt);
    if (mode == "train")
        model.set_infodrop_mode(InfoDropMode::train);
    else if (mode == "eval")
        model.set_infodrop_mode(InfoDropMode::eval);
    else if (mode == "removed")
        model.detach_all();
    else
        throw std::invalid_argument("--mode must be train, eval or removed");

    Dataset test = load_dir(data_dir);
    RunReport report;
    for (const std::string& c : conditions)
        report.evals.push_back(evaluate_condition(model, test, std::nullopt, c, seed));
    for (const EvalRow& row : report.evals) {
        std::cout.precision(17);
        std::cout << row.condition << " " << row.accuracy << "\n";
    }
    if (!csv_out.empty()) {
        OutputGuard guard;
        guard.declare(csv_out);
        std::ofstream(csv_out) << report.to_csv();
        guard.dismiss();
    }
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& t_csv,
              const std::string& out_csv, std::size_t jobs,
              std::optional<std::uint64_t> seed_override) {
    TrainConfig cfg = parse_config_file(config_path);
    if (seed_override) cfg.seed = *seed_override;
    std::vector<double> t_list;
    for (const std::string& t : split_csv(t_csv)) t_list.push_back(std::stod(t));
    DataBundle data = make_data_bundle(cfg);
    std::vector<SweepRow> rows = sweep_temperature(cfg, t_list, data, jobs);

    OutputGuard guard;
    guard.declare(out_csv);
    std::ofstream out(out_csv);
    out.precision(17);
    out << "T,shuffle_error,target_accuracy\n";
    for (const SweepRow& row : rows)
        out << row.temperature << ',' << row.shuffle_error << ',' << row.target_accuracy
            << '\n';
    out.close();
    guard.dismiss();

    for (const SweepRow& row : rows)
        std::cout << "T=" << row.temperature << " shuffle_error=" << row.shuffle_error
                  << " target_accuracy=" << row.target_accuracy << "\n";
    std::cout << "sweep -> " << out_csv << "\n";
    return 0;
}

int cmd_inspect(const std::string& ckpt) {
    Model model = load_checkpoint(ckpt);
    std::cout << describe_checkpoint(model);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"InfoDrop: information-gated dropout for shape-biased CNNs"};
    app.require_subcommand(1);
    // --h is a real flag (KDE bandwidth), so help is --help only
    app.set_help_flag("--help", "print help");

    auto* infomap = app.add_subcommand("infomap", "self-information map of an image");
    infomap->set_help_flag("--help", "print help");
    std::string in_path, out_path;
    double bandwidth = 1.0;
    std::size_t radius = 3, patch_k = 3, stride = 1, padding = 0, subsample = 0;
    std::uint64_t seed = 0;
    infomap->add_option("--input", in_path, "input PNG")->required();
    infomap->add_option("--out", out_path, "output PNG (text map written alongside)")
        ->required();
    infomap->add_option("--h", bandwidth, "Gaussian KDE bandwidth")->capture_default_str();
    infomap->add_option("--R", radius, "neighborhood radius")->capture_default_str();
    infomap->add_option("--k", patch_k, "patch side")->capture_default_str();
    infomap->add_option("--stride", stride, "patch stride")->capture_default_str();
    infomap->add_option("--pad", padding, "zero padding")->capture_default_str();
    infomap->add_option("--subsample", subsample, "neighbors sampled for the KDE (0 = all)")
        ->capture_default_str();
    infomap->add_option("--seed", seed, "rng seed")->capture_default_str();

    auto* freqmap = app.add_subcommand("freqmap", "average-frequency map via 8x8 DCT");
    std::string f_in, f_out;
    std::size_t f_patch = 8, f_stride = 1;
    freqmap->add_option("--input", f_in, "input PNG")->required();
    freqmap->add_option("--out", f_out, "output PNG (text map written alongside)")->required();
    freqmap->add_option("--patch", f_patch, "DCT window side")->capture_default_str();
    freqmap->add_option("--stride", f_stride, "window stride")->capture_default_str();

    auto* shuffle = app.add_subcommand("shuffle", "random m x m patch shuffling");
    std::string s_in, s_out;
    std::size_t s_m = 2;
    std::uint64_t s_seed = 0;
    shuffle->add_option("--input", s_in, "input PNG")->required();
    shuffle->add_option("--out", s_out, "output PNG")->required();
    shuffle->add_option("--m", s_m, "tiles per side")->capture_default_str();
    shuffle->add_option("--seed", s_seed, "rng seed")->capture_default_str();

    auto* corrupt_cmd = app.add_subcommand("corrupt", "apply an analytic corruption");
    std::string c_in, c_out, c_kind = "gaussian_noise";
    int c_severity = 1;
    std::uint64_t c_seed = 0;
    corrupt_cmd->add_option("--input", c_in, "input PNG")->required();
    corrupt_cmd->add_option("--out", c_out, "output PNG")->required();
    corrupt_cmd
        ->add_option("--kind", c_kind,
                     "gaussian_noise|shot_noise|impulse_noise|gaussian_blur|brightness|contrast")
        ->check(CLI::IsMember({"gaussian_noise", "shot_noise", "impulse_noise", "gaussian_blur",
                               "brightness", "contrast"}))
        ->capture_default_str();
    corrupt_cmd->add_option("--severity", c_severity, "severity 1..5")
        ->check(CLI::Range(1, 5))
        ->capture_default_str();
    corrupt_cmd->add_option("--seed", c_seed, "rng seed")->capture_default_str();

    auto* saliency = app.add_subcommand("saliency", "SmoothGrad saliency map");
    std::string sal_ckpt, sal_in, sal_out;
    std::size_t sal_n = 16;
    double sal_sigma = 0.15;
    std::uint64_t sal_seed = 0;
    saliency->add_option("--ckpt", sal_ckpt, "model checkpoint")->required();
    saliency->add_option("--input", sal_in, "input PNG")->required();
    saliency->add_option("--out", sal_out, "output PNG (text map written alongside)")
        ->required();
    saliency->add_option("--n", sal_n, "noisy copies")->capture_default_str();
    saliency->add_option("--sigma", sal_sigma, "noise std as a fraction of the value range")
        ->capture_default_str();
    saliency->add_option("--seed", sal_seed, "rng seed")->capture_default_str();

    auto* attack = app.add_subcommand("attack", "PGD l-inf attack on one image");
    std::string a_ckpt, a_in, a_out;
    int a_label = 0;
    double a_eps = 2.0 / 255.0, a_step = 1.0 / 255.0;
    std::size_t a_iters = 7;
    std::uint64_t a_seed = 0;
    attack->add_option("--ckpt", a_ckpt, "model checkpoint")->required();
    attack->add_option("--input", a_in, "input PNG")->required();
    attack->add_option("--out", a_out, "adversarial PNG")->required();
    attack->add_option("--label", a_label, "true label index")->required();
    attack->add_option("--eps", a_eps, "l-inf budget")->capture_default_str();
    attack->add_option("--step", a_step, "step size")->capture_default_str();
    attack->add_option("--pgd-iters", a_iters, "iterations")->capture_default_str();
    attack->add_option("--seed", a_seed, "rng seed")->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic shape benchmark");
    std::string g_out, g_families = "stripes,checker";
    std::size_t g_n = 100, g_side = 64, g_classes = 4;
    std::uint64_t g_seed = 0;
    gen->add_option("--out-dir", g_out, "output directory (class subdirs + spec.txt)")
        ->required();
    gen->add_option("--n-per-class", g_n, "images per class")->capture_default_str();
    gen->add_option("--side", g_side, "image side")->capture_default_str();
    gen->add_option("--classes", g_classes, "number of shape classes")->capture_default_str();
    gen->add_option("--families", g_families, "texture families, comma separated")
        ->capture_default_str();
    gen->add_option("--seed", g_seed, "rng seed")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "two-stage InfoDrop training");
    std::string t_config, t_out;
    std::uint64_t t_seed = 0;
    bool t_seed_set = false;
    train_cmd->add_option("--config", t_config, "key = value config file")->required();
    train_cmd->add_option("--out-dir", t_out, "output directory")->required();
    train_cmd->add_option("--seed", t_seed, "override the config seed")
        ->each([&t_seed_set](const std::string&) { t_seed_set = true; });

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string e_ckpt, e_data, e_mode = "eval", e_csv;
    std::vector<std::string> e_conditions{"clean"};
    std::uint64_t e_seed = 0;
    eval_cmd->add_option("--ckpt", e_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--data", e_data, "dataset directory (class subdirs)")->required();
    eval_cmd
        ->add_option("--condition", e_conditions,
                     "clean | shuffle:<m> | corrupt:<kind>:<sev> | pgd:<eps>")
        ->capture_default_str();
    eval_cmd->add_option("--mode", e_mode, "InfoDrop mode at eval: train|eval|removed")
        ->check(CLI::IsMember({"train", "eval", "removed"}))
        ->capture_default_str();
    eval_cmd->add_option("--seed", e_seed, "rng seed")->capture_default_str();
    eval_cmd->add_option("--csv", e_csv, "also write rows as CSV");

    auto* sweep = app.add_subcommand("sweep", "temperature sweep: train per T, report rows");
    std::string w_config, w_T = "0.01,0.1,0.5,1.0,1e9", w_out = "sweep.csv";
    std::size_t w_jobs = 1;
    std::uint64_t w_seed = 0;
    bool w_seed_set = false;
    sweep->add_option("--config", w_config, "key = value config file")->required();
    sweep->add_option("--T-list", w_T, "temperatures, comma separated")->capture_default_str();
    sweep->add_option("--out", w_out, "output CSV")->capture_default_str();
    sweep->add_option("--jobs", w_jobs, "parallel workers")->capture_default_str();
    sweep->add_option("--seed", w_seed, "override the config seed")
        ->each([&w_seed_set](const std::string&) { w_seed_set = true; });

    auto* inspect = app.add_subcommand("inspect-ckpt", "print a checkpoint's manifest");
    std::string i_ckpt;
    inspect->add_option("--ckpt", i_ckpt, "model checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors exit 2
    }

    try {
        if (app.got_subcommand(infomap))
            return cmd_infomap(in_path, out_path, bandwidth, radius, patch_k, stride, padding,
                               subsample, seed);
        if (app.got_subcommand(freqmap)) return cmd_freqmap(f_in, f_out, f_patch, f_stride);
        if (app.got_subcommand(shuffle)) return cmd_shuffle(s_in, s_out, s_m, s_seed);
        if (app.got_subcommand(corrupt_cmd))
            return cmd_corrupt(c_in, c_out, c_kind, c_severity, c_seed);
        if (app.got_subcommand(saliency))
            return cmd_saliency(sal_ckpt, sal_in, sal_out, sal_n, sal_sigma, sal_seed);
        if (app.got_subcommand(attack))
            return cmd_attack(a_ckpt, a_in, a_out, a_label, a_eps, a_step, a_iters, a_seed);
        if (app.got_subcommand(gen))
            return cmd_gen_data(g_out, g_n, g_side, g_classes, g_families, g_seed);
        if (app.got_subcommand(train_cmd))
            return cmd_train(t_config, t_out,
                             t_seed_set ? std::optional<std::uint64_t>(t_seed) : std::nullopt);
        if (app.got_subcommand(eval_cmd))
            return cmd_eval(e_ckpt, e_data, e_conditions, e_mode, e_seed, e_csv);
        if (app.got_subcommand(sweep))
            return cmd_sweep(w_config, w_T, w_out, w_jobs,
                             w_seed_set ? std::optional<std::uint64_t>(w_seed) : std::nullopt);
        if (app.got_subcommand(inspect)) return cmd_inspect(i_ckpt);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
