// glassdet command-line interface: synth / train / eval / predict / stats /
// gradcheck over the library. Exit codes: 0 success, 1 usage error, 2
// runtime failure.

#include "glassdet/config.hpp"
#include "glassdet/gradcheck.hpp"
#include "glassdet/metrics.hpp"
#include "glassdet/train.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace glassdet;

namespace {

std::vector<Sample> load_split(const std::string& root, const std::string& split) {
    const DatasetManifest m = load_manifest(root, split);
    const auto problems = validate_manifest(m);
    if (!problems.empty()) {
        std::string msg = "dataset validation failed:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw IoError(msg);
    }
    if (!matches_paper_split_sizes(m))
        std::cerr << "note: " << split << " split has " << m.ids.size()
                  << " ids (paper-format datasets have "
                  << (split == "train" ? kPaperTrainCount : kPaperTestCount) << ")\n";
    std::vector<Sample> out;
    out.reserve(m.ids.size());
    for (const auto& id : m.ids) out.push_back(load_sample(m.root, id));
    return out;
}

int cmd_synth(const std::string& out_dir, int count, const SynthConfig& sc) {
    fs::create_directories(out_dir);
    std::ofstream train_txt(fs::path(out_dir) / "train.txt");
    std::ofstream test_txt(fs::path(out_dir) / "test.txt");
    for (int i = 0; i < count; ++i) {
        const Sample s = synth_scene(sc, i);
        save_sample(out_dir, s);
        // every tenth sample goes to the test split (90/10)
        (i % 10 == 9 ? test_txt : train_txt) << s.id << "\n";
    }
    std::cout << "wrote " << count << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc, const std::string& resume, bool freeze_daa) {
    if (rc.dataset_root.empty()) throw ConfigError("train: dataset_root is required");
    const auto samples = load_split(rc.dataset_root, "train");
    std::mt19937_64 rng(rc.seed);
    GlassNet net(rc.network(), rng);
    if (freeze_daa) net.freeze_daa_gamma();
    Trainer trainer(net, rc.train());
    trainer.set_log_stream(&std::cout);
    if (!resume.empty()) trainer.resume(resume);
    const TrainResult res = trainer.run(samples);
    const MetricReport train_metrics = evaluate_model(net, samples);
    std::cout << "train-set " << format_report_line(train_metrics) << "\n";
    std::cout << "checkpoint " << res.checkpoint.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& root, const std::string& split,
             const std::string& report_file) {
    GlassNet net = load_network(ckpt);
    const DatasetManifest m = load_manifest(root, split);
    const auto samples = load_split(root, split);
    std::vector<MetricReport> per_image;
    const MetricReport r = evaluate_model(net, samples, &per_image);
    std::cout << format_report_line(r) << "\n";
    if (!report_file.empty()) {
        std::ofstream rf(report_file);
        if (!rf) throw IoError("cannot write report file " + report_file);
        for (size_t i = 0; i < per_image.size(); ++i)
            rf << m.ids[i] << " " << format_report_line(per_image[i]) << "\n";
    }
    return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& rgb_file,
                const std::string& depth_file, const std::string& out_dir) {
    GlassNet net = load_network(ckpt);
    Sample s;
    s.id = "query";
    s.rgb = read_png_rgb8(rgb_file);
    s.depth = read_png_gray16(depth_file);
    s.missing = missing_map(s.depth);
    s.mask = ImageU8{s.rgb.height, s.rgb.width, 1,
                     std::vector<uint8_t>(static_cast<size_t>(s.rgb.plane_size()), 0)};
    s.validate();

    const int size = net.cfg.backbone.input_size;
    const NetPlanes np = prepare_eval(s, size);
    const Batch b = make_batch({np});
    const Tensor prob = net.predict(b.rgb, b.depth, b.dm);

    fs::create_directories(out_dir);
    ImageU8 prob_img{size, size, 1, std::vector<uint8_t>(prob.data().size())};
    ImageU8 mask_img = prob_img;
    for (size_t i = 0; i < prob.data().size(); ++i) {
        prob_img.pixels[i] = static_cast<uint8_t>(std::llround(prob.data()[i] * 255.0));
        mask_img.pixels[i] = prob.data()[i] >= 0.5 ? 255 : 0;
    }
    write_png_gray8(fs::path(out_dir) / "prob.png", prob_img);
    write_png_gray8(fs::path(out_dir) / "mask.png", mask_img);
    std::cout << "wrote " << (fs::path(out_dir) / "prob.png").string() << " and mask.png\n";
    return 0;
}

void print_histogram(std::ostream& os, const std::string& name, const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(std::max<size_t>(1, values.size()));
    int bins[10] = {0};
    for (double v : values) bins[std::min(9, static_cast<int>(v * 10.0))]++;
    os << name << ": n=" << values.size() << " mean=" << mean << "\n";
    for (int b = 0; b < 10; ++b) {
        char range[32];
        std::snprintf(range, sizeof(range), "  [%.1f,%.1f%c ", b / 10.0, (b + 1) / 10.0,
                      b == 9 ? ']' : ')');
        os << range << bins[b] << "\n";
    }
}

int cmd_stats(const std::string& root, const std::string& split, const std::string& out_dir) {
    const auto samples = load_split(root, split);
    if (samples.empty()) throw ValueError("stats: empty dataset");
    std::vector<ImageU8> masks;
    std::vector<double> areas, contrasts;
    for (const Sample& s : samples) {
        masks.push_back(s.mask);
        areas.push_back(area_ratio(s.mask));
        const double a = areas.back();
        if (a > 0.0 && a < 1.0) contrasts.push_back(color_contrast_chi2(s.rgb, s.mask));
    }
    const auto heat = location_distribution(masks);

    fs::create_directories(out_dir);
    ImageU8 heat_img{kStatsGrid, kStatsGrid, 1, std::vector<uint8_t>(heat.size())};
    for (size_t i = 0; i < heat.size(); ++i)
        heat_img.pixels[i] = static_cast<uint8_t>(std::llround(heat[i] * 255.0));
    write_png_gray8(fs::path(out_dir) / "location_heatmap.png", heat_img);

    std::ofstream txt(fs::path(out_dir) / "stats.txt");
    for (std::ostream* os :
         {static_cast<std::ostream*>(&std::cout), static_cast<std::ostream*>(&txt)}) {
        print_histogram(*os, "area_ratio", areas);
        print_histogram(*os, "color_contrast_chi2", contrasts);
    }
    std::cout << "wrote " << (fs::path(out_dir) / "location_heatmap.png").string() << "\n";
    return 0;
}

int cmd_gradcheck() {
    const auto results = run_gradcheck_suite();
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-28s max_rel_err=%.3g tol=%.0e %s\n", r.name.c_str(), r.max_rel_err,
                    r.tolerance, r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
    }
    if (!ok) throw ValueError("gradient check failed");
    std::cout << "gradcheck: " << results.size() << " checks passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"glassdet: RGB-D glass surface detection"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic RGB-D glass dataset");
    std::string synth_out;
    int synth_count = 16;
    SynthConfig sc;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--count", synth_count, "number of samples");
    synth->add_option("--seed", sc.seed, "master seed");
    synth->add_option("--size", sc.size, "image size in pixels");
    synth->add_option("--p-in", sc.p_missing_in_glass, "missing-depth rate inside glass");
    synth->add_option("--p-out", sc.p_missing_outside, "missing-depth rate outside glass");
    synth->add_option("--noise", sc.noise, "rgb noise amplitude");
    synth->add_option("--visibility", sc.glass_visibility,
                      "0 = glass visually identical to background");
    synth->add_option("--depth-ramp", sc.depth_ramp,
                      "0 = depth plane carries holes only, no scene structure");
    synth->add_option("--rects-min", sc.n_rects_min, "minimum glass rectangles");
    synth->add_option("--rects-max", sc.n_rects_max, "maximum glass rectangles");

    auto* train = app.add_subcommand("train", "train a model");
    std::string train_config, resume_ckpt;
    RunConfig rc;
    bool no_augment = false, no_hflip = false, freeze_daa = false;
    train->add_option("--config", train_config, "key = value config file");
    train->add_option("--dataset", rc.dataset_root, "dataset root directory");
    train->add_option("--out", rc.out_dir, "output directory");
    train->add_option("--profile", rc.profile, "network profile: toy or paper");
    train->add_option("--seed", rc.seed, "rng seed");
    train->add_option("--epochs", rc.epochs, "training epochs");
    train->add_option("--batch-size", rc.batch_size, "batch size");
    train->add_option("--lr", rc.lr, "initial learning rate");
    train->add_option("--max-steps", rc.max_steps, "stop after this many steps (0 = full run)");
    train->add_option("--input-size", rc.input_size, "override network input size");
    train->add_option("--resume", resume_ckpt, "checkpoint to resume from");
    train->add_flag("--no-augment", no_augment, "disable crop/flip augmentation");
    train->add_flag("--no-hflip", no_hflip, "disable horizontal flipping only");
    train->add_flag("--freeze-daa", freeze_daa, "pin all DAA gammas at zero (non-learnable)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string eval_ckpt, eval_root, eval_split = "test", eval_report;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--dataset", eval_root, "dataset root")->required();
    eval->add_option("--split", eval_split, "train or test");
    eval->add_option("--report", eval_report, "optional per-image report file");

    auto* predict = app.add_subcommand("predict", "predict a glass mask for one RGB-D pair");
    std::string pred_ckpt, pred_rgb, pred_depth, pred_out = "prediction";
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
    predict->add_option("--rgb", pred_rgb, "input RGB png")->required();
    predict->add_option("--depth", pred_depth, "input 16-bit depth png")->required();
    predict->add_option("--out", pred_out, "output directory");

    auto* stats = app.add_subcommand("stats", "dataset statistics");
    std::string stats_root, stats_split = "train", stats_out = "stats";
    stats->add_option("--dataset", stats_root, "dataset root")->required();
    stats->add_option("--split", stats_split, "train or test");
    stats->add_option("--out", stats_out, "output directory");

    auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) return cmd_synth(synth_out, synth_count, sc);
        if (*train) {
            RunConfig cfg;
            if (!train_config.empty()) cfg = load_config_file(train_config);
            if (train->count("--dataset")) cfg.dataset_root = rc.dataset_root;
            if (train->count("--out")) cfg.out_dir = rc.out_dir;
            if (train->count("--profile")) cfg.profile = rc.profile;
            if (train->count("--seed")) cfg.seed = rc.seed;
            if (train->count("--epochs")) cfg.epochs = rc.epochs;
            if (train->count("--batch-size")) cfg.batch_size = rc.batch_size;
            if (train->count("--lr")) cfg.lr = rc.lr;
            if (train->count("--max-steps")) cfg.max_steps = rc.max_steps;
            if (train->count("--input-size")) cfg.input_size = rc.input_size;
            if (no_augment) cfg.augment = false;
            if (no_hflip) cfg.hflip = false;
            return cmd_train(cfg, resume_ckpt, freeze_daa);
        }
        if (*eval) return cmd_eval(eval_ckpt, eval_root, eval_split, eval_report);
        if (*predict) return cmd_predict(pred_ckpt, pred_rgb, pred_depth, pred_out);
        if (*stats) return cmd_stats(stats_root, stats_split, stats_out);
        if (*gradcheck) return cmd_gradcheck();
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
