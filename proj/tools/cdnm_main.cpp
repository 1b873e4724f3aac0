// cdnm: two-stage video background modeling and foreground segmentation.
//
// Subcommands: synth, train-bg, extract-bg, train-fg, infer, eval-bg,
// eval-fg, gradcheck, bench. Exit codes: 0 success, 1 usage error, 2 data
// error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "cdnm/cli.hpp"

namespace {

using cdnm::RunConfig;
using cdnm::cli::CommonFlagValues;

struct CommonBindings {
    std::string config;
    std::uint64_t seed = 0;
    int T = 0, hop = 0, epochs = 0, threads = 0;
    double epsilon = 0, tau = 0, lr = 0;
    std::string out;
    CLI::App* sub = nullptr;

    void attach(CLI::App* s) {
        sub = s;
        s->add_option("--config", config, "key=value configuration file");
        s->add_option("--seed", seed, "PRNG seed");
        s->add_option("--T", T, "temporal window length");
        s->add_option("--hop", hop, "frames between background refreshes");
        s->add_option("--epsilon", epsilon, "binarization threshold");
        s->add_option("--tau", tau, "gray-level error threshold for pEPs/pCEPs");
        s->add_option("--epochs", epochs, "training epochs");
        s->add_option("--lr", lr, "learning rate");
        s->add_option("--threads", threads, "worker thread count");
        s->add_option("--out", out, "output directory");
    }

    // Config file first, then explicit flags on top.
    RunConfig resolve(bool is_fg_command) const {
        RunConfig cfg;
        if (!config.empty()) cdnm::load_config_file(cfg, config);
        CommonFlagValues f;
        f.config = config;
        if (sub->count("--seed")) f.seed = seed;
        if (sub->count("--T")) f.T = T;
        if (sub->count("--hop")) f.hop = hop;
        if (sub->count("--epochs")) f.epochs = epochs;
        if (sub->count("--threads")) f.threads = threads;
        if (sub->count("--epsilon")) f.epsilon = epsilon;
        if (sub->count("--tau")) f.tau = tau;
        if (sub->count("--lr")) f.lr = lr;
        if (sub->count("--out")) f.out = out;
        apply_common_flags(cfg, f, is_fg_command);
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cdnm: GMM density-network background modeling + autoencoder segmentation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a deterministic synthetic dataset");
    CommonBindings synth_common;
    synth_common.attach(synth);
    cdnm::cli::SynthFlags synth_flags;
    synth->add_option("--height", synth_flags.height, "frame height");
    synth->add_option("--width", synth_flags.width, "frame width");
    synth->add_option("--frames", synth_flags.frames, "frame count");
    synth->add_option("--channels", synth_flags.channels, "1 or 3");
    synth->add_option("--occupancy", synth_flags.occupancy, "per-pixel foreground occupancy");
    synth->add_option("--noise-sd", synth_flags.noise_sd, "additive noise sd in gray levels");
    synth->add_option("--illumination", synth_flags.illumination,
                      "total illumination ramp in gray levels");
    synth->add_option("--background", synth_flags.background, "flat|gradient|checker");

    // train-bg
    auto* train_bg = app.add_subcommand("train-bg", "train the density network on a sequence");
    CommonBindings train_bg_common;
    train_bg_common.attach(train_bg);
    std::vector<std::string> train_bg_data;
    std::string train_bg_layout, train_bg_weights;
    train_bg->add_option("--data", train_bg_data, "dataset root (repeatable)");
    train_bg->add_option("--layout", train_bg_layout, "flat|cdnet|sbmnet");
    train_bg->add_option("--weights-bg", train_bg_weights, "output weights path");

    // extract-bg
    auto* extract_bg = app.add_subcommand("extract-bg", "write periodic background estimates");
    CommonBindings extract_bg_common;
    extract_bg_common.attach(extract_bg);
    std::string extract_data, extract_layout, extract_weights, extract_gt;
    extract_bg->add_option("--data", extract_data, "dataset root");
    extract_bg->add_option("--layout", extract_layout, "flat|cdnet|sbmnet");
    extract_bg->add_option("--weights-bg", extract_weights, "trained density-network weights");
    extract_bg->add_option("--gt-background", extract_gt, "reference background for metrics");

    // train-fg
    auto* train_fg = app.add_subcommand("train-fg", "train the segmentation autoencoder");
    CommonBindings train_fg_common;
    train_fg_common.attach(train_fg);
    std::string train_fg_data, train_fg_weights_bg, train_fg_weights_fg;
    int train_fg_pairs = 0;
    train_fg->add_option("--data", train_fg_data, "cdnet-layout dataset root");
    train_fg->add_option("--weights-bg", train_fg_weights_bg, "trained density-network weights");
    train_fg->add_option("--weights-fg", train_fg_weights_fg, "output weights path");
    train_fg->add_option("--pairs", train_fg_pairs, "labeled training pairs to sample");

    // infer
    auto* infer = app.add_subcommand("infer", "segment a sequence end to end");
    CommonBindings infer_common;
    infer_common.attach(infer);
    std::string infer_data, infer_layout, infer_weights_bg, infer_weights_fg;
    infer->add_option("--data", infer_data, "dataset root");
    infer->add_option("--layout", infer_layout, "flat|cdnet|sbmnet");
    infer->add_option("--weights-bg", infer_weights_bg, "trained density-network weights");
    infer->add_option("--weights-fg", infer_weights_fg, "trained autoencoder weights");

    // eval-bg
    auto* eval_bg = app.add_subcommand("eval-bg", "background quality metrics");
    CommonBindings eval_bg_common;
    eval_bg_common.attach(eval_bg);
    std::string eval_bg_gt, eval_bg_est, eval_bg_roi;
    eval_bg->add_option("--gt", eval_bg_gt, "reference background image");
    eval_bg->add_option("--est", eval_bg_est, "estimated background image or directory");
    eval_bg->add_option("--roi", eval_bg_roi, "spatial ROI mask image");

    // eval-fg
    auto* eval_fg = app.add_subcommand("eval-fg", "classification metrics for mask streams");
    CommonBindings eval_fg_common;
    eval_fg_common.attach(eval_fg);
    std::string eval_fg_pred, eval_fg_data, eval_fg_group = "default", eval_fg_batch;
    eval_fg->add_option("--pred", eval_fg_pred, "directory of predicted masks");
    eval_fg->add_option("--data", eval_fg_data, "cdnet-layout dataset root");
    eval_fg->add_option("--group", eval_fg_group, "category label for aggregation");
    eval_fg->add_option("--batch", eval_fg_batch, "file of 'group pred_dir data_root' lines");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    CommonBindings gradcheck_common;
    gradcheck_common.attach(gradcheck);

    // bench
    auto* bench = app.add_subcommand("bench", "throughput measurement on a synthetic scene");
    CommonBindings bench_common;
    bench_common.attach(bench);
    cdnm::cli::BenchFlags bench_flags;
    bench->add_option("--height", bench_flags.height, "frame height");
    bench->add_option("--width", bench_flags.width, "frame width");
    bench->add_option("--frames", bench_flags.frames, "frame count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? cdnm::cli::kExitOk : cdnm::cli::kExitUsage;
    }

    try {
        if (app.got_subcommand(synth)) {
            return cdnm::cli::cmd_synth(synth_common.resolve(false), synth_flags);
        }
        if (app.got_subcommand(train_bg)) {
            RunConfig cfg = train_bg_common.resolve(false);
            if (!train_bg_layout.empty()) cfg.layout = train_bg_layout;
            if (!train_bg_weights.empty()) cfg.weights_bg = train_bg_weights;
            return cdnm::cli::cmd_train_bg(cfg, train_bg_data);
        }
        if (app.got_subcommand(extract_bg)) {
            RunConfig cfg = extract_bg_common.resolve(false);
            if (!extract_layout.empty()) cfg.layout = extract_layout;
            if (!extract_weights.empty()) cfg.weights_bg = extract_weights;
            if (!extract_gt.empty()) cfg.gt_background = extract_gt;
            return cdnm::cli::cmd_extract_bg(cfg, extract_data);
        }
        if (app.got_subcommand(train_fg)) {
            RunConfig cfg = train_fg_common.resolve(true);
            cfg.layout = "cdnet";
            if (!train_fg_weights_bg.empty()) cfg.weights_bg = train_fg_weights_bg;
            if (!train_fg_weights_fg.empty()) cfg.weights_fg = train_fg_weights_fg;
            if (train_fg->count("--pairs")) cfg.labeled_pairs = train_fg_pairs;
            return cdnm::cli::cmd_train_fg(cfg, train_fg_data);
        }
        if (app.got_subcommand(infer)) {
            RunConfig cfg = infer_common.resolve(true);
            if (!infer_layout.empty()) cfg.layout = infer_layout;
            if (!infer_weights_bg.empty()) cfg.weights_bg = infer_weights_bg;
            if (!infer_weights_fg.empty()) cfg.weights_fg = infer_weights_fg;
            return cdnm::cli::cmd_infer(cfg, infer_data);
        }
        if (app.got_subcommand(eval_bg)) {
            return cdnm::cli::cmd_eval_bg(eval_bg_common.resolve(false), eval_bg_gt, eval_bg_est,
                                          eval_bg_roi);
        }
        if (app.got_subcommand(eval_fg)) {
            std::vector<cdnm::cli::EvalFgItem> items;
            if (!eval_fg_pred.empty() && !eval_fg_data.empty())
                items.push_back({eval_fg_group, eval_fg_pred, eval_fg_data});
            return cdnm::cli::cmd_eval_fg(eval_fg_common.resolve(false), items, eval_fg_batch);
        }
        if (app.got_subcommand(gradcheck)) {
            return cdnm::cli::cmd_gradcheck(gradcheck_common.resolve(false));
        }
        if (app.got_subcommand(bench)) {
            return cdnm::cli::cmd_bench(bench_common.resolve(false), bench_flags);
        }
    } catch (const cdnm::FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cdnm::cli::kExitData;
    } catch (const cdnm::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cdnm::cli::kExitData;
    } catch (const cdnm::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cdnm::cli::kExitNumeric;
    } catch (const cdnm::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cdnm::cli::kExitUsage;
    } catch (const cdnm::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cdnm::cli::kExitNumeric;
    }
    return cdnm::cli::kExitUsage;
}
