#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdnm/cdn_gm.hpp"
#include "cdnm/dataset.hpp"
#include "cdnm/gmm_oracle.hpp"
#include "cdnm/gradcheck.hpp"
#include "cdnm/medal_net.hpp"
#include "cdnm/metrics.hpp"
#include "cdnm/pipeline.hpp"
#include "cdnm/png_io.hpp"
#include "cdnm/report.hpp"
#include "cdnm/run_config.hpp"
#include "cdnm/synth.hpp"
#include "cdnm/weights_io.hpp"

namespace cdnm::cli {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

inline std::string frame_name(const std::string& prefix, int index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%06d.png", prefix.c_str(), index);
    return buf;
}

inline Image8 mask_to_image(const BinaryMask& m) {
    Image8 im = Image8::filled(m.h, m.w, 1, 0);
    for (std::size_t i = 0; i < m.v.size(); ++i) im.data[i] = m.v[i] ? 255 : 0;
    return im;
}

inline void echo_config_lines(const RunConfig& cfg, ReportWriter& rep) {
    for (const auto& [k, v] : echo_config(cfg)) rep.record("config", {{k, v}});
}

inline void print_lines(const ReportWriter& rep) { std::fputs(rep.text().c_str(), stdout); }

// Histories from every refresh window of the sequence, uniformly subsampled
// to at most max_histories rows (seeded, sorted gather order).
inline Tensor<float> collect_histories(const VideoSequence& seq, const CdnGmConfig& cfg, int hop,
                                       int max_histories, std::uint64_t seed) {
    seq.validate();
    const int len = static_cast<int>(seq.frames.size());
    const int T = cfg.history_len;
    std::vector<int> window_ends;
    if (len < T) {
        window_ends.push_back(len - 1);
    } else {
        for (int i = T - 1; i < len; i += hop) window_ends.push_back(i);
    }
    const std::int64_t per_window = static_cast<std::int64_t>(seq.height()) * seq.width();
    const std::int64_t total = per_window * static_cast<std::int64_t>(window_ends.size());
    std::int64_t target = max_histories > 0 ? std::min<std::int64_t>(max_histories, total) : total;

    std::vector<std::int64_t> pick(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) pick[static_cast<std::size_t>(i)] = i;
    SplitMix64 rng(seed ^ 0x9d2c5680ULL);
    shuffle(pick, rng);
    pick.resize(static_cast<std::size_t>(target));
    std::sort(pick.begin(), pick.end());

    Tensor<float> out = Tensor<float>::zeros({static_cast<int>(target), T, cfg.channels});
    const std::int64_t row = static_cast<std::int64_t>(T) * cfg.channels;
    std::size_t cursor = 0;
    for (std::size_t wi = 0; wi < window_ends.size() && cursor < pick.size(); ++wi) {
        const std::int64_t lo = static_cast<std::int64_t>(wi) * per_window;
        const std::int64_t hi = lo + per_window;
        if (pick[cursor] >= hi) continue;
        std::vector<const Image8*> window;
        const int end = window_ends[wi];
        if (len < T)
            for (int i = 0; i < T; ++i)
                window.push_back(&seq.frames[static_cast<std::size_t>(std::max(0, i - (T - len)))]);
        else
            for (int i = end - T + 1; i <= end; ++i)
                window.push_back(&seq.frames[static_cast<std::size_t>(i)]);
        Tensor<float> hist = reform_pixel_histories<float>(window);
        while (cursor < pick.size() && pick[cursor] < hi) {
            const std::int64_t local = pick[cursor] - lo;
            std::copy(hist.data.begin() + local * row, hist.data.begin() + (local + 1) * row,
                      out.data.begin() + static_cast<std::int64_t>(cursor) * row);
            cursor++;
        }
    }
    return out;
}

inline DatasetLayout layout_of(const RunConfig& cfg, const std::string& root) {
    return {dataset_kind_from_name(cfg.layout), root};
}

}  // namespace detail

struct CommonFlagValues {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> T, hop, epochs, threads;
    std::optional<double> epsilon, tau, lr;
    std::optional<std::string> out;
};

inline void apply_common_flags(RunConfig& cfg, const CommonFlagValues& f, bool is_fg_command) {
    if (f.seed) cfg.seed = *f.seed;
    if (f.T) cfg.history_len = *f.T;
    if (f.hop) cfg.hop = *f.hop;
    if (f.threads) cfg.threads = *f.threads;
    if (f.epsilon) cfg.epsilon = *f.epsilon;
    if (f.tau) cfg.tau = *f.tau;
    if (f.epochs) {
        if (is_fg_command)
            cfg.epochs_fg = *f.epochs;
        else
            cfg.epochs_bg = *f.epochs;
    }
    if (f.lr) {
        if (is_fg_command)
            cfg.lr_fg = *f.lr;
        else
            cfg.lr_bg = *f.lr;
    }
    if (f.out) cfg.out = *f.out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns a process exit code.
// ---------------------------------------------------------------------------

struct SynthFlags {
    int height = 128, width = 128, frames = 300, channels = 3;
    double occupancy = 0.3, noise_sd = 4.0, illumination = 0.0;
    std::string background = "gradient";
};

inline int cmd_synth(const RunConfig& cfg, const SynthFlags& f) {
    namespace fs = std::filesystem;
    if (cfg.out.empty()) throw UsageError("synth: --out directory is required");
    SynthSpec spec;
    spec.height = f.height;
    spec.width = f.width;
    spec.frame_count = f.frames;
    spec.channels = f.channels;
    spec.occupancy = f.occupancy;
    spec.noise_sd = f.noise_sd;
    spec.illumination_amp = f.illumination;
    spec.seed = cfg.seed;
    if (f.background == "flat")
        spec.background = SynthBackground::Flat;
    else if (f.background == "gradient")
        spec.background = SynthBackground::Gradient;
    else if (f.background == "checker")
        spec.background = SynthBackground::Checker;
    else
        throw UsageError("synth: unknown background '" + f.background + "'");

    SynthResult res = synth_generate(spec);
    const fs::path out(cfg.out);
    fs::create_directories(out / "input");
    fs::create_directories(out / "groundtruth");
    for (int i = 0; i < spec.frame_count; ++i) {
        write_png(res.sequence.frames[static_cast<std::size_t>(i)],
                  (out / "input" / detail::frame_name("in", i + 1)).string());
        write_png(detail::mask_to_image(res.masks[static_cast<std::size_t>(i)]),
                  (out / "groundtruth" / detail::frame_name("gt", i + 1)).string());
    }
    write_png(res.true_background, (out / "background.png").string());

    ReportWriter rep;
    detail::echo_config_lines(cfg, rep);
    rep.record("synth", {{"frames", std::to_string(spec.frame_count)},
                         {"height", std::to_string(spec.height)},
                         {"width", std::to_string(spec.width)},
                         {"channels", std::to_string(spec.channels)},
                         {"occupancy", fmt_metric(spec.occupancy)},
                         {"noise_sd", fmt_metric(spec.noise_sd)}});
    rep.write((out / "synth_log.txt").string());
    std::printf("synth: wrote %d frames to %s\n", spec.frame_count, cfg.out.c_str());
    return kExitOk;
}

inline int cmd_train_bg(const RunConfig& cfg, const std::vector<std::string>& data_roots) {
    if (data_roots.empty()) throw UsageError("train-bg: at least one --data root is required");
    if (cfg.out.empty() && cfg.weights_bg.empty())
        throw UsageError("train-bg: --out or weights_bg is required");
    const CdnGmConfig ccfg = cfg.cdn_config();

    std::vector<Tensor<float>> parts;
    std::int64_t rows = 0;
    for (const auto& root : data_roots) {
        VideoSequence seq = load_frames(detail::layout_of(cfg, root));
        if (seq.channels() != ccfg.channels)
            throw DataError("train-bg: '" + root + "' has " + std::to_string(seq.channels()) +
                            " channels, config says " + std::to_string(ccfg.channels));
        parts.push_back(detail::collect_histories(seq, ccfg, cfg.hop,
                                                  cfg.max_histories / static_cast<int>(data_roots.size()),
                                                  cfg.seed));
        rows += parts.back().shape[0];
    }
    Tensor<float> histories = Tensor<float>::zeros(
        {static_cast<int>(rows), ccfg.history_len, ccfg.channels});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data.begin(), p.data.end(), histories.data.begin() + off);
        off += p.numel();
    }

    NetworkGraph<float> net = build_cdn_gm<float>(ccfg, cfg.seed);
    std::printf("train-bg: %lld histories, %d epochs, %lld parameters\n", (long long)rows,
                cfg.epochs_bg, (long long)param_count(net));
    TrainReport tr = train_cdn_gm(net, histories, cfg.epochs_bg, ccfg, cfg.seed + 1, cfg.threads);
    if (tr.aborted) {
        std::fprintf(stderr, "train-bg: aborted: %s\n", tr.abort_reason.c_str());
        return kExitNumeric;
    }
    const std::string weights_path =
        !cfg.weights_bg.empty()
            ? cfg.weights_bg
            : (std::filesystem::path(cfg.out) / "cdn_gm.weights").string();
    save_weights(net, weights_path);

    ReportWriter rep;
    detail::echo_config_lines(cfg, rep);
    rep.record("train", {{"stage", "bg"},
                         {"histories", std::to_string(rows)},
                         {"epochs", std::to_string(tr.epochs_run)},
                         {"first_loss", fmt_metric(tr.epoch_losses.empty() ? 0 : tr.epoch_losses.front())},
                         {"final_loss", fmt_metric(tr.final_mean_loss)},
                         {"weights", weights_path}});
    if (!cfg.out.empty()) {
        std::filesystem::create_directories(cfg.out);
        rep.write((std::filesystem::path(cfg.out) / "train_bg_log.txt").string());
    }
    detail::print_lines(rep);
    return kExitOk;
}

inline int cmd_extract_bg(const RunConfig& cfg, const std::string& data_root) {
    namespace fs = std::filesystem;
    if (data_root.empty()) throw UsageError("extract-bg: --data is required");
    if (cfg.weights_bg.empty()) throw UsageError("extract-bg: weights_bg is required");
    if (cfg.out.empty()) throw UsageError("extract-bg: --out is required");
    const CdnGmConfig ccfg = cfg.cdn_config();

    VideoSequence seq = load_frames(detail::layout_of(cfg, data_root));
    NetworkGraph<float> net = build_cdn_gm<float>(ccfg, cfg.seed);
    load_weights_into(net, cfg.weights_bg);

    BackgroundSchedule sched =
        compute_background_schedule(seq, net, ccfg, cfg.pipeline_config());
    fs::create_directories(cfg.out);
    ReportWriter rep;
    detail::echo_config_lines(cfg, rep);
    for (const auto& w : sched.warnings) rep.record("warning", {{"message", w}});

    std::optional<Image8> gt;
    if (!cfg.gt_background.empty()) gt = read_image(cfg.gt_background);
    for (std::size_t i = 0; i < sched.backgrounds.size(); ++i) {
        const std::string name = detail::frame_name("bg", sched.refresh_frames[i]);
        write_png(sched.backgrounds[i], (fs::path(cfg.out) / name).string());
        std::vector<std::pair<std::string, std::string>> head = {
            {"refresh_frame", std::to_string(sched.refresh_frames[i])}, {"file", name}};
        if (gt) {
            BgQualityReport q = background_quality(*gt, sched.backgrounds[i], cfg.tau);
            rep.metrics_record("background", head, bg_metric_values(q));
        } else {
            rep.record("background", head);
        }
    }
    rep.write((fs::path(cfg.out) / "extract_bg_report.txt").string());
    detail::print_lines(rep);
    return kExitOk;
}

inline int cmd_train_fg(const RunConfig& cfg, const std::string& data_root) {
    if (data_root.empty()) throw UsageError("train-fg: --data is required");
    if (cfg.weights_bg.empty()) throw UsageError("train-fg: weights_bg is required");
    if (cfg.out.empty() && cfg.weights_fg.empty())
        throw UsageError("train-fg: --out or weights_fg is required");
    if (cfg.layout != "cdnet")
        throw UsageError("train-fg: needs the cdnet layout (labeled ground truth)");
    const CdnGmConfig ccfg = cfg.cdn_config();

    DatasetLayout layout = detail::layout_of(cfg, data_root);
    VideoSequence seq = load_frames(layout);
    CdnetGroundtruth gt = load_cdnet_all_groundtruth(layout);
    if (gt.labels.size() > seq.frames.size())
        throw DataError("train-fg: more ground-truth files than frames");

    NetworkGraph<float> cdn = build_cdn_gm<float>(ccfg, cfg.seed);
    load_weights_into(cdn, cfg.weights_bg);

    std::vector<std::string> warnings;
    std::vector<MedalPair<float>> pairs = sample_training_pairs(
        seq, gt.labels, cfg.labeled_pairs, cdn, ccfg, cfg.pipeline_config(), &warnings);

    MedalConfig mcfg = cfg.medal_config(seq.height(), seq.width());
    NetworkGraph<float> medal = build_medal_net<float>(mcfg, cfg.seed + 17);
    std::printf("train-fg: %zu pairs, %d epochs, %lld parameters\n", pairs.size(), mcfg.epochs,
                (long long)param_count(medal));
    TrainReport tr = train_medal(medal, pairs, mcfg, cfg.seed + 18);
    if (tr.aborted) {
        std::fprintf(stderr, "train-fg: aborted: %s\n", tr.abort_reason.c_str());
        return kExitNumeric;
    }
    const std::string weights_path =
        !cfg.weights_fg.empty()
            ? cfg.weights_fg
            : (std::filesystem::path(cfg.out) / "medal_net.weights").string();
    save_weights(medal, weights_path);

    ReportWriter rep;
    detail::echo_config_lines(cfg, rep);
    for (const auto& w : warnings) rep.record("warning", {{"message", w}});
    rep.record("train", {{"stage", "fg"},
                         {"pairs", std::to_string(pairs.size())},
                         {"epochs", std::to_string(tr.epochs_run)},
                         {"final_loss", fmt_metric(tr.final_mean_loss)},
                         {"weights", weights_path}});
    if (!cfg.out.empty()) {
        std::filesystem::create_directories(cfg.out);
        rep.write((std::filesystem::path(cfg.out) / "train_fg_log.txt").string());
    }
    detail::print_lines(rep);
    return kExitOk;
}

inline int cmd_infer(const RunConfig& cfg, const std::string& data_root) {
    namespace fs = std::filesystem;
    if (data_root.empty()) throw UsageError("infer: --data is required");
    if (cfg.weights_bg.empty() || cfg.weights_fg.empty())
        throw UsageError("infer: weights_bg and weights_fg are required");
    if (cfg.out.empty()) throw UsageError("infer: --out is required");
    const CdnGmConfig ccfg = cfg.cdn_config();

    DatasetLayout layout = detail::layout_of(cfg, data_root);
    VideoSequence seq = load_frames(layout);
    NetworkGraph<float> cdn = build_cdn_gm<float>(ccfg, cfg.seed);
    load_weights_into(cdn, cfg.weights_bg);
    MedalConfig mcfg = cfg.medal_config(seq.height(), seq.width());
    NetworkGraph<float> medal = build_medal_net<float>(mcfg, cfg.seed + 17);
    load_weights_into(medal, cfg.weights_fg);

    ProcessResult res = process_sequence(seq, cdn, medal, ccfg, cfg.pipeline_config());

    std::map<int, LabelMask> gts;
    if (layout.kind == DatasetKind::Cdnet &&
        fs::is_directory(fs::path(data_root) / "groundtruth"))
        gts = load_cdnet_all_groundtruth(layout).labels;

    fs::create_directories(fs::path(cfg.out) / "masks");
    fs::create_directories(fs::path(cfg.out) / "backgrounds");
    ReportWriter rep;
    detail::echo_config_lines(cfg, rep);
    for (const auto& w : res.schedule.warnings) rep.record("warning", {{"message", w}});
    for (std::size_t i = 0; i < res.schedule.backgrounds.size(); ++i) {
        const std::string name = detail::frame_name("bg", res.schedule.refresh_frames[i]);
        write_png(res.schedule.backgrounds[i], (fs::path(cfg.out) / "backgrounds" / name).string());
        rep.record("background",
                   {{"refresh_frame", std::to_string(res.schedule.refresh_frames[i])}, {"file", name}});
    }
    ConfusionCounts pooled;
    int evaluated = 0;
    for (std::size_t i = 0; i < res.masks.size(); ++i) {
        const std::string name = detail::frame_name("mask", static_cast<int>(i) + 1);
        write_png(detail::mask_to_image(res.masks[i]), (fs::path(cfg.out) / "masks" / name).string());
        std::vector<std::pair<std::string, std::string>> head = {
            {"index", std::to_string(i)}, {"mask", name}};
        auto it = gts.find(static_cast<int>(i));
        if (it != gts.end()) {
            ConfusionCounts cc = confusion(res.masks[i], it->second);
            if (cc.total() > 0) {
                pooled += cc;
                evaluated++;
                rep.metrics_record("frame", head, fg_metric_values(classification_metrics(cc)));
                continue;
            }
        }
        rep.record("frame", head);
    }
    if (evaluated > 0)
        rep.metrics_record("summary",
                           {{"scope", "sequence"},
                            {"name", fs::path(data_root).filename().string()},
                            {"frames", std::to_string(evaluated)}},
                           fg_metric_values(classification_metrics(pooled)));
    rep.write((fs::path(cfg.out) / "infer_report.txt").string());
    std::printf("infer: %zu masks, %zu backgrounds -> %s\n", res.masks.size(),
                res.schedule.backgrounds.size(), cfg.out.c_str());
    return kExitOk;
}

inline int cmd_eval_bg(const RunConfig& cfg, const std::string& gt_path,
                       const std::string& est_path, const std::string& roi_path) {
    namespace fs = std::filesystem;
    if (gt_path.empty() || est_path.empty())
        throw UsageError("eval-bg: --gt and --est are required");
    Image8 gt = read_image(gt_path);
    std::optional<BinaryMask> roi;
    if (!roi_path.empty()) {
        Image8 r = read_image(roi_path);
        BinaryMask m = BinaryMask::zeros(r.h, r.w);
        for (int y = 0; y < r.h; ++y)
            for (int x = 0; x < r.w; ++x) m.set(y, x, luma_at(r, y, x) >= 128 ? 1 : 0);
        roi = std::move(m);
    }
    std::vector<std::string> est_files;
    if (fs::is_directory(est_path)) {
        // periodic background snapshots: numbered but not consecutive
        for (const auto& f : cdnm::detail::resolve_frame_files(est_path, false))
            est_files.push_back(f.path);
    } else {
        est_files.push_back(est_path);
    }
    ReportWriter rep;
    std::vector<GroupedRecord> records;
    for (const auto& f : est_files) {
        Image8 est = read_image(f);
        BgQualityReport q = background_quality(gt, est, cfg.tau, roi ? &*roi : nullptr);
        rep.metrics_record("background", {{"file", fs::path(f).filename().string()}},
                           bg_metric_values(q));
        records.push_back({"all", bg_metric_values(q)});
    }
    if (records.size() > 1) {
        AggregateResult agg = aggregate(records);
        rep.metrics_record("summary", {{"scope", "sequence"}, {"files", std::to_string(records.size())}},
                           agg.overall);
    }
    if (!cfg.out.empty()) {
        fs::create_directories(cfg.out);
        rep.write((fs::path(cfg.out) / "eval_bg_report.txt").string());
    }
    detail::print_lines(rep);
    return kExitOk;
}

struct EvalFgItem {
    std::string group, pred_dir, data_root;
};

inline int cmd_eval_fg(const RunConfig& cfg, std::vector<EvalFgItem> items,
                       const std::string& batch_file) {
    namespace fs = std::filesystem;
    if (!batch_file.empty()) {
        std::ifstream in(batch_file);
        if (!in) throw DataError("eval-fg: cannot open batch file '" + batch_file + "'");
        std::string line;
        while (std::getline(in, line)) {
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            std::istringstream is(line);
            EvalFgItem item;
            if (!(is >> item.group >> item.pred_dir >> item.data_root))
                throw DataError("eval-fg: batch line needs 'group pred_dir data_root'");
            items.push_back(item);
        }
    }
    if (items.empty()) throw UsageError("eval-fg: provide --pred/--data or --batch");

    ReportWriter rep;
    std::vector<GroupedRecord> per_sequence;
    for (const auto& item : items) {
        DatasetLayout layout{DatasetKind::Cdnet, item.data_root};
        CdnetGroundtruth gt = load_cdnet_all_groundtruth(layout);
        auto pred_files = cdnm::detail::resolve_frame_files(item.pred_dir);
        ConfusionCounts pooled;
        for (const auto& [idx, labels] : gt.labels) {
            if (idx >= static_cast<int>(pred_files.size())) break;
            Image8 pm = read_image(pred_files[static_cast<std::size_t>(idx)].path);
            if (pm.c != 1) throw DataError("eval-fg: mask '" + pred_files[static_cast<std::size_t>(idx)].path +
                                           "' is not grayscale");
            BinaryMask mask = BinaryMask::zeros(pm.h, pm.w);
            for (std::size_t i = 0; i < pm.data.size(); ++i) mask.v[i] = pm.data[i] >= 128 ? 1 : 0;
            pooled += confusion(mask, labels);
        }
        if (pooled.total() == 0) {
            rep.record("warning", {{"message", "sequence '" + item.data_root +
                                                   "' has no evaluated pixels; skipped"}});
            continue;
        }
        FgQualityReport q = classification_metrics(pooled);
        rep.metrics_record("summary",
                           {{"scope", "sequence"},
                            {"group", item.group},
                            {"name", fs::path(item.data_root).filename().string()}},
                           fg_metric_values(q));
        per_sequence.push_back({item.group, fg_metric_values(q)});
    }
    if (per_sequence.empty()) throw DataError("eval-fg: nothing evaluated");
    AggregateResult agg = aggregate(per_sequence);
    for (const auto& w : agg.warnings) rep.record("warning", {{"message", w}});
    for (const auto& g : agg.group_means)
        rep.metrics_record("summary", {{"scope", "group"}, {"group", g.group}}, g.values);
    rep.metrics_record("summary", {{"scope", "overall"}}, agg.overall);
    if (!cfg.out.empty()) {
        fs::create_directories(cfg.out);
        rep.write((fs::path(cfg.out) / "eval_fg_report.txt").string());
    }
    detail::print_lines(rep);
    return kExitOk;
}

// Gate hash for the density-head loss: hard-sigmoid regions of every head
// coordinate plus density-floor hits, so finite differences never straddle a
// piecewise boundary unnoticed.
inline std::uint64_t cdn_loss_gate_hash(const Tensor<double>& heads, const CdnGmConfig& cfg,
                                        const std::vector<PixelHistory<double>>& histories) {
    GateHash gh;
    const int K = cfg.mixture_components, c = cfg.channels;
    const int head = cfg.head_size();
    for (int i = 0; i < heads.shape[0]; ++i) {
        RawHeadView<double> v(heads.ptr() + static_cast<std::int64_t>(i) * head, K, c);
        for (int j = 0; j < K * c; ++j) gh.byte(v.mu[j] <= -2.5 ? 0 : (v.mu[j] >= 2.5 ? 2 : 1));
        for (int j = 0; j < K; ++j) gh.byte(v.sigma[j] <= -2.5 ? 0 : (v.sigma[j] >= 2.5 ? 2 : 1));
        auto params = constrain(heads.ptr() + static_cast<std::int64_t>(i) * head, cfg);
        const auto& h = histories[static_cast<std::size_t>(i)];
        for (int t = 0; t < h.frames; ++t)
            gh.byte(gmm_pdf(h.sample(t), params) < kDensityFloor ? 1 : 0);
    }
    return gh.state;
}

struct GradcheckOutcome {
    GradCheckReport cdn, medal;
    bool ok(double tol) const { return cdn.passes(tol) && medal.passes(tol); }
};

// Both networks, seeded weights and inputs, 64-bit evaluation, h = 1e-4.
inline GradcheckOutcome run_gradcheck(std::uint64_t seed, int coords_per_net, double h = 1e-4) {
    GradcheckOutcome out;
    {
        CdnGmConfig cfg;
        cfg.channels = 3;
        NetworkGraph<double> net = build_cdn_gm<double>(cfg, seed);
        SplitMix64 rng(seed + 1);
        Tensor<double> input = Tensor<double>::zeros({3, cfg.history_len, cfg.channels});
        for (auto& v : input.data) v = rng.next_double();
        std::vector<PixelHistory<double>> hs(3);
        const std::int64_t per = static_cast<std::int64_t>(cfg.history_len) * cfg.channels;
        for (int i = 0; i < 3; ++i) {
            hs[static_cast<std::size_t>(i)].frames = cfg.history_len;
            hs[static_cast<std::size_t>(i)].channels = cfg.channels;
            hs[static_cast<std::size_t>(i)].values.assign(input.data.begin() + i * per,
                                                          input.data.begin() + (i + 1) * per);
        }
        OutputLossFn loss = [&](const Tensor<double>& heads) {
            LossEval ev;
            ev.d_output = Tensor<double>::zeros(heads.shape);
            const int head = cfg.head_size();
            for (int i = 0; i < heads.shape[0]; ++i) {
                auto params = constrain(heads.ptr() + static_cast<std::int64_t>(i) * head, cfg);
                ev.loss += nll_loss(params, hs[static_cast<std::size_t>(i)]);
                head_gradients(params, hs[static_cast<std::size_t>(i)], cfg,
                               ev.d_output.ptr() + static_cast<std::int64_t>(i) * head);
            }
            ev.gate_hash = cdn_loss_gate_hash(heads, cfg, hs);
            return ev;
        };
        out.cdn = check_network_gradients(net, input, loss, h, coords_per_net, seed + 2);
    }
    {
        MedalConfig cfg;
        cfg.height = 16;
        cfg.width = 16;
        cfg.channels = 3;
        NetworkGraph<double> net = build_medal_net<double>(cfg, seed + 3);
        SplitMix64 rng(seed + 4);
        Tensor<double> input = Tensor<double>::zeros({2, cfg.height, cfg.width, 2 * cfg.channels});
        for (auto& v : input.data) v = rng.next_double();
        std::vector<LabelMask> masks(2, LabelMask::filled(cfg.height, cfg.width, Label::Background));
        for (auto& m : masks)
            for (auto& v : m.v) {
                const std::uint64_t r = rng.next_u64() % 8;
                v = r < 3 ? 1 : (r == 7 ? 2 : 0);
            }
        OutputLossFn loss = [&](const Tensor<double>& prob) {
            LossEval ev;
            std::vector<const LabelMask*> ls = {&masks[0], &masks[1]};
            Tensor<double> d;
            ev.loss = bce_loss_masked_grad(prob, ls, cfg.clamp_delta, &d);
            ev.d_output = std::move(d);
            GateHash gh;
            for (double v : prob.data)
                gh.byte(v < cfg.clamp_delta ? 0 : (v > 1.0 - cfg.clamp_delta ? 2 : 1));
            ev.gate_hash = gh.state;
            return ev;
        };
        out.medal = check_network_gradients(net, input, loss, h, coords_per_net, seed + 5);
    }
    return out;
}

inline int cmd_gradcheck(const RunConfig& cfg) {
    GradcheckOutcome out = run_gradcheck(cfg.seed, 200);
    std::printf("gradcheck cdn: max_rel_err=%.3e compared=%lld excluded=%lld worst=%s\n",
                out.cdn.max_rel_err, (long long)out.cdn.compared, (long long)out.cdn.excluded,
                out.cdn.worst_coord.c_str());
    std::printf("gradcheck medal: max_rel_err=%.3e compared=%lld excluded=%lld worst=%s\n",
                out.medal.max_rel_err, (long long)out.medal.compared,
                (long long)out.medal.excluded, out.medal.worst_coord.c_str());
    const bool ok = out.ok(1e-4);
    std::printf("gradcheck: %s (tolerance 1e-4)\n", ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitNumeric;
}

struct BenchFlags {
    int height = 240, width = 320, frames = 200;
};

inline int cmd_bench(const RunConfig& cfg, const BenchFlags& f) {
    using clock = std::chrono::steady_clock;
    SynthSpec spec;
    spec.height = f.height;
    spec.width = f.width;
    spec.frame_count = f.frames;
    spec.channels = cfg.channels;
    spec.seed = cfg.seed;
    SynthResult scene = synth_generate(spec);

    CdnGmConfig ccfg = cfg.cdn_config();
    NetworkGraph<float> cdn = build_cdn_gm<float>(ccfg, cfg.seed);
    if (!cfg.weights_bg.empty()) load_weights_into(cdn, cfg.weights_bg);
    MedalConfig mcfg = cfg.medal_config(f.height, f.width);
    NetworkGraph<float> medal = build_medal_net<float>(mcfg, cfg.seed + 17);
    if (!cfg.weights_fg.empty()) load_weights_into(medal, cfg.weights_fg);

    PipelineConfig pipe = cfg.pipeline_config();

    // Stage 1: one background refresh over a full window.
    std::vector<const Image8*> window;
    for (int i = 0; i < ccfg.history_len; ++i)
        window.push_back(&scene.sequence.frames[static_cast<std::size_t>(
            i % static_cast<int>(scene.sequence.frames.size()))]);
    auto t0 = clock::now();
    Image8 bg = refresh_background(cdn, window, ccfg, pipe.threads);
    auto t1 = clock::now();
    const double refresh_sec = std::chrono::duration<double>(t1 - t0).count();

    // Stage 2: per-frame segmentation against that background.
    Tensor<float> bg_t = image_to_tensor<float>(bg);
    const int seg_frames = std::min(f.frames, 50);
    t0 = clock::now();
    for (int i = 0; i < seg_frames; ++i) {
        Tensor<float> frame = image_to_tensor<float>(scene.sequence.frames[static_cast<std::size_t>(i)]);
        Tensor<float> prob = medal_forward(medal, frame, bg_t, mcfg);
        binarize(prob, pipe.epsilon);
    }
    t1 = clock::now();
    const double seg_sec = std::chrono::duration<double>(t1 - t0).count();

    // End to end, and a single- vs multi-thread determinism probe.
    t0 = clock::now();
    ProcessResult res = process_sequence(scene.sequence, cdn, medal, ccfg, pipe);
    t1 = clock::now();
    const double e2e_sec = std::chrono::duration<double>(t1 - t0).count();

    PipelineConfig pipe1 = pipe;
    pipe1.threads = pipe.threads == 1 ? 2 : 1;
    ProcessResult res_other = process_sequence(scene.sequence, cdn, medal, ccfg, pipe1);
    bool identical = res.masks.size() == res_other.masks.size();
    for (std::size_t i = 0; identical && i < res.masks.size(); ++i)
        identical = res.masks[i].v == res_other.masks[i].v;

    ReportWriter rep;
    detail::echo_config_lines(cfg, rep);
    const std::int64_t pixels = static_cast<std::int64_t>(f.height) * f.width;
    auto fps_rec = [&](const char* stage, double frames_done, double sec) {
        char fps[32];
        std::snprintf(fps, sizeof(fps), "%.4f", sec > 0 ? frames_done / sec : 0.0);
        rep.record("bench", {{"stage", stage},
                             {"fps", fps},
                             {"frames", std::to_string(static_cast<std::int64_t>(frames_done))},
                             {"pixels", std::to_string(pixels)},
                             {"threads", std::to_string(pipe.threads)}});
    };
    // A refresh covers `hop` emitted frames, so its per-frame cost is amortized.
    fps_rec("refresh", static_cast<double>(cfg.hop), refresh_sec);
    fps_rec("segment", seg_frames, seg_sec);
    fps_rec("end_to_end", f.frames, e2e_sec);
    rep.record("bench", {{"stage", "determinism"},
                         {"threads_a", std::to_string(pipe.threads)},
                         {"threads_b", std::to_string(pipe1.threads)},
                         {"identical_masks", identical ? "1" : "0"}});
    if (!cfg.out.empty()) {
        std::filesystem::create_directories(cfg.out);
        rep.write((std::filesystem::path(cfg.out) / "bench_report.txt").string());
    }
    detail::print_lines(rep);
    return identical ? kExitOk : kExitNumeric;
}

}  // namespace cdnm::cli
