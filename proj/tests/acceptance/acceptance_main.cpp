// Acceptance suite: one criterion per run (--criterion N) or all back to back
// (--criterion all). Prints one [PASS]/[FAIL] line per criterion; the exit
// code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <string>
#include <vector>

#include "cdnm/cdn_gm.hpp"
#include "cdnm/cli.hpp"
#include "cdnm/gmm_oracle.hpp"
#include "cdnm/gradcheck.hpp"
#include "cdnm/medal_net.hpp"
#include "cdnm/metrics.hpp"
#include "cdnm/pipeline.hpp"
#include "cdnm/synth.hpp"
#include "cdnm/weights_io.hpp"

using namespace cdnm;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// --------------------------------------------------------------------------
// 1. Gradient fidelity: analytic vs central finite differences, both nets.
// --------------------------------------------------------------------------
Outcome criterion1() {
    auto out = cli::run_gradcheck(/*seed=*/20260041, /*coords_per_net=*/150, /*h=*/1e-4);
    const bool pass = out.cdn.compared >= 100 && out.medal.compared >= 100 &&
                      out.cdn.max_rel_err <= 1e-4 && out.medal.max_rel_err <= 1e-4;
    return {pass, fmt("cdn max_rel=%.2e (%lld coords, %lld excluded), "
                      "medal max_rel=%.2e (%lld coords, %lld excluded), tol 1e-4",
                      out.cdn.max_rel_err, (long long)out.cdn.compared,
                      (long long)out.cdn.excluded, out.medal.max_rel_err,
                      (long long)out.medal.compared, (long long)out.medal.excluded)};
}

// --------------------------------------------------------------------------
// 2. Closed-form mixing gradient: d(nll o constrain)/dy_pi == pi - Pi.
// --------------------------------------------------------------------------
Outcome criterion2() {
    CdnGmConfig cfg;
    cfg.channels = 3;
    SplitMix64 rng(20260042);
    double worst = 0;
    const int draws = 1000;
    for (int trial = 0; trial < draws; ++trial) {
        std::vector<double> raw(static_cast<std::size_t>(cfg.head_size()));
        for (auto& v : raw) v = rng.next_range(-3, 3);
        PixelHistory<double> h;
        h.frames = 1;
        h.channels = 3;
        h.values = {rng.next_double(), rng.next_double(), rng.next_double()};

        auto params = constrain(raw, cfg);
        auto post = responsibilities(params, h.sample(0));
        auto analytic = head_gradients(params, h, cfg);
        const int K = cfg.mixture_components;
        const int pi_base = K * cfg.channels + K;
        for (int l = 0; l < K; ++l) {
            const double closed_form =
                params.pi[static_cast<std::size_t>(l)] - post[static_cast<std::size_t>(l)];
            // independent route: central differences of the actual loss
            const double step = 1e-6;
            const double keep = raw[static_cast<std::size_t>(pi_base + l)];
            raw[static_cast<std::size_t>(pi_base + l)] = keep + step;
            const double lp = nll_loss(constrain(raw, cfg), h);
            raw[static_cast<std::size_t>(pi_base + l)] = keep - step;
            const double lm = nll_loss(constrain(raw, cfg), h);
            raw[static_cast<std::size_t>(pi_base + l)] = keep;
            const double fd = (lp - lm) / (2 * step);
            worst = std::max(worst, std::abs(fd - closed_form));
            worst = std::max(worst,
                             std::abs(analytic[static_cast<std::size_t>(pi_base + l)] - closed_form));
        }
    }
    return {worst <= 1e-6, fmt("max |grad - (pi - Pi)| = %.3e over %d draws, tol 1e-6 absolute",
                               worst, draws)};
}

// --------------------------------------------------------------------------
// 3. EM-oracle equivalence on bimodal histories.
// --------------------------------------------------------------------------
PixelHistory<float> make_bimodal_history(SplitMix64& rng) {
    // Dominant mode in [0.10, 0.175], secondary in [0.825, 0.90], weight
    // 0.70-0.80, within-mode gray-level variance inside the [16, 32] bounds.
    const double w = rng.next_range(0.70, 0.80);
    const double c1 = rng.next_range(0.100, 0.175);
    const double c2 = rng.next_range(0.825, 0.900);
    const double sd = std::sqrt(rng.next_range(16.0, 32.0)) / 255.0;
    PixelHistory<float> h;
    h.frames = 96;
    h.channels = 1;
    for (int t = 0; t < 96; ++t) {
        const double center = rng.next_double() < w ? c1 : c2;
        h.values.push_back(static_cast<float>(std::clamp(center + sd * rng.next_normal(), 0.0, 1.0)));
    }
    return h;
}

Outcome criterion3() {
    CdnGmConfig cfg;
    cfg.channels = 1;
    SplitMix64 rng(20260043);
    std::vector<PixelHistory<float>> train, held;
    for (int i = 0; i < 200; ++i) train.push_back(make_bimodal_history(rng));
    for (int i = 0; i < 100; ++i) held.push_back(make_bimodal_history(rng));

    auto net = build_cdn_gm<float>(cfg, 20260143);
    Tensor<float> batch = pack_histories(train, cfg);
    TrainReport tr = train_cdn_gm(net, batch, 3000, cfg, 20260243);
    if (tr.aborted) return {false, "training aborted: " + tr.abort_reason};

    Tensor<float> held_batch = pack_histories(held, cfg);
    auto params = cdn_infer(net, held_batch, cfg);
    int nll_ok = 0, bg_ok = 0;
    double worst_ratio = 0, worst_bg = 0;
    for (std::size_t i = 0; i < held.size(); ++i) {
        PixelHistory<double> hd;
        hd.frames = held[i].frames;
        hd.channels = 1;
        hd.values.assign(held[i].values.begin(), held[i].values.end());

        auto fit = em_fit(hd, cfg.mixture_components, {cfg.sigma_min_gray, cfg.sigma_max_gray},
                          300, 1e-9);
        MixtureParams<double> pd;
        pd.components = params[i].components;
        pd.channels = 1;
        pd.pi.assign(params[i].pi.begin(), params[i].pi.end());
        pd.sigma.assign(params[i].sigma.begin(), params[i].sigma.end());
        pd.mu.assign(params[i].mu.begin(), params[i].mu.end());
        const double net_nll = nll_loss(pd, hd);
        if (net_nll <= 1.05 * fit.nll) nll_ok++;
        worst_ratio = std::max(worst_ratio, net_nll / fit.nll);

        auto pick = select_background(pd);
        auto oracle = oracle_background(hd, 32);
        const double dist = std::abs(pick.mu_star[0] - oracle[0]);
        if (dist <= 10.0 / 255.0) bg_ok++;
        worst_bg = std::max(worst_bg, dist);
    }
    const bool pass = nll_ok >= 80 && bg_ok >= 95;
    return {pass, fmt("net NLL <= 1.05 x EM NLL on %d/100 (need >=80, worst ratio %.4f); "
                      "background within 10/255 of histogram oracle on %d/100 (need >=95, "
                      "worst %.4f = %.1f gray); final train loss %.3f",
                      nll_ok, worst_ratio, bg_ok, worst_bg, worst_bg * 255, tr.final_mean_loss)};
}

// --------------------------------------------------------------------------
// 4. Background reconstruction on a 128x128x300 synthetic scene.
// --------------------------------------------------------------------------
Outcome criterion4() {
    SynthSpec spec;
    spec.height = 128;
    spec.width = 128;
    spec.frame_count = 300;
    spec.channels = 3;
    spec.occupancy = 0.3;
    spec.noise_sd = 4.0;
    spec.seed = 20260044;
    auto scene = synth_generate(spec);

    CdnGmConfig cfg;  // c=3, T=96, K=3
    auto net = build_cdn_gm<float>(cfg, 20260144);
    Tensor<float> histories =
        cli::detail::collect_histories(scene.sequence, cfg, /*hop=*/96, /*max=*/8192, 20260244);
    TrainReport tr = train_cdn_gm(net, histories, 150, cfg, 20260344);
    if (tr.aborted) return {false, "training aborted: " + tr.abort_reason};

    PipelineConfig pipe;
    pipe.hop = 96;
    auto sched = compute_background_schedule(scene.sequence, net, cfg, pipe);
    double age_sum = 0, peps_sum = 0, age_max = 0, peps_max = 0;
    for (const auto& bg : sched.backgrounds) {
        const double a = age(scene.true_background, bg);
        const auto pe = peps_pceps(scene.true_background, bg, 20.0);
        age_sum += a;
        peps_sum += pe.first;
        age_max = std::max(age_max, a);
        peps_max = std::max(peps_max, pe.first);
    }
    const double age_mean = age_sum / static_cast<double>(sched.backgrounds.size());
    const double peps_mean = peps_sum / static_cast<double>(sched.backgrounds.size());
    const bool pass = age_mean <= 3.0 && peps_mean <= 0.01;
    return {pass, fmt("%zu refreshes: AGE mean %.3f max %.3f (need <=3.0); "
                      "pEPs(tau=20) mean %.5f max %.5f (need <=0.01)",
                      sched.backgrounds.size(), age_mean, age_max, peps_mean, peps_max)};
}

// --------------------------------------------------------------------------
// 5. Segmentation overfit + generalization on synthetic pairs.
// --------------------------------------------------------------------------
Outcome criterion5() {
    SynthSpec spec;
    spec.height = 64;
    spec.width = 64;
    spec.frame_count = 150;
    spec.channels = 3;
    spec.occupancy = 0.25;
    spec.noise_sd = 3.0;
    spec.seed = 20260045;
    auto scene = synth_generate(spec);

    MedalConfig cfg;
    cfg.height = 64;
    cfg.width = 64;
    cfg.channels = 3;
    cfg.epochs = 1000;
    Tensor<float> bg = image_to_tensor<float>(scene.true_background);

    auto label_of = [&](const BinaryMask& m) {
        LabelMask lm = LabelMask::filled(m.h, m.w, Label::Background);
        for (std::size_t i = 0; i < m.v.size(); ++i)
            if (m.v[i]) lm.v[i] = static_cast<std::uint8_t>(Label::Foreground);
        return lm;
    };

    std::vector<MedalPair<float>> pairs;
    std::vector<int> train_frames, held_frames;
    for (int i = 0; i < 20; ++i) train_frames.push_back(i * 5);          // 20 training frames
    for (int i = 0; i < 50; ++i) held_frames.push_back(100 + i);         // 50 held-out frames
    for (int f : train_frames) {
        MedalPair<float> p;
        p.frame = image_to_tensor<float>(scene.sequence.frames[static_cast<std::size_t>(f)]);
        p.background = bg;
        p.labels = label_of(scene.masks[static_cast<std::size_t>(f)]);
        pairs.push_back(std::move(p));
    }

    auto net = build_medal_net<float>(cfg, 20260145);
    TrainReport tr = train_medal(net, pairs, cfg, 20260245);
    if (tr.aborted) return {false, "training aborted: " + tr.abort_reason};

    auto fmeasure_over = [&](const std::vector<int>& frames) {
        ConfusionCounts pooled;
        for (int f : frames) {
            Tensor<float> frame =
                image_to_tensor<float>(scene.sequence.frames[static_cast<std::size_t>(f)]);
            Tensor<float> prob = medal_forward(net, frame, bg, cfg);
            auto mask = binarize(prob, cfg.epsilon)[0];
            pooled += confusion(mask, label_of(scene.masks[static_cast<std::size_t>(f)]));
        }
        return classification_metrics(pooled).fmeasure;
    };
    const double f_train = fmeasure_over(train_frames);
    const double f_held = fmeasure_over(held_frames);
    const bool pass = f_train >= 0.95 && f_held >= 0.85;
    return {pass, fmt("training F-measure %.4f (need >=0.95), held-out F-measure %.4f "
                      "(need >=0.85), final loss %.4f",
                      f_train, f_held, tr.final_mean_loss)};
}

// --------------------------------------------------------------------------
// 6. Parameter budgets.
// --------------------------------------------------------------------------
Outcome criterion6() {
    MedalConfig mc;
    mc.height = 64;
    mc.width = 64;
    mc.channels = 3;
    auto medal = build_medal_net<float>(mc, 1);
    CdnGmConfig cc;
    auto cdn = build_cdn_gm<float>(cc, 1);
    const auto pm = param_count(medal);
    const auto pc = param_count(cdn);
    const bool pass = pm <= 3000 && pm + pc <= 8000;
    return {pass, fmt("segmentation net %lld params (need <=3000), density net %lld, "
                      "combined %lld (need <=8000)",
                      (long long)pm, (long long)pc, (long long)(pm + pc))};
}

// --------------------------------------------------------------------------
// 7. Constraint suite over random raw heads.
// --------------------------------------------------------------------------
Outcome criterion7() {
    CdnGmConfig cfg;
    SplitMix64 rng(20260047);
    int violations = 0;
    std::string first;
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<float> raw(static_cast<std::size_t>(cfg.head_size()));
        for (auto& v : raw) v = static_cast<float>(rng.next_range(-80, 80));
        auto p = constrain(raw, cfg);
        const std::string bad =
            params_invariant_violation(p, cfg.sigma_min_gray, cfg.sigma_max_gray, 1e-5);
        if (!bad.empty()) {
            violations++;
            if (first.empty()) first = bad;
        }
    }
    return {violations == 0,
            fmt("10000 random heads, %d invariant violations%s%s", violations,
                first.empty() ? "" : ", first: ", first.c_str())};
}

// --------------------------------------------------------------------------
// 8. Metric identities and the F-measure cross-check.
// --------------------------------------------------------------------------
Outcome criterion8() {
    SynthSpec spec;
    spec.height = 192;
    spec.width = 192;
    spec.channels = 3;
    spec.frame_count = 1;
    spec.background = SynthBackground::Checker;
    spec.checker_cell = 13;
    spec.noise_sd = 0;
    spec.seed = 20260048;
    Image8 im = synth_generate(spec).true_background;

    const double a = age(im, im);
    const auto pe = peps_pceps(im, im, 20.0);
    const double ps = psnr(im, im);
    const double ms = ms_ssim(im, im);
    const double f = 2 * 0.8724 * 0.9232 / (0.8724 + 0.9232);
    const bool pass = a == 0.0 && pe.first == 0.0 && pe.second == 0.0 && ps == 100.0 &&
                      std::abs(ms - 1.0) <= 1e-12 && std::abs(f - 0.8972) <= 5e-4;
    return {pass, fmt("identity AGE=%g pEPs=%g pCEPs=%g PSNR=%g MS-SSIM=%.12f; "
                      "F(0.8724, 0.9232)=%.5f vs 0.8972 (tol 5e-4)",
                      a, pe.first, pe.second, ps, ms, f)};
}

// --------------------------------------------------------------------------
// 9. Determinism and serialization.
// --------------------------------------------------------------------------
Outcome criterion9() {
    SynthSpec spec;
    spec.height = 64;
    spec.width = 64;
    spec.frame_count = 120;
    spec.channels = 3;
    spec.noise_sd = 3.0;
    spec.seed = 20260049;
    auto scene = synth_generate(spec);

    CdnGmConfig cfg;
    MedalConfig mcfg;
    mcfg.height = 64;
    mcfg.width = 64;
    mcfg.channels = 3;

    auto run_once = [&](int threads) {
        auto cdn = build_cdn_gm<float>(cfg, 20260149);
        auto medal = build_medal_net<float>(mcfg, 20260249);
        PipelineConfig pipe;
        pipe.threads = threads;
        return process_sequence(scene.sequence, cdn, medal, cfg, pipe);
    };
    auto r1 = run_once(1);
    auto r2 = run_once(1);
    auto r3 = run_once(3);
    bool masks_identical = r1.masks.size() == r2.masks.size() && r1.masks.size() == r3.masks.size();
    for (std::size_t i = 0; masks_identical && i < r1.masks.size(); ++i)
        masks_identical = r1.masks[i].v == r2.masks[i].v && r1.masks[i].v == r3.masks[i].v;

    // Weight file round trip must be bit-exact.
    auto cdn = build_cdn_gm<float>(cfg, 20260149);
    const std::string path = "/tmp/cdnm_acceptance_roundtrip.weights";
    save_weights(cdn, path);
    auto loaded = load_weights(path);
    bool bits_equal = loaded.groups.size() == cdn.weights.groups.size();
    for (std::size_t g = 0; bits_equal && g < loaded.groups.size(); ++g)
        for (std::size_t t = 0; bits_equal && t < loaded.groups[g].tensors.size(); ++t)
            bits_equal = std::memcmp(loaded.groups[g].tensors[t].data.data(),
                                     cdn.weights.groups[g].tensors[t].data.data(),
                                     loaded.groups[g].tensors[t].data.size() * sizeof(float)) == 0;
    const bool pass = masks_identical && bits_equal;
    return {pass, fmt("repeated runs bit-identical (incl. 3 threads): %s; "
                      "weight save/load bit-exact: %s",
                      masks_identical ? "yes" : "NO", bits_equal ? "yes" : "NO")};
}

// --------------------------------------------------------------------------
// 10. Throughput smoke at 320x240.
// --------------------------------------------------------------------------
Outcome criterion10() {
    SynthSpec spec;
    spec.height = 240;
    spec.width = 320;
    spec.frame_count = 200;
    spec.channels = 3;
    spec.noise_sd = 3.0;
    spec.seed = 20260050;
    auto scene = synth_generate(spec);

    CdnGmConfig cfg;
    auto cdn = build_cdn_gm<float>(cfg, 20260150);
    MedalConfig mcfg;
    mcfg.height = 240;
    mcfg.width = 320;
    mcfg.channels = 3;
    auto medal = build_medal_net<float>(mcfg, 20260250);

    PipelineConfig pipe;
    const auto t0 = std::chrono::steady_clock::now();
    auto res = process_sequence(scene.sequence, cdn, medal, cfg, pipe);
    const double sec = seconds_since(t0);
    const double fps = static_cast<double>(scene.sequence.frames.size()) / sec;
    const bool pass = fps >= 5.0 && res.masks.size() == scene.sequence.frames.size();
    return {pass, fmt("end-to-end %.2f fps over %zu frames at 320x240 (need >=5); "
                      "reference GPU-scale figures are out of scope here",
                      fps, res.masks.size())};
}

}  // namespace

int main(int argc, char** argv) {
    std::string which = "all";
    for (int i = 1; i + 1 < argc; ++i)
        if (std::strcmp(argv[i], "--criterion") == 0) which = argv[i + 1];

    struct Entry {
        int id;
        const char* name;
        Outcome (*fn)();
    };
    const Entry entries[] = {
        {1, "gradient fidelity (both networks vs central differences)", criterion1},
        {2, "closed-form mixing gradient pi - Pi", criterion2},
        {3, "EM-oracle equivalence on held-out histories", criterion3},
        {4, "background reconstruction on synthetic scene", criterion4},
        {5, "segmentation overfit and generalization", criterion5},
        {6, "parameter budgets", criterion6},
        {7, "constraint suite on random heads", criterion7},
        {8, "metric identities and F-measure cross-check", criterion8},
        {9, "determinism and serialization", criterion9},
        {10, "throughput smoke", criterion10},
    };

    int failures = 0, ran = 0;
    for (const Entry& e : entries) {
        if (which != "all" && which != std::to_string(e.id)) continue;
        ran++;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = e.fn();
        } catch (const std::exception& ex) {
            out = {false, std::string("exception: ") + ex.what()};
        }
        std::printf("[%s] criterion %d: %s: %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", e.id,
                    e.name, out.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        if (!out.pass) failures++;
    }
    if (ran == 0) {
        std::fprintf(stderr, "unknown criterion '%s' (1-10 or all)\n", which.c_str());
        return 1;
    }
    return failures;
}
