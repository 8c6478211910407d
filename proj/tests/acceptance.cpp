// Acceptance run: one PASS/FAIL line per criterion.
#include "model_fixtures.hpp"
#include "musedance/image_io.hpp"
#include "musedance/metrics.hpp"
#include "musedance/training.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace musedance;
using namespace musedance::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Line {
    int id;
    std::string name;
    Outcome outcome;
    double seconds;
};

std::vector<Line> g_lines;

void report(int id, const std::string& name, Outcome o, double secs) {
    std::printf("criterion %d [%s]: %s  %s  (%.1f s)\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                secs);
    std::fflush(stdout);
    g_lines.push_back({id, name, std::move(o), secs});
}

template <typename F>
void run_criterion(int id, const std::string& name, F&& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, std::move(o), seconds_since(t0));
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

// ------------------------------------------------------------------ 1

class GaussianDenoiser : public Denoiser<double> {
  public:
    GaussianDenoiser(const NoiseSchedule& s, double mu, double sigma) : sched_(s), mu_(mu), sigma_(sigma) {}
    Var<double> predict_noise(const Var<double>& z, const LatentShape&, int t,
                              const ConditionBundle<double>&) const override {
        const double ab = sched_.alpha_bars[t];
        const double var = ab * sigma_ * sigma_ + 1.0 - ab;
        return ad::constant<double>(std::sqrt(1.0 - ab) * (z->value.array() - std::sqrt(ab) * mu_) / var);
    }

  private:
    NoiseSchedule sched_;
    double mu_, sigma_;
};

class FixedDenoiser : public Denoiser<double> {
  public:
    explicit FixedDenoiser(Matrix<double> e) : eps_(std::move(e)) {}
    Var<double> predict_noise(const Var<double>&, const LatentShape&, int, const ConditionBundle<double>&) const override {
        return ad::constant(eps_);
    }

  private:
    Matrix<double> eps_;
};

Outcome diffusion_math() {
    const auto t0 = Clock::now();
    const NoiseSchedule s = default_schedule();
    std::ostringstream os;
    bool ok = true;

    // forward marginal: mean sqrt(ab) z0, variance 1 - ab
    double worst_mean = 0, worst_var = 0;
    for (int t : {0, 25, 50, 99}) {
        const LatentShape shape{0, 1, 1, 3};
        LatentTensor<double> z0 = LatentTensor<double>::zeros(shape);
        z0.data << 1.2, -0.4, 2.5;
        std::mt19937_64 rng(500 + t);
        const int n = 10000;
        Eigen::Array3d sum = Eigen::Array3d::Zero(), sq = Eigen::Array3d::Zero();
        for (int i = 0; i < n; ++i) {
            const auto zt = forward_diffuse(z0, t, standard_normal<double>(shape, rng), s);
            sum += zt.data.row(0).transpose().array();
            sq += zt.data.row(0).transpose().array().square();
        }
        const Eigen::Array3d mean = sum / n, var = sq / n - mean.square();
        const Eigen::Array3d want_mean = std::sqrt(s.alpha_bars[t]) * z0.data.row(0).transpose().array();
        const double want_var = 1 - s.alpha_bars[t];
        // relative to the scale of z_t: 5% of the marginal standard deviation plus mean magnitude
        const double scale_m = (want_mean.abs() + std::sqrt(want_var)).maxCoeff();
        worst_mean = std::max(worst_mean, ((mean - want_mean).abs() / scale_m).maxCoeff());
        worst_var = std::max(worst_var, ((var - want_var).abs() / want_var).maxCoeff());
    }
    ok &= worst_mean < 0.05 && worst_var < 0.05;
    os << "marginal mean err " << fmt("%.4f", worst_mean) << " var err " << fmt("%.4f", worst_var);

    // one DDIM step from the true epsilon recovers z0
    std::mt19937_64 rng(7);
    const LatentShape shape{0, 4, 4, 3};
    double worst_inv = 0;
    for (int t : {1, 50, 99}) {
        const auto z0 = standard_normal<double>(shape, rng);
        const auto eps = standard_normal<double>(shape, rng);
        const auto zt = forward_diffuse(z0, t, eps, s);
        FixedDenoiser d(eps.data);
        const auto out = ddim_run<double>(d, {}, s, zt, {t}, 1.0);
        worst_inv = std::max(worst_inv, (out.data - z0.data).cwiseAbs().maxCoeff());
    }
    ok &= worst_inv < 1e-5;
    os << "; inversion " << fmt("%.2e", worst_inv);

    // analytic denoiser for N(mu, sigma^2) data
    const double mu = 1.5, sigma = 0.6;
    GaussianDenoiser g(s, mu, sigma);
    const auto out = ddim_sample<double>(g, {}, s, {0, 100, 100, 1}, {s.T, 1.0, 2024});
    const double m = out.data.mean();
    const double v = (out.data.array() - m).square().mean();
    const double em = std::abs(m - mu) / mu, ev = std::abs(v - sigma * sigma) / (sigma * sigma);
    ok &= em < 0.05 && ev < 0.05;
    os << "; gaussian mean err " << fmt("%.4f", em) << " var err " << fmt("%.4f", ev);
    const double secs = seconds_since(t0);
    ok &= secs < 60;
    return {ok, os.str()};
}

// ------------------------------------------------------------------ 2

Image pattern_mask(int h, int w, int offset) {
    Image m(h, w, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.at(y, x, 0) = ((x + offset) / 3 + y / 5) % 2 ? 1.0f : 0.0f;
    }
    return m;
}

Outcome gradients() {
    const auto t0 = Clock::now();
    std::ostringstream os;
    bool ok = true;
    double worst = 0;
    int checked = 0;
    const LatentShape frame{0, 4, 4, 48};
    for (bool temporal : {false, true}) {
        MuseDanceModel<double> m({}, temporal ? 31 : 30, temporal);
        perturb_all(m.store(), 40 + temporal);
        std::mt19937_64 rng(50 + temporal);
        const LatentShape shape = temporal ? LatentShape{3, 4, 4, 48} : frame;
        const auto z = standard_normal<double>(shape, rng);
        const auto ref = standard_normal<double>(frame, rng);
        const auto ctx = standard_normal<double>({2, 4, 4, 48}, rng);
        const Matrix<double> weights = standard_normal<double>(shape, rng).data;
        const auto wave = synth_audio(120, 0.5);
        std::vector<Image> masks;
        for (int k = 0; k < shape.frame_count(); ++k) masks.push_back(pattern_mask(16, 16, k + 1));
        auto loss = [&] {
            ConditionBundle<double> c;
            c.reference = m.reference_features(ref, m.encode_mask({pattern_mask(16, 16, 0)}, frame));
            c.text = m.embed_text(split_tokens("the figure bounces up and down in rhythm"));
            if (temporal) {
                c.music = m.encode_music(wave, 0.25);
                c.beat = m.embed_beats({1, 0, 1});
                c.motion = m.motion_context(ctx, c);
            }
            c.input_residual = m.encode_mask(masks, shape);
            return ad::weighted_sum(m.predict_noise(ad::constant<double>(z.data), shape, 57, c), weights);
        };
        std::uint64_t seed = 100;
        for (ParamGroup g : kAllGroups) {
            if (!m.store().has_group(g)) continue;
            const auto r = directional_check(m.store(), g, loss, seed++);
            ++checked;
            worst = std::max(worst, r.rel_error());
            if (!(r.rel_error() < 1e-4) || std::abs(r.analytic) < 1e-10) {
                ok = false;
                os << (temporal ? "stage2 " : "stage1 ") << group_name(g) << " rel " << r.rel_error() << "; ";
            }
        }
    }
    const double secs = seconds_since(t0);
    ok &= secs < 300;
    os << checked << " group checks, worst rel err " << fmt("%.2e", worst);
    return {ok, os.str()};
}

// ------------------------------------------------------------------ 3

Outcome init_identity() {
    MuseDanceModel<float> s1({}, 60, false);
    perturb_all(s1.store(), 61, 0.02);
    MuseDanceModel<float> s2({}, 62, true);
    s2.store().copy_values_from(s1.store());
    double worst = 0;
    const LatentShape clip{4, 16, 16, 48};
    for (int seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(700 + seed);
        const auto z = standard_normal<float>(clip, rng);
        const auto ref = standard_normal<float>({0, 16, 16, 48}, rng);
        const auto ctx = standard_normal<float>({2, 16, 16, 48}, rng);
        const std::vector<std::string> caption = split_tokens("a figure spins in place with the music");
        ConditionBundle<float> c1;
        c1.reference = s1.reference_features(ref, nullptr);
        c1.text = s1.embed_text(caption);
        ConditionBundle<float> c2;
        c2.reference = s2.reference_features(ref, nullptr);
        c2.text = s2.embed_text(caption);
        c2.music = s2.encode_music(synth_audio(90 + 10 * seed, 1.0, MotionType::spin, seed), 4.0 / 12.0);
        BeatVector beats(4, 0);
        beats[seed % 4] = 1;
        c2.beat = s2.embed_beats(beats);
        if (seed % 2 == 1) c2.motion = s2.motion_context(ctx, c2);
        const int t = (seed * 37) % 100;
        const auto e2 = s2.predict_noise(ad::constant<float>(z.data), clip, t, c2)->value;
        for (int k = 0; k < 4; ++k) {
            const auto f = z.frame(k);
            const auto e1 = s1.predict_noise(ad::constant<float>(f.data), f.shape, t, c1)->value;
            worst = std::max(worst, static_cast<double>((e1 - e2.middleRows(k * 256, 256)).cwiseAbs().maxCoeff()));
        }
    }
    return {worst < 1e-6, "max |eps2 - eps1| over 10 inputs = " + fmt("%.3e", worst)};
}

// ------------------------------------------------------------------ 5

Outcome beat_pipeline() {
    const auto t0 = Clock::now();
    std::ostringstream os;
    bool ok = true;
    for (double seconds : {4.0, 2.0, 8.0}) {
        for (double bpm : {60.0, 90.0, 120.0, 150.0}) {
            const int K = static_cast<int>(std::lround(seconds * 12));
            const BeatVector got = extract_beats(synth_audio(bpm, seconds), 12.0, K);
            const BeatVector want = beat_grid(bpm, 12.0, K);
            if (got != want) {
                ok = false;
                os << "mismatch at " << bpm << " BPM, " << K << " frames; ";
            }
        }
    }
    const double secs = seconds_since(t0);
    ok &= secs < 10;
    os << "BPM {60,90,120,150} x {24,48,96} frames at 12 fps";
    return {ok, os.str()};
}

// ------------------------------------------------------------------ 6

Image random_image(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Image img(h, w, 3);
    for (auto& v : img.pixels) v = u(rng);
    return img;
}

Outcome metric_oracles() {
    std::ostringstream os;
    bool ok = true;
    std::mt19937_64 rng(3);

    double ssim_err = 0;
    for (int trial = 0; trial < 5; ++trial) {
        const Image a = random_image(16, 16, rng);
        Image b = a;
        std::normal_distribution<float> n(0.0f, 0.2f + 0.2f * trial);
        for (auto& v : b.pixels) v += n(rng);
        ssim_err = std::max(ssim_err, std::abs(ssim(a, b) - ssim_direct(a, b)));
    }
    ok &= ssim_err < 1e-6;
    os << "ssim vs direct " << fmt("%.2e", ssim_err);

    Image g1(8, 8, 3), g2(8, 8, 3);
    for (std::size_t i = 0; i < g1.pixels.size(); ++i) {
        const int level = static_cast<int>(i % 250);
        g1.pixels[i] = static_cast<float>(level / 127.5 - 1.0);
        g2.pixels[i] = static_cast<float>((level + 1) / 127.5 - 1.0);
    }
    const double p = psnr(g1, g2);
    ok &= std::abs(p - 48.1308) < 1e-3;
    os << "; psnr at MSE 1 = " << fmt("%.4f", p);

    std::normal_distribution<double> n01;
    const int n = 100000;
    Eigen::MatrixXd a(n, 1), b(n, 1);
    for (int i = 0; i < n; ++i) {
        a(i, 0) = n01(rng);
        b(i, 0) = 1.0 + n01(rng);
    }
    const double fd = frechet_distance(a, b);
    ok &= std::abs(fd - 1.0) < 0.05;
    os << "; frechet 1-D = " << fmt("%.4f", fd);

    Eigen::MatrixXd x(300, 3), y(200, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = 0.7 * n01(rng);
    x.col(2) += 0.5 * x.col(0);
    y.col(1) -= 0.3 * y.col(2);
    auto moments = [](const Eigen::MatrixXd& m, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        mu = m.colwise().mean().transpose();
        const Eigen::MatrixXd c = m.rowwise() - mu.transpose();
        cov = c.transpose() * c / (m.rows() - 1.0) + 1e-6 * Eigen::MatrixXd::Identity(m.cols(), m.cols());
    };
    Eigen::VectorXd mx, my;
    Eigen::MatrixXd cx, cy;
    moments(x, mx, cx);
    moments(y, my, cy);
    const double oracle = (mx - my).squaredNorm() + cx.trace() + cy.trace() - 2.0 * sqrt_newton_schulz(cx * cy).trace();
    const double sq_err = std::abs(frechet_distance(x, y) - oracle);
    ok &= sq_err < 1e-6;
    os << "; matrix sqrt vs Newton-Schulz " << fmt("%.2e", sq_err);
    return {ok, os.str()};
}

// ------------------------------------------------------------------ 4, 7, 8

struct Settings {
    fs::path work = fs::temp_directory_path() / "musedance_acceptance";
    int stage1_steps = 6000;
    int stage2_steps = 2000;
    int freeze_check_step = 1000;
    int batch1 = 2;
    double lr1 = 3e-4;  // 1e-3 diverges intermittently with the output skip
    double lr2 = 1e-3;
    int sample_steps = 25;
    double guidance = 3.5;
    int seeds = 20;
    int chunk_seeds = 10;
    int recon_pairs = 12;
    bool reuse = false;
};

struct TrainedRun {
    bool ok = false;
    std::string error;
    std::vector<VideoClip> clips;
    std::unique_ptr<MuseDanceModel<float>> stage1, stage2;
    std::vector<double> loss1, loss2;
    std::map<ParamGroup, std::uint64_t> before, at_check;
    bool freeze_checked = false;
    double train_seconds = 0;
};

double window_mean(const std::vector<double>& v, std::size_t from, std::size_t count) {
    count = std::min(count, v.size() - from);
    return std::accumulate(v.begin() + from, v.begin() + from + count, 0.0) / count;
}

std::map<ParamGroup, std::uint64_t> group_hashes(const ParamStore<float>& store) {
    std::map<ParamGroup, std::uint64_t> out;
    for (ParamGroup g : kAllGroups) {
        if (store.has_group(g)) out[g] = store.group_hash(g);
    }
    return out;
}

TrainedRun train_models(const Settings& st) {
    TrainedRun run;
    const auto t0 = Clock::now();
    fs::create_directories(st.work);
    const fs::path data = st.work / "data";
    if (!(st.reuse && fs::exists(data / "manifest.json"))) build_dataset(4, 2024, data);
    run.clips = load_dataset(data);

    const fs::path ck1 = st.work / "stage1.ckpt", ck2 = st.work / "stage2.ckpt";
    run.stage1 = std::make_unique<MuseDanceModel<float>>(ModelConfig{}, 1);
    if (st.reuse && fs::exists(ck1)) {
        run.stage1->load(ck1);
    } else {
        TrainConfig cfg;
        cfg.stage = 1;
        cfg.steps = st.stage1_steps;
        cfg.batch_size = st.batch1;
        cfg.lr = st.lr1;
        cfg.seed = 11;
        auto log = [&](const StepLog& s) {
            if ((s.step + 1) % 250 == 0) std::printf("  stage1 %s\n", format_step(s).c_str()), std::fflush(stdout);
        };
        run.loss1 = train_stage1(*run.stage1, run.clips, cfg, log).losses;
        run.stage1->save(ck1);
    }

    run.stage2 = std::make_unique<MuseDanceModel<float>>(ModelConfig{}, 2, true);
    run.stage2->load(ck1);
    if (st.reuse && fs::exists(ck2)) {
        run.stage2->load(ck2);
    } else {
        TrainConfig cfg;
        cfg.stage = 2;
        cfg.steps = st.stage2_steps;
        cfg.lr = st.lr2;
        cfg.K = 16;
        cfg.seed = 12;
        run.before = group_hashes(run.stage2->store());
        auto log = [&](const StepLog& s) {
            if (s.step + 1 == st.freeze_check_step) {
                run.at_check = group_hashes(run.stage2->store());
                run.freeze_checked = true;
            }
            if ((s.step + 1) % 250 == 0) std::printf("  stage2 %s\n", format_step(s).c_str()), std::fflush(stdout);
        };
        run.loss2 = train_stage2(*run.stage2, run.clips, cfg, log).losses;
        run.stage2->save(ck2);
    }
    run.train_seconds = seconds_since(t0);
    run.ok = true;
    return run;
}

Outcome freeze_contract(const TrainedRun& run, const Settings& st) {
    if (!run.ok) return {false, "training failed: " + run.error};
    if (!run.freeze_checked) return {false, "no hashes recorded at step " + std::to_string(st.freeze_check_step)};
    std::ostringstream os;
    bool ok = true;
    int frozen = 0, trained_changed = 0, trained = 0;
    for (const auto& [g, h] : run.before) {
        if (trained_in_stage2(g)) {
            ++trained;
            trained_changed += run.at_check.at(g) != h;
        } else {
            ++frozen;
            if (run.at_check.at(g) != h) {
                ok = false;
                os << group_name(g) << " changed; ";
            }
        }
    }
    // trained groups must actually move, otherwise the check is vacuous
    ok &= trained_changed == trained;
    os << frozen << " frozen groups unchanged after " << st.freeze_check_step << " steps, " << trained_changed << "/"
       << trained << " trained groups changed";
    return {ok, os.str()};
}

std::vector<double> energy_diffs(const std::vector<Image>& frames) {
    std::vector<double> d;
    for (std::size_t k = 1; k < frames.size(); ++k) {
        double s = 0;
        for (std::size_t i = 0; i < frames[k].pixels.size(); ++i) s += std::abs(frames[k].pixels[i] - frames[k - 1].pixels[i]);
        d.push_back(s / frames[k].pixels.size());
    }
    return d;
}

double shuffled_baseline(const std::vector<Image>& frames, const BeatVector& beats, std::mt19937_64& rng) {
    double total = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        BeatVector b = beats;
        std::shuffle(b.begin(), b.end(), rng);
        total += beat_alignment_score(frames, b);
    }
    return total / n;
}

Outcome end_to_end(const TrainedRun& run, const Settings& st) {
    if (!run.ok) return {false, "training failed: " + run.error};
    std::ostringstream os;
    bool ok = true;
    if (!run.loss1.empty()) {
        const double a = window_mean(run.loss1, 0, 50), b = window_mean(run.loss1, run.loss1.size() - 50, 50);
        os << "stage1 loss " << fmt("%.4f", a) << " -> " << fmt("%.4f", b) << " (" << fmt("%.0f", 100 * (1 - b / a)) << "% drop); ";
    }
    if (!run.loss2.empty()) {
        const double a = window_mean(run.loss2, 0, 50), b = window_mean(run.loss2, run.loss2.size() - 50, 50);
        os << "stage2 loss " << fmt("%.4f", a) << " -> " << fmt("%.4f", b) << " (" << fmt("%.0f", 100 * (1 - b / a)) << "% drop); ";
    }
    os << "training " << fmt("%.0f", run.train_seconds) << " s; ";

    // (a) stage-1 reconstruction of training target frames
    std::mt19937_64 rng(77);
    double mp = 0, ms = 0;
    for (int p = 0; p < st.recon_pairs; ++p) {
        const auto& clip = run.clips[p % run.clips.size()];
        const auto [i, j] = sample_frame_pair(static_cast<int>(clip.frames.size()), 12, rng);
        const Image out = reconstruct_frame(*run.stage1, clip.frames[i - 1], clip.masks[i - 1], clip.masks[j - 1],
                                            clip.caption, st.sample_steps, 1.0, 900 + p);
        mp += psnr(out, clip.frames[j - 1]) / st.recon_pairs;
        ms += ssim(out, clip.frames[j - 1]) / st.recon_pairs;
        if (p == 0) write_png(st.work / "recon_0.png", out);
    }
    const bool a_ok = mp > 25.0 && ms > 0.80;
    os << "(a) PSNR " << fmt("%.2f", mp) << " dB SSIM " << fmt("%.3f", ms) << (a_ok ? " ok" : " below target") << "; ";

    // (b) generated clips vs shuffled beats, (c) beat module ablation
    MuseDanceModel<float> ablated(ModelConfig{}, 2, true);
    ablated.store().copy_values_from(run.stage2->store());
    ablated.disable_beat_module();
    double gap = 0, with_beat = 0, without_beat = 0;
    std::mt19937_64 shuffle_rng(123);
    for (int s = 0; s < st.seeds; ++s) {
        const auto& clip = run.clips[s % run.clips.size()];
        const int r = (s * 7) % static_cast<int>(clip.frames.size());
        GenerateOptions opt;
        opt.K = 16;
        opt.steps = st.sample_steps;
        opt.guidance = st.guidance;
        opt.seed = 1000 + s;
        const auto g = generate_video(*run.stage2, clip.frames[r], clip.masks[r], clip.waveform, clip.caption, 16, opt);
        const double score = beat_alignment_score(g.frames, g.beats);
        gap += (score - shuffled_baseline(g.frames, g.beats, shuffle_rng)) / st.seeds;
        with_beat += score / st.seeds;
        const auto h = generate_video(ablated, clip.frames[r], clip.masks[r], clip.waveform, clip.caption, 16, opt);
        without_beat += beat_alignment_score(h.frames, h.beats) / st.seeds;
        if (s == 0) {
            write_gif(st.work / "generated_0.gif", g.frames, 12.0);
            write_gif(st.work / "ablated_0.gif", h.frames, 12.0);
        }
    }
    const bool b_ok = gap > 0.2;
    const bool c_ok = without_beat < with_beat;
    os << "(b) score " << fmt("%.3f", with_beat) << " gap over shuffled " << fmt("%.3f", gap) << (b_ok ? " ok" : " below target")
       << "; (c) without beat module " << fmt("%.3f", without_beat) << (c_ok ? " ok" : " not lower");
    ok = a_ok && b_ok && c_ok;
    return {ok, os.str()};
}

Outcome chunked_extension(const TrainedRun& run, const Settings& st) {
    if (!run.ok) return {false, "training failed: " + run.error};
    std::vector<double> boundary, intra;
    bool deterministic = true;
    for (int s = 0; s < st.chunk_seeds; ++s) {
        const auto& clip = run.clips[s % run.clips.size()];
        GenerateOptions opt;
        opt.K = 16;
        opt.steps = st.sample_steps;
        opt.guidance = st.guidance;
        opt.seed = 5000 + s;
        const auto g = generate_video(*run.stage2, clip.frames[0], clip.masks[0], clip.waveform, clip.caption, 32, opt);
        if (g.frames.size() != 32 || g.chunk_latents.size() != 2 || g.contexts[1].frames != 2) return {false, "wrong chunking"};
        if (s < 2) {
            const auto again =
                generate_video(*run.stage2, clip.frames[0], clip.masks[0], clip.waveform, clip.caption, 32, opt);
            for (std::size_t k = 0; k < 32; ++k) deterministic &= again.frames[k].pixels == g.frames[k].pixels;
        }
        const auto d = energy_diffs(g.frames);
        for (std::size_t k = 0; k < d.size(); ++k) {
            if (k == 15) {
                boundary.push_back(d[k]);  // frame 15 -> 16
            } else {
                intra.push_back(d[k]);
            }
        }
        if (s == 0) write_gif(st.work / "extended_0.gif", g.frames, 12.0);
    }
    std::vector<double> sorted = intra;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    const double mean_boundary = std::accumulate(boundary.begin(), boundary.end(), 0.0) / boundary.size();
    const bool ok = deterministic && mean_boundary <= 3.0 * median;
    std::ostringstream os;
    os << (deterministic ? "deterministic" : "NOT deterministic") << "; boundary diff " << fmt("%.4f", mean_boundary)
       << " vs 3 x median intra " << fmt("%.4f", 3.0 * median);
    return {ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    Settings st;
    CLI::App app{"acceptance criteria"};
    std::string work = st.work.string();
    app.add_option("--work", work, "Working directory for the dataset, checkpoints and previews");
    app.add_flag("--reuse", st.reuse, "Reuse a dataset and checkpoints already in the working directory");
    CLI11_PARSE(app, argc, argv);
    st.work = work;

    std::printf("acceptance: work dir %s\n", st.work.string().c_str());
    run_criterion(1, "diffusion math", diffusion_math);
    run_criterion(2, "gradient correctness", gradients);
    run_criterion(3, "initialization identity", init_identity);

    TrainedRun run;
    {
        const auto t0 = Clock::now();
        try {
            run = train_models(st);
        } catch (const std::exception& e) {
            run.ok = false;
            run.error = e.what();
        }
        std::printf("  training finished in %.0f s\n", seconds_since(t0));
    }
    if (st.reuse && run.ok && !run.freeze_checked) {
        report(4, "freeze contract", {false, "not measured: checkpoints were reused"}, 0);
    } else {
        run_criterion(4, "freeze contract", [&] { return freeze_contract(run, st); });
    }
    run_criterion(5, "beat pipeline", beat_pipeline);
    run_criterion(6, "metric oracles", metric_oracles);
    run_criterion(7, "end-to-end overfit", [&] { return end_to_end(run, st); });
    run_criterion(8, "chunked extension", [&] { return chunked_extension(run, st); });

    std::printf("\nsummary\n");
    std::sort(g_lines.begin(), g_lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
    int failed = 0;
    for (const auto& l : g_lines) {
        std::printf("  %d %-26s %s\n", l.id, l.name.c_str(), l.outcome.pass ? "PASS" : "FAIL");
        failed += !l.outcome.pass;
    }
    return failed == 0 ? 0 : 1;
}
