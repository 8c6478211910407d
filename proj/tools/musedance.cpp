// Command-line entry point: gen-data, extract-beats, train, sample, eval.
#include "musedance/audio.hpp"
#include "musedance/dataset.hpp"
#include "musedance/image_io.hpp"
#include "musedance/metrics.hpp"
#include "musedance/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace musedance;
using nlohmann::json;

namespace {

constexpr double kFps = 12.0;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string frame_file(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", k);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

std::vector<fs::path> frame_files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Image> read_frames(const std::vector<fs::path>& files) {
    std::vector<Image> out;
    for (const auto& f : files) out.push_back(read_png(f));
    return out;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
    int clips = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int run_gen_data(const GenDataArgs& a) {
    if (a.clips < 1) throw UsageError("--clips must be >= 1");
    const auto manifest = build_dataset(a.clips, a.seed, a.out);
    std::cout << "wrote " << manifest.entries.size() << " clips to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- extract-beats

struct BeatArgs {
    std::string audio;
    double fps = kFps;
    int frames = 0;
};

int run_extract_beats(const BeatArgs& a) {
    if (a.frames < 1) throw UsageError("--frames must be >= 1");
    if (!(a.fps > 0)) throw UsageError("--fps must be > 0");
    const auto beats = extract_beats(read_wav(a.audio), a.fps, a.frames);
    std::cout << json(beats).dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    int stage = 0;
    std::string config;
    std::string data;
    std::string out;
    std::string init;
    std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
    if (a.stage == 2 && a.init.empty()) throw UsageError("train --stage 2 needs --init <stage-1 checkpoint>");
    RunConfig cfg = read_config(a.config);
    if (cfg.train.stage != a.stage) {
        throw UsageError("--stage " + std::to_string(a.stage) + " does not match train.stage in " + a.config);
    }
    if (a.seed) cfg.train.seed = *a.seed;
    const auto clips = load_dataset(a.data);

    ModelConfig mc;
    if (!a.init.empty()) mc = checkpoint_config(a.init);
    mc.context_frames = cfg.context_frames;
    MuseDanceModel<float> model(mc, cfg.train.seed, a.stage == 2);
    if (!a.init.empty()) model.load(a.init);

    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    const fs::path steps_dir = out.string() + ".steps";
    auto log = [](const StepLog& s) { std::cout << format_step(s) << "\n" << std::flush; };
    if (a.stage == 1) {
        train_stage1(model, clips, cfg.train, log, steps_dir);
    } else {
        train_stage2(model, clips, cfg.train, log, steps_dir);
    }
    model.save(out);
    std::cerr << "checkpoint " << out.string() << " " << hex64(file_hash(out)) << "\n";
    return 0;
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
    std::string ckpt, ref, mask, audio, caption, out;
    int frames = 0;
    std::uint64_t seed = 0;
    double guidance = SampleConfig{}.guidance;
    int steps = SampleConfig{}.steps;
    int chunk = 16;
};

int run_sample(const SampleArgs& a) {
    if (a.frames < 1) throw UsageError("--frames must be >= 1");
    if (a.steps < 1) throw UsageError("--steps must be >= 1");
    if (a.chunk < 2) throw UsageError("--chunk must be >= 2");
    if (a.guidance < 0) throw UsageError("--guidance must be >= 0");
    bool temporal = false;
    const ModelConfig mc = checkpoint_config(a.ckpt, &temporal);
    if (!temporal) throw std::runtime_error("sample: " + a.ckpt + " is a stage-1 checkpoint");
    MuseDanceModel<float> model(mc, 0, true);
    model.load(a.ckpt);

    const Image ref = read_png(a.ref);
    const Image mask = read_png(a.mask);
    if (ref.channels != 3) throw std::runtime_error("sample: reference must be an RGB image");
    if (mask.channels != 1) throw std::runtime_error("sample: mask must be a grey image");
    GenerateOptions opt;
    opt.K = a.chunk;
    opt.steps = a.steps;
    opt.guidance = a.guidance;
    opt.seed = a.seed;
    opt.fps = kFps;
    const auto caption = split_tokens(a.caption);
    const auto result = generate_video(model, ref, mask, read_wav(a.audio), caption, a.frames, opt);

    const fs::path out(a.out);
    fs::create_directories(out);
    for (std::size_t k = 0; k < result.frames.size(); ++k) write_png(out / frame_file(static_cast<int>(k)), result.frames[k]);
    write_gif(out / "preview.gif", result.frames, kFps);
    json side{{"seed", a.seed},
              {"checkpoint", a.ckpt},
              {"checkpoint_hash", hex64(file_hash(a.ckpt))},
              {"reference", a.ref},
              {"mask", a.mask},
              {"audio", a.audio},
              {"caption", join_tokens(caption)},
              {"config",
               {{"frames", a.frames},
                {"fps", kFps},
                {"chunk", a.chunk},
                {"steps", a.steps},
                {"guidance", a.guidance},
                {"context_frames", mc.context_frames}}},
              {"beats", result.beats}};
    write_text(out / "sample.json", side.dump(2) + "\n");
    std::cout << "wrote " << result.frames.size() << " frames to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string pred, truth, out, ckpt;
};

std::optional<BeatVector> beats_for(const fs::path& pred_dir, const fs::path& truth_dir, int n) {
    if (fs::exists(pred_dir / "sample.json")) {
        const json side = read_json(pred_dir / "sample.json");
        if (side.contains("beats")) {
            auto b = side.at("beats").get<BeatVector>();
            if (static_cast<int>(b.size()) >= n) {
                b.resize(n);
                return b;
            }
        }
    }
    if (fs::exists(truth_dir / "audio.wav")) return extract_beats(read_wav(truth_dir / "audio.wav"), kFps, n);
    return std::nullopt;
}

json eval_clip(const fs::path& pred_dir, const fs::path& truth_dir, const MuseDanceModel<float>* model,
               const CodecConfig& codec, MetricReport& report, bool& has_beats) {
    const auto pred = read_frames(frame_files(pred_dir));
    const auto truth = read_frames(frame_files(truth_dir));
    if (pred.empty() || truth.empty()) throw std::runtime_error("eval: no frame_*.png in " + pred_dir.string() + " or " + truth_dir.string());
    const int n = static_cast<int>(std::min(pred.size(), truth.size()));
    report = MetricReport{};
    report.n_frames = n;
    for (int k = 0; k < n; ++k) {
        report.psnr_db += psnr(pred[k], truth[k]) / n;
        report.ssim += ssim(pred[k], truth[k]) / n;
    }
    std::vector<Image> p(pred.begin(), pred.begin() + n), t(truth.begin(), truth.begin() + n);
    report.frechet = frechet_distance(frame_features(p, model, codec), frame_features(t, model, codec));
    const auto beats = n >= 3 ? beats_for(pred_dir, truth_dir, n) : std::nullopt;
    has_beats = beats.has_value();
    if (beats) report.beat_alignment = beat_alignment_score(p, *beats);
    return json{{"pred", pred_dir.string()},
                {"truth", truth_dir.string()},
                {"psnr_db", finite_or_null(report.psnr_db)},
                {"psnr_infinite", std::isinf(report.psnr_db)},
                {"ssim", report.ssim},
                {"frechet", report.frechet},
                {"beat_alignment", has_beats ? json(report.beat_alignment) : json(nullptr)},
                {"n_frames", report.n_frames}};
}

int run_eval(const EvalArgs& a) {
    std::optional<MuseDanceModel<float>> model;
    const CodecConfig codec = make_codec();
    if (!a.ckpt.empty()) {
        bool temporal = false;
        const ModelConfig mc = checkpoint_config(a.ckpt, &temporal);
        model.emplace(mc, 0, temporal);
        model->load(a.ckpt);
    }
    std::vector<std::pair<fs::path, fs::path>> pairs;
    if (!frame_files(a.pred).empty()) {
        pairs.emplace_back(a.pred, a.truth);
    } else {
        if (!fs::is_directory(a.pred)) throw std::runtime_error("eval: " + a.pred + " is not a directory");
        for (const auto& e : fs::directory_iterator(a.pred)) {
            if (e.is_directory() && !frame_files(e.path()).empty()) {
                pairs.emplace_back(e.path(), fs::path(a.truth) / e.path().filename());
            }
        }
        std::sort(pairs.begin(), pairs.end());
    }
    if (pairs.empty()) throw std::runtime_error("eval: no predicted frames under " + a.pred);

    json clips = json::array();
    double psnr_sum = 0, ssim_sum = 0, fr_sum = 0, beat_sum = 0;
    int finite_psnr = 0, with_beats = 0;
    for (const auto& [p, t] : pairs) {
        MetricReport r;
        bool has_beats = false;
        clips.push_back(eval_clip(p, t, model ? &*model : nullptr, codec, r, has_beats));
        if (std::isfinite(r.psnr_db)) {
            psnr_sum += r.psnr_db;
            ++finite_psnr;
        }
        ssim_sum += r.ssim;
        fr_sum += r.frechet;
        if (has_beats) {
            beat_sum += r.beat_alignment;
            ++with_beats;
        }
    }
    const double n = static_cast<double>(pairs.size());
    json report{{"features", model ? "reference_net_mid" : "latent_mean"},
                {"clips", clips},
                {"mean",
                 {{"psnr_db", finite_psnr > 0 ? json(psnr_sum / finite_psnr) : json(nullptr)},
                  {"ssim", ssim_sum / n},
                  {"frechet", fr_sum / n},
                  {"beat_alignment", with_beats > 0 ? json(beat_sum / with_beats) : json(nullptr)},
                  {"n_clips", pairs.size()}}}};
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out, report.dump(2) + "\n");
    std::cout << report["mean"].dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Music-driven image animation toolkit"};
    app.require_subcommand(1, 1);

    GenDataArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic (video, music, caption) dataset");
    c_gen->add_option("--clips", gen.clips, "Number of clips")->required();
    c_gen->add_option("--seed", gen.seed, "Dataset seed")->required();
    c_gen->add_option("--out", gen.out, "Output directory")->required();

    BeatArgs beat;
    auto* c_beat = app.add_subcommand("extract-beats", "Print the binary beat vector of a WAV file as JSON");
    c_beat->add_option("--audio", beat.audio, "PCM16 mono 16 kHz WAV")->required();
    c_beat->add_option("--fps", beat.fps, "Video frame rate")->required();
    c_beat->add_option("--frames", beat.frames, "Number of frames")->required();

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Run stage-1 or stage-2 training");
    c_train->add_option("--stage", train.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    c_train->add_option("--config", train.config, "key = value config file")->required();
    c_train->add_option("--data", train.data, "Dataset directory with manifest.json")->required();
    c_train->add_option("--out", train.out, "Checkpoint to write")->required();
    c_train->add_option("--init", train.init, "Checkpoint to start from (required for stage 2)");
    c_train->add_option("--seed", train.seed, "Overrides train.seed");

    SampleArgs sample;
    auto* c_sample = app.add_subcommand("sample", "Generate a video from a stage-2 checkpoint");
    c_sample->add_option("--ckpt", sample.ckpt, "Stage-2 checkpoint")->required();
    c_sample->add_option("--ref", sample.ref, "Reference image (PNG)")->required();
    c_sample->add_option("--mask", sample.mask, "Reference pose mask (grey PNG)")->required();
    c_sample->add_option("--audio", sample.audio, "Music (WAV)")->required();
    c_sample->add_option("--caption", sample.caption, "Caption text")->required();
    c_sample->add_option("--frames", sample.frames, "Number of frames")->required();
    c_sample->add_option("--seed", sample.seed, "Sampling seed")->required();
    c_sample->add_option("--out", sample.out, "Output directory")->required();
    c_sample->add_option("--guidance", sample.guidance, "Classifier-free guidance scale");
    c_sample->add_option("--steps", sample.steps, "DDIM steps");
    c_sample->add_option("--chunk", sample.chunk, "Frames per chunk (K)");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Score predicted frames against ground truth");
    c_eval->add_option("--pred", ev.pred, "Predicted frame directory (or directory of clip directories)")->required();
    c_eval->add_option("--truth", ev.truth, "Ground-truth frame directory (or dataset directory)")->required();
    c_eval->add_option("--out", ev.out, "JSON report to write")->required();
    c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint whose ReferenceNet supplies Frechet features");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (c_gen->parsed()) return run_gen_data(gen);
        if (c_beat->parsed()) return run_extract_beats(beat);
        if (c_train->parsed()) return run_train(train);
        if (c_sample->parsed()) return run_sample(sample);
        if (c_eval->parsed()) return run_eval(ev);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
